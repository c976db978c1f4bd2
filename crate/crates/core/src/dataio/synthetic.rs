//! Seeded synthetic paired datasets.
//!
//! Each segment's sound is a sum of tones with random phases and jittered
//! amplitudes plus white Gaussian noise; faulty segments additionally carry an
//! impact train (decaying bursts of a carrier tone repeating at a fixed rate).
//! The vibration is a fixed FIR filter of the sound, applied circularly over
//! the segment. Tones sit on whole hertz, so a noise-free segment is exactly
//! periodic and the circular filter equals the linear one.
//!
//! The fault is part of the sound so that the vibration stays a pure function
//! of the sound; a detector can then in principle be fooled only by an
//! imperfect transformer, not by missing information.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::manifest::{format_manifest, DatasetManifest, ManifestEntry};
use crate::dataio::wav::{write_wav, WavEncoding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{Label, SegmentMeta, SegmentPair};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency_hz: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_healthy: usize,
    pub num_faulty: usize,
    pub sample_rate_hz: u32,
    pub segment_samples: usize,
    /// Tones present in every segment.
    pub base_tones: Vec<Tone>,
    /// Relative amplitude jitter applied per segment and tone.
    pub amplitude_jitter: f64,
    /// Speed settings (RPM), assigned round-robin.
    pub speeds: Vec<u32>,
    /// A tone at `speed / 60 * speed_harmonic` Hz (rounded) tracks the speed.
    pub speed_harmonic: f64,
    pub speed_tone_amplitude: f64,
    pub fault_frequency_hz: f64,
    pub fault_amplitude: f64,
    pub fault_rate_hz: f64,
    /// Decay time constant of each impact, seconds.
    pub fault_decay_s: f64,
    /// Standard deviation of the additive white noise.
    pub noise_level: f64,
    /// Ground-truth sound-to-vibration filter.
    pub fir_taps: Vec<f64>,
    pub machine: String,
    pub load: String,
    pub sensor: String,
}

/// Windowed-sinc low-pass filter with a Hamming window.
pub fn lowpass_taps(num_taps: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate_hz;
    let m = (num_taps - 1) as f64;
    let taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let x = n as f64 - m / 2.0;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos();
            sinc * w
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / gain).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_healthy: 16,
            num_faulty: 16,
            sample_rate_hz: 4096,
            segment_samples: 4096,
            base_tones: vec![
                Tone {
                    frequency_hz: 160.0,
                    amplitude: 1.0,
                },
                Tone {
                    frequency_hz: 48.0,
                    amplitude: 0.4,
                },
                Tone {
                    frequency_hz: 400.0,
                    amplitude: 0.3,
                },
                Tone {
                    frequency_hz: 1600.0,
                    amplitude: 0.3,
                },
            ],
            amplitude_jitter: 0.1,
            speeds: vec![480, 680, 1010],
            speed_harmonic: 30.0,
            speed_tone_amplitude: 0.2,
            fault_frequency_hz: 640.0,
            fault_amplitude: 0.8,
            fault_rate_hz: 32.0,
            fault_decay_s: 0.004,
            noise_level: 0.05,
            fir_taps: lowpass_taps(33, 1000.0, 4096.0),
            machine: "synthetic".into(),
            load: "0".into(),
            sensor: "s1".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_healthy + self.num_faulty == 0 {
            return Err(Error::InvalidArgument(
                "synthetic dataset needs at least one segment".into(),
            ));
        }
        if self.sample_rate_hz == 0 || self.segment_samples == 0 {
            return Err(Error::InvalidArgument(
                "sample rate and segment length must be positive".into(),
            ));
        }
        if self.speeds.is_empty() {
            return Err(Error::InvalidArgument("at least one speed is required".into()));
        }
        if self.fir_taps.is_empty() || self.fir_taps.len() > self.segment_samples {
            return Err(Error::InvalidArgument(
                "FIR length must be in 1..=segment length".into(),
            ));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::InvalidArgument("noise level must be non-negative".into()));
        }
        if self.fault_amplitude != 0.0 && !(self.fault_rate_hz > 0.0 && self.fault_decay_s > 0.0) {
            return Err(Error::InvalidArgument("fault rate and decay must be positive".into()));
        }
        Ok(())
    }

    pub fn segment_seconds(&self) -> f64 {
        self.segment_samples as f64 / self.sample_rate_hz as f64
    }
}

/// Centred circular filter, `y[n] = sum_k h[k] x[(n - k + c) mod L]` with
/// `c = (taps - 1) / 2`. A symmetric `h` therefore adds no delay.
pub fn circular_fir(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let c = (taps.len().saturating_sub(1) / 2) % n.max(1);
    (0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, &h)| h * x[(i + c + n - k % n) % n])
                .sum()
        })
        .collect()
}

/// Healthy/faulty alternate while both remain, then the rest.
fn label_sequence(h: usize, f: usize) -> Vec<Label> {
    let mut out = Vec::with_capacity(h + f);
    let (mut h, mut f) = (h, f);
    while h + f > 0 {
        if h > 0 {
            out.push(Label::Healthy);
            h -= 1;
        }
        if f > 0 {
            out.push(Label::Faulty);
            f -= 1;
        }
    }
    out
}

fn impact_train<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<f64> {
    let fs = spec.sample_rate_hz as f64;
    let n = spec.segment_samples;
    let period = fs / spec.fault_rate_hz;
    let offset = rng.random_range(0.0..period);
    let tail = (spec.fault_decay_s * fs * 8.0).ceil() as usize;
    let mut out = vec![0.0; n];
    let mut start = offset;
    while start < n as f64 {
        let s0 = start.floor() as usize;
        for i in s0..(s0 + tail).min(n) {
            let t = (i as f64 - start) / fs;
            if t >= 0.0 {
                out[i] += spec.fault_amplitude
                    * (-t / spec.fault_decay_s).exp()
                    * (2.0 * PI * spec.fault_frequency_hz * t).sin();
            }
        }
        start += period;
    }
    out
}

/// Generate all segments in memory at double precision.
pub fn synthesize_pairs(spec: &SyntheticSpec) -> Result<Vec<SegmentPair<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let fs = spec.sample_rate_hz as f64;
    let n = spec.segment_samples;
    let labels = label_sequence(spec.num_healthy, spec.num_faulty);
    let mut out = Vec::with_capacity(labels.len());
    for (idx, label) in labels.into_iter().enumerate() {
        let speed = spec.speeds[idx % spec.speeds.len()];
        let speed_hz = (speed as f64 / 60.0 * spec.speed_harmonic).round();
        let mut tones = spec.base_tones.clone();
        tones.push(Tone {
            frequency_hz: speed_hz,
            amplitude: spec.speed_tone_amplitude,
        });
        let mut sound = vec![0.0; n];
        for tone in &tones {
            let amp = tone.amplitude * (1.0 + spec.amplitude_jitter * rng.random_range(-1.0..=1.0));
            let phase = rng.random_range(0.0..2.0 * PI);
            let w = 2.0 * PI * tone.frequency_hz / fs;
            for (i, s) in sound.iter_mut().enumerate() {
                *s += amp * (w * i as f64 + phase).sin();
            }
        }
        if label == Label::Faulty && spec.fault_amplitude != 0.0 {
            for (s, f) in sound.iter_mut().zip(impact_train(spec, &mut rng)) {
                *s += f;
            }
        }
        if spec.noise_level > 0.0 {
            for s in sound.iter_mut() {
                *s += noise.sample(&mut rng);
            }
        }
        let vibration = circular_fir(&spec.fir_taps, &sound);
        out.push(SegmentPair {
            sound,
            vibration,
            label,
            meta: SegmentMeta {
                machine: spec.machine.clone(),
                speed: speed.to_string(),
                load: spec.load.clone(),
                sensor: spec.sensor.clone(),
            },
        });
    }
    Ok(out)
}

/// Segments exactly as they are stored on disk (float32), cast to `T`.
pub fn generate_synthetic_in_memory<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<SegmentPair<T>>> {
    let cast = |v: &[f64]| v.iter().map(|&x| <T as Scalar>::from_f32(x as f32)).collect();
    Ok(synthesize_pairs(spec)?
        .into_iter()
        .map(|p| SegmentPair {
            sound: cast(&p.sound),
            vibration: cast(&p.vibration),
            label: p.label,
            meta: p.meta,
        })
        .collect())
}

/// Write one float32 WAV per stream and segment plus `manifest.tsv` into
/// `out_dir`. Returns the manifest and its path.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let pairs = synthesize_pairs(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let sound = out_dir.join(format!("sound_{i:05}.wav"));
        let vibration = out_dir.join(format!("vibration_{i:05}.wav"));
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        write_wav(&sound, &f32s(&p.sound), spec.sample_rate_hz, WavEncoding::Float32)?;
        write_wav(
            &vibration,
            &f32s(&p.vibration),
            spec.sample_rate_hz,
            WavEncoding::Float32,
        )?;
        entries.push(ManifestEntry {
            row: i + 2,
            sound,
            vibration,
            label: p.label,
            meta: p.meta.clone(),
            duration_seconds: spec.segment_seconds(),
        });
    }
    let path = out_dir.join("manifest.tsv");
    fs::write(&path, format_manifest(&entries, out_dir)).map_err(|e| Error::io(&path, e))?;
    Ok((DatasetManifest { entries }, path))
}

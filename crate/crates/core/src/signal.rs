//! Segmentation, min-max normalisation, Hann windowing and the short-time
//! Fourier transform.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// A sampled recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: f64,
}

impl<T: Scalar> Signal<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("signal contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Faulty,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Faulty => "faulty",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Label::Healthy),
            "faulty" => Ok(Label::Faulty),
            other => Err(other.to_string()),
        }
    }
}

/// Free-form acquisition metadata.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub machine: String,
    pub speed: String,
    pub load: String,
    pub sensor: String,
}

/// One 1-second sound segment with its simultaneously recorded vibration.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair<T> {
    pub sound: Vec<T>,
    pub vibration: Vec<T>,
    pub label: Label,
    pub meta: SegmentMeta,
}

impl<T: Scalar> SegmentPair<T> {
    /// Normalise both streams into `[-1, 1]`. Returns the pair and whether
    /// either stream was constant.
    pub fn normalized(&self) -> Result<(SegmentPair<T>, bool)> {
        let s = normalize_segment(&self.sound)?;
        let v = normalize_segment(&self.vibration)?;
        Ok((
            SegmentPair {
                sound: s.values,
                vibration: v.values,
                label: self.label,
                meta: self.meta.clone(),
            },
            s.degenerate || v.degenerate,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSegment<T> {
    pub values: Vec<T>,
    /// The segment was constant; `values` is all zeros.
    pub degenerate: bool,
}

/// Linear min-max scaling to `[-1, 1]`: `2 (x - min) / (max - min) - 1`.
///
/// A constant segment maps to all zeros with `degenerate` set.
pub fn normalize_segment<T: Scalar>(x: &[T]) -> Result<NormalizedSegment<T>> {
    if x.is_empty() {
        return Err(Error::Empty("segment"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("segment contains non-finite samples".into()));
    }
    let (min, max) = x.iter().fold((x[0], x[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max == min {
        return Ok(NormalizedSegment {
            values: vec![T::zero(); x.len()],
            degenerate: true,
        });
    }
    let two: T = lit(2.0);
    let range = max - min;
    let values = x
        .iter()
        .map(|&v| (two * (v - min) / range - T::one()).max(-T::one()).min(T::one()))
        .collect();
    Ok(NormalizedSegment {
        values,
        degenerate: false,
    })
}

/// Contiguous windows of `seg_seconds`, advanced by `hop_seconds`; the
/// trailing partial window is dropped.
pub fn segment_signal<T: Scalar>(s: &Signal<T>, seg_seconds: f64, hop_seconds: f64) -> Result<Vec<Vec<T>>> {
    if !(seg_seconds > 0.0 && hop_seconds > 0.0) {
        return Err(Error::InvalidArgument(
            "segment and hop durations must be positive".into(),
        ));
    }
    let seg = (s.sample_rate_hz * seg_seconds).round() as usize;
    let hop = (s.sample_rate_hz * hop_seconds).round() as usize;
    if seg == 0 || hop == 0 {
        return Err(Error::InvalidArgument("segment or hop shorter than one sample".into()));
    }
    if s.samples.len() < seg {
        log::warn!(
            "signal of {} samples is shorter than one {seg}-sample segment; no segments produced",
            s.samples.len()
        );
        return Ok(Vec::new());
    }
    let count = (s.samples.len() - seg) / hop + 1;
    Ok((0..count).map(|i| s.samples[i * hop..i * hop + seg].to_vec()).collect())
}

/// Periodic (DFT-even) Hann window `0.5 (1 - cos(2 pi n / N))`.
pub fn hann_window<T: Scalar>(n: usize) -> Result<Vec<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument("window length must be >= 2".into()));
    }
    Ok((0..n)
        .map(|i| lit(0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 256,
            hop: 128,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if self.fft_size < 2 || self.hop == 0 {
            return Err(Error::InvalidArgument("FFT size must be >= 2 and hop >= 1".into()));
        }
        if len < self.fft_size {
            return Err(Error::SegmentTooShort {
                len,
                fft_size: self.fft_size,
            });
        }
        Ok((len - self.fft_size) / self.hop + 1)
    }
}

/// Complex STFT frames over the non-negative frequency bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Stft<T> {
    pub config: StftConfig,
    /// `[num_frames][N/2 + 1]`.
    pub frames: Vec<Vec<Complex<T>>>,
}

/// Frame `t` is the DFT of `window * x[t*hop .. t*hop + N]`.
pub fn stft<T: Scalar>(x: &[T], config: StftConfig) -> Result<Stft<T>> {
    let frames = config.num_frames(x.len())?;
    let n = config.fft_size;
    let window = hann_window::<T>(n)?;
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let seg = &x[t * config.hop..t * config.hop + n];
        for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(v * w, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.push(buf[..config.bins()].to_vec());
    }
    Ok(Stft { config, frames: out })
}

/// Reverse-mode companion of [`stft`]: given `dL/dRe X` and `dL/dIm X` packed
/// as `G = dRe + i dIm` per frame and bin, returns `dL/dx`.
pub fn stft_backward<T: Scalar>(len: usize, config: StftConfig, grads: &[Vec<Complex<T>>]) -> Result<Vec<T>> {
    let frames = config.num_frames(len)?;
    if grads.len() != frames || grads.iter().any(|g| g.len() != config.bins()) {
        return Err(Error::shape(
            "stft_backward",
            format!("{frames}x{}", config.bins()),
            grads.len(),
        ));
    }
    let n = config.fft_size;
    let window = hann_window::<T>(n)?;
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let zero = Complex::new(T::zero(), T::zero());
    let mut buf = vec![zero; n];
    let mut scratch = vec![zero; fft.get_inplace_scratch_len()];
    let mut dx = vec![T::zero(); len];
    for (t, g) in grads.iter().enumerate() {
        buf.iter_mut().for_each(|b| *b = zero);
        for (b, gk) in buf.iter_mut().zip(g) {
            *b = gk.conj();
        }
        // Re(sum_k conj(G_k) e^{-i 2 pi k n / N}) is dL/d(window * x)[n].
        fft.process_with_scratch(&mut buf, &mut scratch);
        let seg = &mut dx[t * config.hop..t * config.hop + n];
        for ((d, b), &w) in seg.iter_mut().zip(&buf).zip(&window) {
            *d += b.re * w;
        }
    }
    Ok(dx)
}

/// Squared-magnitude STFT.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub config: StftConfig,
    /// `[num_frames][N/2 + 1]`, all entries `>= 0`.
    pub frames: Vec<Vec<T>>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Index of the largest bin in each frame.
    pub fn peak_bins(&self) -> Vec<usize> {
        self.frames
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .fold(
                        (0, T::neg_infinity()),
                        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                    )
                    .0
            })
            .collect()
    }
}

pub fn spectrogram<T: Scalar>(x: &[T], config: StftConfig) -> Result<Spectrogram<T>> {
    let s = stft(x, config)?;
    Ok(Spectrogram {
        config,
        frames: s
            .frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm_sqr()).collect())
            .collect(),
    })
}

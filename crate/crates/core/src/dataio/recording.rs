//! Loading a single recording from WAV or single-column CSV.

use std::fs;
use std::path::Path;

use crate::dataio::wav::{read_wav, write_wav, WavEncoding};
use crate::error::{AudioError, Error, Result};
use crate::scalar::Scalar;
use crate::signal::Signal;

const RATE_KEY: &str = "sample_rate_hz";

/// Parse a CSV recording: a `sample_rate_hz=<f>` header line followed by one
/// value per line.
pub fn parse_csv<T: Scalar>(text: &str) -> Result<Signal<T>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(AudioError::MalformedCsv {
        line: 1,
        reason: format!("empty file, expected `{RATE_KEY}=<value>` header"),
    })?;
    let rate = header
        .trim()
        .strip_prefix(RATE_KEY)
        .and_then(|r| r.trim_start().strip_prefix('='))
        .ok_or_else(|| AudioError::MalformedCsv {
            line: 1,
            reason: format!("expected `{RATE_KEY}=<value>` header, found `{}`", header.trim()),
        })?;
    let rate: f64 = rate.trim().parse().map_err(|_| AudioError::MalformedCsv {
        line: 1,
        reason: format!("{RATE_KEY} value `{}` is not a number", rate.trim()),
    })?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(AudioError::SampleRate(rate).into());
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.contains(',') {
            return Err(AudioError::MalformedCsv {
                line: i + 1,
                reason: "expected a single column".into(),
            }
            .into());
        }
        let v: f64 = t.parse().map_err(|_| AudioError::MalformedCsv {
            line: i + 1,
            reason: format!("sample `{t}` is not a number"),
        })?;
        samples.push(T::from_f64_lossy(v));
    }
    Signal::new(samples, rate)
}

pub fn format_csv<T: Scalar>(signal: &Signal<T>) -> String {
    let mut s = format!("{RATE_KEY}={}\n", signal.sample_rate_hz);
    for v in &signal.samples {
        s.push_str(&format!("{v}\n"));
    }
    s
}

/// Load a `.wav` or `.csv` recording.
pub fn load_recording<T: Scalar>(path: &Path) -> Result<Signal<T>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("wav") | Some("wave") => {
            let w = read_wav(path)?;
            Signal::new(
                w.samples.into_iter().map(<T as Scalar>::from_f32).collect(),
                w.sample_rate_hz as f64,
            )
        }
        Some("csv") => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text)
        }
        _ => Err(AudioError::UnknownExtension(path.to_path_buf()).into()),
    }
}

/// Write a float32 WAV; the sample rate must be a whole number of hertz.
pub fn save_recording<T: Scalar>(path: &Path, signal: &Signal<T>) -> Result<()> {
    let rate = signal.sample_rate_hz;
    if rate.fract() != 0.0 || rate <= 0.0 || rate > u32::MAX as f64 {
        return Err(AudioError::SampleRate(rate).into());
    }
    let samples: Vec<f32> = signal.samples.iter().map(|v| v.to_f32_lossy()).collect();
    write_wav(path, &samples, rate as u32, WavEncoding::Float32)
}

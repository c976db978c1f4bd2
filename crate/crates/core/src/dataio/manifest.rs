//! Tab-separated dataset manifest.
//!
//! One row per paired recording:
//!
//! ```text
//! sound  vibration  label  machine  speed  load  sensor  duration
//! ```
//!
//! Paths are relative to the manifest's directory. Blank lines and lines
//! starting with `#` are ignored, as is a header row whose first field is
//! `sound`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::recording::load_recording;
use crate::error::{Error, ManifestError, Result};
use crate::scalar::Scalar;
use crate::signal::{segment_signal, Label, SegmentMeta, SegmentPair, Signal};

pub const FIELDS: [&str; 8] = [
    "sound",
    "vibration",
    "label",
    "machine",
    "speed",
    "load",
    "sensor",
    "duration",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// 1-based line number in the manifest file.
    pub row: usize,
    /// Resolved path of the sound recording.
    pub sound: PathBuf,
    pub vibration: PathBuf,
    pub label: Label,
    pub meta: SegmentMeta,
    pub duration_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

fn numeric(row: usize, field: &'static str, value: &str) -> Result<f64, ManifestError> {
    value.trim().parse::<f64>().map_err(|_| ManifestError::NotNumeric {
        row,
        field,
        value: value.to_string(),
    })
}

/// Parse manifest text; `base` resolves relative paths. File existence is not
/// checked here.
pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let t = line.trim_end_matches(['\r', '\n']);
        if t.trim().is_empty() || t.trim_start().starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split('\t').collect();
        if f.len() != FIELDS.len() {
            return Err(ManifestError::FieldCount { row, found: f.len() }.into());
        }
        if entries.is_empty() && f[0].trim() == "sound" && f[2].trim() == "label" {
            continue;
        }
        let label: Label = f[2].parse().map_err(|_| ManifestError::Label {
            row,
            label: f[2].to_string(),
        })?;
        numeric(row, "speed", f[4])?;
        let duration_seconds = numeric(row, "duration", f[7])?;
        entries.push(ManifestEntry {
            row,
            sound: base.join(f[0].trim()),
            vibration: base.join(f[1].trim()),
            label,
            meta: SegmentMeta {
                machine: f[3].trim().to_string(),
                speed: f[4].trim().to_string(),
                load: f[5].trim().to_string(),
                sensor: f[6].trim().to_string(),
            },
            duration_seconds,
        });
    }
    Ok(DatasetManifest { entries })
}

/// Read and validate a manifest, including existence of every referenced
/// file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let m = parse_manifest(&text, base)?;
    for e in &m.entries {
        for p in [&e.sound, &e.vibration] {
            if !p.is_file() {
                return Err(ManifestError::MissingFile {
                    row: e.row,
                    path: p.clone(),
                }
                .into());
            }
        }
    }
    Ok(m)
}

/// Render entries as manifest text with paths relative to `base`.
pub fn format_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/");
    let mut s = format!("{}\n", FIELDS.join("\t"));
    for e in entries {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            rel(&e.sound),
            rel(&e.vibration),
            e.label,
            e.meta.machine,
            e.meta.speed,
            e.meta.load,
            e.meta.sensor,
            e.duration_seconds
        );
    }
    s
}

/// A loaded sound/vibration recording pair of equal length and rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingPair<T> {
    pub sound: Signal<T>,
    pub vibration: Signal<T>,
    pub label: Label,
    pub meta: SegmentMeta,
    /// Samples dropped from the longer stream.
    pub truncated: usize,
}

pub fn load_pair<T: Scalar>(entry: &ManifestEntry) -> Result<RecordingPair<T>> {
    let row = entry.row;
    let mut sound: Signal<T> = load_recording(&entry.sound)?;
    let mut vibration: Signal<T> = load_recording(&entry.vibration)?;
    if sound.sample_rate_hz != vibration.sample_rate_hz {
        return Err(ManifestError::SampleRateMismatch {
            row,
            sound: sound.sample_rate_hz,
            vibration: vibration.sample_rate_hz,
        }
        .into());
    }
    let (ls, lv) = (sound.samples.len(), vibration.samples.len());
    let n = ls.min(lv);
    if ls != lv {
        log::warn!("manifest row {row}: sound has {ls} samples, vibration {lv}; truncating both to {n}");
        sound.samples.truncate(n);
        vibration.samples.truncate(n);
    }
    Ok(RecordingPair {
        sound,
        vibration,
        label: entry.label,
        meta: entry.meta.clone(),
        truncated: ls.max(lv) - n,
    })
}

/// Load every pair of a manifest, in row order.
pub fn load_dataset<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<RecordingPair<T>>> {
    manifest.entries.iter().map(load_pair).collect()
}

/// Cut each pair into aligned `seg_seconds` segments (not normalised).
/// Returns the segments and the common sample rate.
pub fn segment_dataset<T: Scalar>(pairs: &[RecordingPair<T>], seg_seconds: f64) -> Result<(Vec<SegmentPair<T>>, f64)> {
    let rate = match pairs.first() {
        Some(p) => p.sound.sample_rate_hz,
        None => return Err(Error::Empty("dataset")),
    };
    let mut out = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.sound.sample_rate_hz != rate {
            return Err(Error::Config(format!(
                "pair {} has sample rate {} Hz, dataset uses {rate} Hz",
                i + 1,
                p.sound.sample_rate_hz
            )));
        }
        let s = segment_signal(&p.sound, seg_seconds, seg_seconds)?;
        let v = segment_signal(&p.vibration, seg_seconds, seg_seconds)?;
        out.extend(s.into_iter().zip(v).map(|(sound, vibration)| SegmentPair {
            sound,
            vibration,
            label: p.label,
            meta: p.meta.clone(),
        }));
    }
    Ok((out, rate))
}

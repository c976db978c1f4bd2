use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("segment shorter than FFT size ({len} < {fft_size})")]
    SegmentTooShort { len: usize, fft_size: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("held-out speed {requested} not present; available speeds: {available:?}")]
    UnknownSpeed { requested: String, available: Vec<String> },

    #[error("training set contains a single class ({0}); classifier undefined")]
    SingleClass(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Audio(#[from] AudioError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("descriptor is not valid: {0}")]
    Descriptor(String),
    #[error("payload size mismatch: descriptor demands {expected} values, file holds {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: String, found: String },
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file: {0}")]
    NotWave(&'static str),
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("unsupported encoding: format tag {format_tag}, {bits_per_sample} bits per sample")]
    UnsupportedEncoding { format_tag: u16, bits_per_sample: u16 },
    #[error("mono required, file has {channels} channels")]
    MonoRequired { channels: u16 },
    #[error("invalid sample rate {0}")]
    SampleRate(f64),
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("unrecognised recording extension for {0}")]
    UnknownExtension(PathBuf),
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest row {row}: expected 8 tab-separated fields, found {found}")]
    FieldCount { row: usize, found: usize },
    #[error("manifest row {row}: file {path} does not exist")]
    MissingFile { row: usize, path: PathBuf },
    #[error("manifest row {row}: label `{label}` is not one of healthy|faulty")]
    Label { row: usize, label: String },
    #[error("manifest row {row}: {field} `{value}` is not numeric")]
    NotNumeric {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("manifest row {row}: sample rates differ ({sound} Hz vs {vibration} Hz)")]
    SampleRateMismatch { row: usize, sound: f64, vibration: f64 },
}

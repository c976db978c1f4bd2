//! Binary checkpoint files.
//!
//! ```text
//! "OPVB" | version u32 LE | descriptor length u32 LE | descriptor (JSON)
//!        | parameters as f32 LE, descriptor order | CRC32 u32 LE
//! ```
//!
//! The CRC covers every byte before it. Loading checks, in order: magic,
//! version, descriptor framing, payload size against the descriptor, CRC.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::models::classifier::{ClassifierConfig, FaultClassifier};
use crate::models::opunet::{OpUNet, OpUNetConfig};
use crate::models::Model;
use crate::numeric::tensor::Tensor;
use crate::scalar::Scalar;
use crate::selfonn::OperationalLayerConfig;

pub const MAGIC: &[u8; 4] = b"OPVB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Transformer(OpUNetConfig),
    Classifier(ClassifierConfig),
}

impl Architecture {
    pub fn kind(&self) -> &'static str {
        match self {
            Architecture::Transformer(_) => "transformer",
            Architecture::Classifier(_) => "classifier",
        }
    }

    pub fn layer_configs(&self) -> Vec<OperationalLayerConfig> {
        match self {
            Architecture::Transformer(c) => c.layer_configs(),
            Architecture::Classifier(c) => c.layer_configs(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub seed: u64,
    pub iteration: u64,
    /// Absent when no validation pass has run.
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub format_version: u32,
    pub sample_rate_hz: f64,
    pub architecture: Architecture,
    pub operational_layers: Vec<OperationalLayerConfig>,
    pub parameter_shapes: Vec<Vec<usize>>,
    pub parameter_count: usize,
    pub metadata: CheckpointMetadata,
}

impl ModelDescriptor {
    pub fn payload_len(&self) -> usize {
        self.parameter_shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Models that can be written to and rebuilt from a checkpoint.
pub trait Checkpointable<T: Scalar>: Model<T> + Sized {
    fn architecture(&self) -> Architecture;

    fn from_architecture(arch: &Architecture) -> Result<Self>;
}

impl<T: Scalar> Checkpointable<T> for OpUNet<T> {
    fn architecture(&self) -> Architecture {
        Architecture::Transformer(self.config().clone())
    }

    fn from_architecture(arch: &Architecture) -> Result<Self> {
        match arch {
            Architecture::Transformer(c) => OpUNet::zeros(c.clone()),
            other => Err(wrong_kind("transformer", other.kind())),
        }
    }
}

impl<T: Scalar> Checkpointable<T> for FaultClassifier<T> {
    fn architecture(&self) -> Architecture {
        Architecture::Classifier(self.config().clone())
    }

    fn from_architecture(arch: &Architecture) -> Result<Self> {
        match arch {
            Architecture::Classifier(c) => FaultClassifier::zeros(c.clone()),
            other => Err(wrong_kind("classifier", other.kind())),
        }
    }
}

fn wrong_kind(expected: &str, found: &str) -> Error {
    CheckpointError::WrongKind {
        expected: expected.into(),
        found: found.into(),
    }
    .into()
}

pub fn describe<T: Scalar, M: Checkpointable<T>>(
    model: &M,
    sample_rate_hz: f64,
    metadata: CheckpointMetadata,
) -> ModelDescriptor {
    let arch = model.architecture();
    ModelDescriptor {
        format_version: FORMAT_VERSION,
        sample_rate_hz,
        operational_layers: arch.layer_configs(),
        architecture: arch,
        parameter_shapes: model.parameters().iter().map(|p| p.shape().to_vec()).collect(),
        parameter_count: model.parameter_count(),
        metadata,
    }
}

pub fn encode_checkpoint<T: Scalar, M: Checkpointable<T>>(
    model: &M,
    sample_rate_hz: f64,
    metadata: CheckpointMetadata,
) -> Result<Vec<u8>> {
    let desc = describe(model, sample_rate_hz, metadata);
    let json = serde_json::to_vec(&desc).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * desc.payload_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.parameters() {
        for &v in p.data() {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parsed checkpoint: descriptor plus parameter tensors in descriptor order.
#[derive(Clone, Debug)]
pub struct DecodedCheckpoint<T> {
    pub descriptor: ModelDescriptor,
    pub parameters: Vec<Tensor<T>>,
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<DecodedCheckpoint<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::NotACheckpoint.into());
    }
    let version = read_u32(bytes, 4).ok_or(CheckpointError::Truncated("header"))?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let desc_len = read_u32(bytes, 8).ok_or(CheckpointError::Truncated("header"))? as usize;
    let desc_bytes = bytes
        .get(12..12 + desc_len)
        .ok_or(CheckpointError::Truncated("descriptor"))?;
    let descriptor: ModelDescriptor =
        serde_json::from_slice(desc_bytes).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    let body = &bytes[12 + desc_len..];
    let expected = descriptor.payload_len();
    let found = body.len().saturating_sub(4) / 4;
    if body.len() < 4 || (body.len() - 4) % 4 != 0 || found != expected {
        return Err(CheckpointError::SizeMismatch { expected, found }.into());
    }
    let crc_at = bytes.len() - 4;
    let stored = read_u32(bytes, crc_at).unwrap();
    let computed = crc32fast::hash(&bytes[..crc_at]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed }.into());
    }
    let mut values = body[..body.len() - 4]
        .chunks_exact(4)
        .map(|c| <T as Scalar>::from_f32(f32::from_le_bytes(c.try_into().unwrap())));
    let parameters = descriptor
        .parameter_shapes
        .iter()
        .map(|shape| {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), values.by_ref().take(n).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DecodedCheckpoint { descriptor, parameters })
}

/// Rebuild a specific model type from checkpoint bytes.
pub fn model_from_bytes<T: Scalar, M: Checkpointable<T>>(bytes: &[u8]) -> Result<(M, ModelDescriptor)> {
    let decoded = decode_checkpoint::<T>(bytes)?;
    let mut model = M::from_architecture(&decoded.descriptor.architecture)?;
    model
        .set_parameters(&decoded.parameters)
        .map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    Ok((model, decoded.descriptor))
}

pub fn save_checkpoint<T: Scalar, M: Checkpointable<T>>(
    model: &M,
    path: impl AsRef<Path>,
    sample_rate_hz: f64,
    metadata: CheckpointMetadata,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, sample_rate_hz, metadata)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Either model kind, as found in a checkpoint file.
#[derive(Clone, Debug)]
pub enum LoadedModel<T> {
    Transformer(OpUNet<T>, ModelDescriptor),
    Classifier(FaultClassifier<T>, ModelDescriptor),
}

impl<T: Scalar> LoadedModel<T> {
    pub fn descriptor(&self) -> &ModelDescriptor {
        match self {
            LoadedModel::Transformer(_, d) | LoadedModel::Classifier(_, d) => d,
        }
    }
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<LoadedModel<T>> {
    let bytes = read(path.as_ref())?;
    let decoded = decode_checkpoint::<T>(&bytes)?;
    Ok(match &decoded.descriptor.architecture {
        Architecture::Transformer(_) => {
            let (m, d) = model_from_bytes::<T, OpUNet<T>>(&bytes)?;
            LoadedModel::Transformer(m, d)
        }
        Architecture::Classifier(_) => {
            let (m, d) = model_from_bytes::<T, FaultClassifier<T>>(&bytes)?;
            LoadedModel::Classifier(m, d)
        }
    })
}

pub fn load_transformer<T: Scalar>(path: impl AsRef<Path>) -> Result<(OpUNet<T>, ModelDescriptor)> {
    model_from_bytes::<T, OpUNet<T>>(&read(path.as_ref())?)
}

pub fn load_classifier<T: Scalar>(path: impl AsRef<Path>) -> Result<(FaultClassifier<T>, ModelDescriptor)> {
    model_from_bytes::<T, FaultClassifier<T>>(&read(path.as_ref())?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::FeatureMap;

    fn small_unet() -> OpUNet<f32> {
        OpUNet::new(OpUNetConfig::default().with_segment_length(64), 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = small_unet();
        let bytes = encode_checkpoint(&net, 4096.0, CheckpointMetadata::default()).unwrap();
        let (back, desc) = model_from_bytes::<f32, OpUNet<f32>>(&bytes).unwrap();
        assert_eq!(desc.parameter_count, net.parameter_count());
        let x = FeatureMap::from_signal(&(0..64).map(|i| (i as f32 * 0.3).cos() * 0.5).collect::<Vec<_>>()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn errors_are_distinct() {
        let net = small_unet();
        let bytes = encode_checkpoint(&net, 4096.0, CheckpointMetadata::default()).unwrap();
        let check = |b: &[u8]| decode_checkpoint::<f32>(b).unwrap_err();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            check(&bad),
            Error::Checkpoint(CheckpointError::NotACheckpoint)
        ));

        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            check(&bad),
            Error::Checkpoint(CheckpointError::Version { found: 7, .. })
        ));

        assert!(matches!(
            check(&bytes[..20]),
            Error::Checkpoint(CheckpointError::Truncated(_))
        ));

        let short = &bytes[..bytes.len() - 40];
        assert!(matches!(
            check(short),
            Error::Checkpoint(CheckpointError::SizeMismatch { .. })
        ));

        let mut bad = bytes.clone();
        let mid = bytes.len() - 100;
        bad[mid] ^= 0x10;
        assert!(matches!(
            check(&bad),
            Error::Checkpoint(CheckpointError::Checksum { .. })
        ));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let bytes = encode_checkpoint(&small_unet(), 4096.0, CheckpointMetadata::default()).unwrap();
        let err = model_from_bytes::<f32, FaultClassifier<f32>>(&bytes).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::WrongKind { .. })));
    }
}

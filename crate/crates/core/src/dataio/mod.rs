//! Recording readers, dataset manifests and the synthetic dataset generator.

pub mod manifest;
pub mod recording;
pub mod synthetic;
pub mod wav;

pub use manifest::{load_dataset, load_manifest, segment_dataset, DatasetManifest, ManifestEntry, RecordingPair};
pub use recording::{load_recording, save_recording};
pub use synthetic::{generate_synthetic, generate_synthetic_in_memory, synthesize_pairs, SyntheticSpec};

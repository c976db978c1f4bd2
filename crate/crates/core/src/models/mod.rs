//! The Op-UNet sound-to-vibration transformer, the Self-ONN fault detector,
//! parameter accounting and checkpoint files.

pub mod checkpoint;
pub mod classifier;
pub mod opunet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::autodiff::{dense_forward, Tape, Var};
use crate::numeric::tensor::{FeatureMap, Tensor};
use crate::scalar::{lit, Scalar};

pub use checkpoint::{
    load_checkpoint, load_classifier, load_transformer, save_checkpoint, Architecture, CheckpointMetadata, LoadedModel,
    ModelDescriptor,
};
pub use classifier::{classifier_forward, predicted_label, target_scores, ClassifierConfig, FaultClassifier};
pub use opunet::{OpUNet, OpUNetConfig};

/// Behaviour shared by both networks.
pub trait Model<T: Scalar> {
    /// Parameters in canonical (checkpoint) order: per layer, weights then biases.
    fn parameters(&self) -> Vec<&Tensor<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;

    /// Sum of `out*in*K*Q + out` over operational layers and `out*in + out`
    /// over dense layers.
    fn parameter_count(&self) -> usize;

    fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>>;

    /// Same computation recorded on a tape; `params` are the tape variables of
    /// [`Model::parameters`], in order.
    fn forward_tape(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var>;

    /// Register the parameters on a tape as differentiable leaves.
    fn bind_params(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.parameters().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Register the parameters on a tape as constants (frozen model).
    fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect()
    }

    fn set_parameters(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut slots = self.parameters_mut();
        if slots.len() != values.len() {
            return Err(Error::shape("set_parameters", slots.len(), values.len()));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::shape(
                    "set_parameters",
                    format!("{:?}", slot.shape()),
                    format!("{:?}", v.shape()),
                ));
            }
            slot.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }
}

/// Convenience free function mirroring [`Model::parameter_count`].
pub fn parameter_count<T: Scalar, M: Model<T>>(model: &M) -> usize {
    model.parameter_count()
}

/// Fully connected layer over a flattened input.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`.
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: Tensor::zeros(vec![outputs, inputs]),
            biases: Tensor::zeros(vec![outputs]),
        }
    }

    /// Uniform `[-s, s]` weights with `s = 1/sqrt(in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(inputs, outputs);
        let s = 1.0 / (inputs as f64).sqrt();
        for w in l.weights.data_mut() {
            *w = lit(rng.random_range(-s..=s));
        }
        l
    }

    pub fn parameter_count(&self) -> usize {
        self.outputs * self.inputs + self.outputs
    }

    /// `tanh(W x + b)` over the flattened map; returns an `out x 1` map.
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if x.values().len() != self.inputs {
            return Err(Error::shape(
                "dense",
                format!("{} inputs", self.inputs),
                x.values().len(),
            ));
        }
        let mut y = vec![T::zero(); self.outputs];
        dense_forward(self.weights.data(), x.values(), self.outputs, self.inputs, &mut y);
        for (v, &b) in y.iter_mut().zip(self.biases.data()) {
            *v = (*v + b).tanh();
        }
        FeatureMap::new(self.outputs, 1, y)
    }

    pub fn forward_tape(&self, tape: &mut Tape<T>, x: Var, weights: Var, biases: Var) -> Result<Var> {
        let y = tape.dense(x, weights, Some(biases))?;
        tape.tanh(y)
    }
}

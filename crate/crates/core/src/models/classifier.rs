//! Self-ONN fault detector: five strided operational layers, flatten, two
//! dense layers. Output scores use healthy=(+1,-1), faulty=(-1,+1).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DenseLayer, Model};
use crate::numeric::autodiff::{Tape, Var};
use crate::numeric::tensor::{FeatureMap, Tensor};
use crate::scalar::Scalar;
use crate::selfonn::{Activation, GenerativeLayerParams, OperationalLayer, OperationalLayerConfig};
use crate::signal::Label;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub segment_length: usize,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub channels: usize,
    pub hidden_dense: usize,
    pub q_order: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            segment_length: 4096,
            kernels: vec![81, 41, 21, 7, 7],
            strides: vec![8, 4, 2, 2, 2],
            channels: 16,
            hidden_dense: 32,
            q_order: 3,
        }
    }
}

impl ClassifierConfig {
    pub fn with_segment_length(mut self, len: usize) -> Self {
        self.segment_length = len;
        self
    }

    pub fn layer_configs(&self) -> Vec<OperationalLayerConfig> {
        self.kernels
            .iter()
            .zip(&self.strides)
            .enumerate()
            .map(|(i, (&k, &s))| OperationalLayerConfig {
                in_channels: if i == 0 { 1 } else { self.channels },
                out_channels: self.channels,
                kernel: k,
                q_order: self.q_order,
                stride: s,
                padding: k.saturating_sub(1) / 2,
                transposed: false,
                activation: Activation::Tanh,
            })
            .collect()
    }

    /// Length of the last operational feature map for the configured segment.
    pub fn final_length(&self) -> Result<usize> {
        let mut len = self.segment_length;
        for l in self.layer_configs() {
            l.validate()?;
            len = l.output_len(len).map_err(|_| {
                Error::Config(format!(
                    "segment length {} too short for the classifier stride chain",
                    self.segment_length
                ))
            })?;
        }
        Ok(len)
    }

    /// Width of the first dense layer (flattened operational output).
    pub fn flatten_width(&self) -> Result<usize> {
        Ok(self.channels * self.final_length()?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != self.strides.len() || self.kernels.is_empty() {
            return Err(Error::Config(
                "classifier kernels and strides must be equally long".into(),
            ));
        }
        if self.channels == 0 || self.hidden_dense == 0 {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        let stride_product: usize = self.strides.iter().product();
        if self.segment_length % stride_product != 0 {
            return Err(Error::Config(format!(
                "segment length {} must be a multiple of the classifier stride product {stride_product}",
                self.segment_length
            )));
        }
        let fl = self.final_length()?;
        if fl * stride_product != self.segment_length {
            return Err(Error::Config(format!(
                "classifier stride chain maps {} samples to {fl}, expected {}",
                self.segment_length,
                self.segment_length / stride_product
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let ops: usize = self
            .layer_configs()
            .iter()
            .map(OperationalLayerConfig::parameter_count)
            .sum();
        let flat = self.flatten_width().unwrap_or(0);
        ops + self.hidden_dense * flat + self.hidden_dense + 2 * self.hidden_dense + 2
    }

    pub fn describe(&self) -> String {
        let flat = self.flatten_width().unwrap_or(0);
        format!(
            "Self-ONN classifier: segment {} samples, Q={}, kernels {:?}, strides {:?}, {} channels, dense {} -> {} -> 2, total parameters: {}",
            self.segment_length,
            self.q_order,
            self.kernels,
            self.strides,
            self.channels,
            flat,
            self.hidden_dense,
            self.parameter_count()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultClassifier<T> {
    config: ClassifierConfig,
    layers: Vec<OperationalLayer<T>>,
    hidden: DenseLayer<T>,
    output: DenseLayer<T>,
}

impl<T: Scalar> FaultClassifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_configs()
            .into_iter()
            .map(|c| OperationalLayer::init(c, &mut rng))
            .collect::<Result<_>>()?;
        let hidden = DenseLayer::init(config.flatten_width()?, config.hidden_dense, &mut rng);
        let output = DenseLayer::init(config.hidden_dense, 2, &mut rng);
        Ok(Self {
            config,
            layers,
            hidden,
            output,
        })
    }

    pub fn zeros(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_configs()
            .into_iter()
            .map(|c| {
                let p = GenerativeLayerParams::zeros(&c);
                OperationalLayer::new(c, p)
            })
            .collect::<Result<_>>()?;
        let hidden = DenseLayer::zeros(config.flatten_width()?, config.hidden_dense);
        let output = DenseLayer::zeros(config.hidden_dense, 2);
        Ok(Self {
            config,
            layers,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn scores(&self, vib: &[T]) -> Result<[T; 2]> {
        let out = self.forward(&FeatureMap::from_signal(vib)?)?;
        Ok([out.values()[0], out.values()[1]])
    }

    pub fn predict(&self, vib: &[T]) -> Result<Label> {
        Ok(predicted_label(self.scores(vib)?))
    }
}

/// Argmax of the two scores; ties go to healthy.
pub fn predicted_label<T: Scalar>(scores: [T; 2]) -> Label {
    if scores[1] > scores[0] {
        Label::Faulty
    } else {
        Label::Healthy
    }
}

/// Target score vector of a label.
pub fn target_scores<T: Scalar>(label: Label) -> [T; 2] {
    match label {
        Label::Healthy => [T::one(), -T::one()],
        Label::Faulty => [-T::one(), T::one()],
    }
}

pub fn classifier_forward<T: Scalar>(vib: &FeatureMap<T>, model: &FaultClassifier<T>) -> Result<[T; 2]> {
    let out = model.forward(vib)?;
    Ok([out.values()[0], out.values()[1]])
}

impl<T: Scalar> Model<T> for FaultClassifier<T> {
    fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut p: Vec<&Tensor<T>> = self
            .layers
            .iter()
            .flat_map(|l| [&l.params.weights, &l.params.biases])
            .collect();
        p.extend([
            &self.hidden.weights,
            &self.hidden.biases,
            &self.output.weights,
            &self.output.biases,
        ]);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p: Vec<&mut Tensor<T>> = self
            .layers
            .iter_mut()
            .flat_map(|l| {
                let p = &mut l.params;
                [&mut p.weights, &mut p.biases]
            })
            .collect();
        p.extend([
            &mut self.hidden.weights,
            &mut self.hidden.biases,
            &mut self.output.weights,
            &mut self.output.biases,
        ]);
        p
    }

    fn parameter_count(&self) -> usize {
        self.layers.iter().map(OperationalLayer::parameter_count).sum::<usize>()
            + self.hidden.parameter_count()
            + self.output.parameter_count()
    }

    fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if x.channels() != 1 || x.length() != self.config.segment_length {
            return Err(Error::Config(format!(
                "classifier built for 1x{} input, got {}",
                self.config.segment_length,
                x.shape_str()
            )));
        }
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        let h = self.hidden.forward(&h)?;
        self.output.forward(&h)
    }

    fn forward_tape(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let n = 2 * self.layers.len() + 4;
        if params.len() != n {
            return Err(Error::shape("FaultClassifier::forward_tape", n, params.len()));
        }
        if tape.value(x)?.len() != self.config.segment_length {
            return Err(Error::Config(format!(
                "classifier built for 1x{} input, got {:?}",
                self.config.segment_length,
                tape.value(x)?.shape()
            )));
        }
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward_tape(tape, h, params[2 * i], params[2 * i + 1])?;
        }
        let k = 2 * self.layers.len();
        let h = self.hidden.forward_tape(tape, h, params[k], params[k + 1])?;
        self.output.forward_tape(tape, h, params[k + 2], params[k + 3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stride_chain_flattens_to_256() {
        let cfg = ClassifierConfig::default();
        assert_eq!(cfg.final_length().unwrap(), 16);
        assert_eq!(cfg.flatten_width().unwrap(), 256);
        assert_eq!(cfg.parameter_count(), 3904 + 31504 + 16144 + 5392 + 5392 + 8224 + 66);
    }

    #[test]
    fn output_is_two_scores_in_open_interval() {
        let net = FaultClassifier::<f32>::new(ClassifierConfig::default(), 3).unwrap();
        let x: Vec<f32> = (0..4096).map(|i| (i as f32 * 0.1).sin()).collect();
        let s = net.scores(&x).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1.0));
        assert_eq!(net.parameter_count(), net.config().parameter_count());
    }

    #[test]
    fn argmax_ignores_common_offset() {
        for s in [[0.2f64, -0.1], [-0.4, 0.3], [0.0, 0.0]] {
            let shifted = [s[0] + 0.7, s[1] + 0.7];
            assert_eq!(predicted_label(s), predicted_label(shifted));
        }
    }

    #[test]
    fn wrong_length_is_config_error() {
        let net = FaultClassifier::<f32>::new(ClassifierConfig::default(), 3).unwrap();
        assert!(matches!(net.scores(&[0.0; 2048]), Err(Error::Config(_))));
        assert!(ClassifierConfig::default()
            .with_segment_length(1000)
            .validate()
            .is_err());
    }
}

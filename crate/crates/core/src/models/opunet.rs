//! 1D Operational U-Net: five strided operational encoder layers, five
//! transposed operational decoder layers, channel-concatenated skips.
//!
//! ```text
//! x ─ e1 ─ e2 ─ e3 ─ e4 ─ e5
//!     │    │    │    │    └─ d0 ─┐
//!     │    │    │    └──────── [d0|e4] ─ d1 ─┐
//!     │    │    └──────────────────── [d1|e3] ─ d2 ─┐
//!     │    └─────────────────────────────── [d2|e2] ─ d3 ─┐
//!     └────────────────────────────────────────── [d3|e1] ─ d4 ─ y
//! ```
//!
//! Decoder stage `d` (0-based) consumes the concatenation of the previous
//! decoder output with encoder stage `5 - d`; stage 0 sees the bottleneck
//! alone. Every layer ends in `tanh`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numeric::autodiff::{Tape, Var};
use crate::numeric::tensor::{FeatureMap, Tensor};
use crate::scalar::Scalar;
use crate::selfonn::{Activation, GenerativeLayerParams, OperationalLayer, OperationalLayerConfig};

pub const STAGES: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpUNetConfig {
    pub segment_length: usize,
    pub channels: [usize; STAGES],
    pub encoder_kernel: usize,
    pub encoder_padding: usize,
    pub decoder_kernel: usize,
    pub decoder_padding: usize,
    pub stride: usize,
    pub q_order: usize,
}

impl Default for OpUNetConfig {
    fn default() -> Self {
        Self {
            segment_length: 4096,
            channels: [8, 16, 32, 64, 128],
            encoder_kernel: 7,
            encoder_padding: 3,
            decoder_kernel: 4,
            decoder_padding: 1,
            stride: 2,
            q_order: 3,
        }
    }
}

impl OpUNetConfig {
    pub fn with_segment_length(mut self, len: usize) -> Self {
        self.segment_length = len;
        self
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q_order = q;
        self
    }

    pub fn stride_product(&self) -> usize {
        self.stride.pow(STAGES as u32)
    }

    /// The ten layer configurations, encoder first.
    pub fn layer_configs(&self) -> Vec<OperationalLayerConfig> {
        let c = self.channels;
        let layer = |i, o, k, p, t| OperationalLayerConfig {
            in_channels: i,
            out_channels: o,
            kernel: k,
            q_order: self.q_order,
            stride: self.stride,
            padding: p,
            transposed: t,
            activation: Activation::Tanh,
        };
        let mut layers = Vec::with_capacity(2 * STAGES);
        for s in 0..STAGES {
            let input = if s == 0 { 1 } else { c[s - 1] };
            layers.push(layer(input, c[s], self.encoder_kernel, self.encoder_padding, false));
        }
        for d in 0..STAGES {
            let input = if d == 0 { c[STAGES - 1] } else { 2 * c[STAGES - 1 - d] };
            let output = if d == STAGES - 1 { 1 } else { c[STAGES - 2 - d] };
            layers.push(layer(input, output, self.decoder_kernel, self.decoder_padding, true));
        }
        layers
    }

    /// Check that every stage halves/doubles lengths exactly so the network is
    /// length preserving for this segment length.
    pub fn validate(&self) -> Result<()> {
        if self.segment_length == 0 || self.segment_length % self.stride_product() != 0 {
            return Err(Error::Config(format!(
                "segment length {} must be a positive multiple of the encoder stride product {}",
                self.segment_length,
                self.stride_product()
            )));
        }
        let layers = self.layer_configs();
        let mut len = self.segment_length;
        let mut enc_lens = Vec::with_capacity(STAGES);
        for l in &layers[..STAGES] {
            l.validate()?;
            let next = l.output_len(len)?;
            if next * self.stride != len {
                return Err(Error::Config(format!(
                    "encoder layer maps length {len} to {next}, expected {}",
                    len / self.stride
                )));
            }
            len = next;
            enc_lens.push(len);
        }
        for (d, l) in layers[STAGES..].iter().enumerate() {
            l.validate()?;
            let next = l.output_len(len)?;
            let want = if d == STAGES - 1 {
                self.segment_length
            } else {
                enc_lens[STAGES - 2 - d]
            };
            if next != want {
                return Err(Error::Config(format!(
                    "decoder layer {d} maps length {len} to {next}, expected {want}"
                )));
            }
            len = next;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_configs()
            .iter()
            .map(OperationalLayerConfig::parameter_count)
            .sum()
    }

    /// Human-readable summary of the resolved architecture.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "Op-UNet: segment {} samples, Q={}, channels {:?}, encoder K={} pad={}, decoder K={} pad={}, stride {}\n",
            self.segment_length,
            self.q_order,
            self.channels,
            self.encoder_kernel,
            self.encoder_padding,
            self.decoder_kernel,
            self.decoder_padding,
            self.stride
        );
        for (i, l) in self.layer_configs().iter().enumerate() {
            s.push_str(&format!(
                "  {:<4} {:>3} -> {:<3} K={} Q={} {} params={}\n",
                if i < STAGES {
                    format!("e{}", i + 1)
                } else {
                    format!("d{}", i - STAGES)
                },
                l.in_channels,
                l.out_channels,
                l.kernel,
                l.q_order,
                if l.transposed { "transposed" } else { "strided" },
                l.parameter_count()
            ));
        }
        s.push_str(&format!("  total parameters: {}", self.parameter_count()));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpUNet<T> {
    config: OpUNetConfig,
    layers: Vec<OperationalLayer<T>>,
}

impl<T: Scalar> OpUNet<T> {
    /// Randomly initialised network.
    pub fn new(config: OpUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_configs()
            .into_iter()
            .map(|c| OperationalLayer::init(c, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, layers })
    }

    /// All weights and biases zero.
    pub fn zeros(config: OpUNetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_configs()
            .into_iter()
            .map(|c| {
                let p = GenerativeLayerParams::zeros(&c);
                OperationalLayer::new(c, p)
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &OpUNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[OperationalLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [OperationalLayer<T>] {
        &mut self.layers
    }

    fn check_input(&self, channels: usize, len: usize) -> Result<()> {
        if channels != 1 || len != self.config.segment_length {
            return Err(Error::shape(
                "opunet_forward",
                format!("1x{}", self.config.segment_length),
                format!("{channels}x{len}"),
            ));
        }
        Ok(())
    }

    /// Synthesize a vibration segment from a normalised sound segment.
    pub fn synthesize(&self, sound: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(&FeatureMap::from_signal(sound)?)?.into_values())
    }
}

impl<T: Scalar> Model<T> for OpUNet<T> {
    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.params.weights, &l.params.biases])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let p = &mut l.params;
                [&mut p.weights, &mut p.biases]
            })
            .collect()
    }

    fn parameter_count(&self) -> usize {
        self.layers.iter().map(OperationalLayer::parameter_count).sum()
    }

    fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check_input(x.channels(), x.length())?;
        let (enc, dec) = self.layers.split_at(STAGES);
        let mut skips = Vec::with_capacity(STAGES);
        let mut h = x.clone();
        for layer in enc {
            h = layer.forward(&h)?;
            skips.push(h.clone());
        }
        h = dec[0].forward(&h)?;
        for (d, layer) in dec.iter().enumerate().skip(1) {
            let cat = FeatureMap::concat_channels(&h, &skips[STAGES - 1 - d])?;
            h = layer.forward(&cat)?;
        }
        Ok(h)
    }

    fn forward_tape(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "OpUNet::forward_tape",
                2 * self.layers.len(),
                params.len(),
            ));
        }
        {
            let v = tape.value(x)?;
            let (c, l) = match *v.shape() {
                [c, l] => (c, l),
                _ => (0, v.len()),
            };
            self.check_input(c, l)?;
        }
        let p = |i: usize| (params[2 * i], params[2 * i + 1]);
        let mut skips = Vec::with_capacity(STAGES);
        let mut h = x;
        for s in 0..STAGES {
            let (w, b) = p(s);
            h = self.layers[s].forward_tape(tape, h, w, b)?;
            skips.push(h);
        }
        let (w, b) = p(STAGES);
        h = self.layers[STAGES].forward_tape(tape, h, w, b)?;
        for d in 1..STAGES {
            let cat = tape.concat_channels(h, skips[STAGES - 1 - d])?;
            let (w, b) = p(STAGES + d);
            h = self.layers[STAGES + d].forward_tape(tape, cat, w, b)?;
        }
        Ok(h)
    }
}

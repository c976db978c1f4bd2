//! Generative neurons and (transposed) operational layers.
//!
//! A generative neuron replaces the scalar kernel weight of a convolutional
//! neuron with a learned truncated power series: each tap `r` applies
//! `sum_{q=1..Q} w(r, q) * y^q` to the input sample. Summed over taps and
//! input channels, the layer output is
//!
//! ```text
//! x_k = b_k + sum_q Conv1D(w[q], y^q)
//! ```
//!
//! i.e. `Q` ordinary convolutions applied to the elementwise powers of the
//! input. There is no `q = 0` term; the neuron bias absorbs it. With `Q = 1`
//! the layer is exactly a convolutional layer.
//!
//! The transposed layer is the same construction with transposed
//! convolutions in place of convolutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::autodiff::{Backward, Tape, Var};
use crate::numeric::conv::{self, ConvGeom};
use crate::numeric::ops::{pow_n, power_slice};
use crate::numeric::tensor::{FeatureMap, Tensor};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    None,
}

/// Hyperparameters of one operational layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationalLayerConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub q_order: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
    pub activation: Activation,
}

impl OperationalLayerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel", self.kernel),
            ("q_order", self.q_order),
            ("stride", self.stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("operational layer {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Output length for an input of `len` samples.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        if self.transposed {
            conv::tconv_out_len(len, self.kernel, self.stride, self.padding)
        } else {
            conv::conv_out_len(len, self.kernel, self.stride, self.padding)
        }
    }

    /// Shape of the weight tensor: `[Q][out][in][K]`, or `[Q][in][out][K]`
    /// for transposed layers (the transposed-convolution weight convention).
    pub fn weight_shape(&self) -> Vec<usize> {
        if self.transposed {
            vec![self.q_order, self.in_channels, self.out_channels, self.kernel]
        } else {
            vec![self.q_order, self.out_channels, self.in_channels, self.kernel]
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.q_order + self.out_channels
    }
}

/// Learned power-series kernels and biases of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeLayerParams<T> {
    pub q_order: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[Q][out][in][K]` (`[Q][in][out][K]` for transposed layers); slice
    /// `q - 1` holds the coefficients of `y^q`.
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

impl<T: Scalar> GenerativeLayerParams<T> {
    pub fn zeros(cfg: &OperationalLayerConfig) -> Self {
        Self {
            q_order: cfg.q_order,
            kernel: cfg.kernel,
            in_channels: cfg.in_channels,
            out_channels: cfg.out_channels,
            weights: Tensor::zeros(cfg.weight_shape()),
            biases: Tensor::zeros(vec![cfg.out_channels]),
        }
    }

    /// Uniform `[-s, s]` weights with `s = 1/sqrt(in * K * Q)`, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &OperationalLayerConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let s = 1.0 / ((cfg.in_channels * cfg.kernel * cfg.q_order) as f64).sqrt();
        for w in p.weights.data_mut() {
            *w = lit(rng.random_range(-s..=s));
        }
        p
    }

    pub fn from_parts(cfg: &OperationalLayerConfig, weights: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        if weights.shape() != cfg.weight_shape().as_slice() {
            return Err(Error::shape(
                "GenerativeLayerParams",
                format!("weights {:?}", cfg.weight_shape()),
                format!("{:?}", weights.shape()),
            ));
        }
        if biases.len() != cfg.out_channels {
            return Err(Error::shape(
                "GenerativeLayerParams",
                format!("{} biases", cfg.out_channels),
                biases.len(),
            ));
        }
        Ok(Self {
            q_order: cfg.q_order,
            kernel: cfg.kernel,
            in_channels: cfg.in_channels,
            out_channels: cfg.out_channels,
            weights,
            biases,
        })
    }

    fn slice_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel
    }

    /// Coefficients of `y^q`, `q` in `1..=Q`.
    pub fn weights_for_order(&self, q: usize) -> &[T] {
        let n = self.slice_len();
        &self.weights.data()[(q - 1) * n..q * n]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.biases.is_finite()
    }
}

fn generative_geom(
    in_channels: usize,
    len: usize,
    weight_shape: &[usize],
    bias_len: usize,
    stride: usize,
    padding: usize,
    transposed: bool,
) -> Result<(usize, ConvGeom)> {
    let [q, a, b, k] = *weight_shape else {
        return Err(Error::shape(
            "generative layer",
            "weights [Q, _, _, K]",
            format!("{weight_shape:?}"),
        ));
    };
    if q == 0 {
        return Err(Error::InvalidArgument("Q must be >= 1".into()));
    }
    let g = if transposed {
        conv::tconv_geom(in_channels, len, &[a, b, k], Some(bias_len), stride, padding)?
    } else {
        conv::conv_geom(in_channels, len, &[a, b, k], Some(bias_len), stride, padding)?
    };
    Ok((q, g))
}

fn generative_kernel<T: Scalar>(
    g: &ConvGeom,
    q_order: usize,
    y: &[T],
    weights: &[T],
    biases: &[T],
    transposed: bool,
) -> Vec<T> {
    let n = weights.len() / q_order;
    let powers: Vec<Vec<T>> = (2..=q_order).map(|q| power_slice(y, q)).collect();
    let terms: Vec<(&[T], &[T])> = (1..=q_order)
        .map(|q| {
            let p: &[T] = if q == 1 { y } else { &powers[q - 2] };
            (p, &weights[(q - 1) * n..q * n])
        })
        .collect();
    if transposed {
        conv::tconv_forward_multi(g, &terms, Some(biases))
    } else {
        conv::conv_forward_multi(g, &terms, Some(biases))
    }
}

/// `bias + sum_{q=1..Q} conv1d(weights[q], y^q)`.
pub fn generative_forward<T: Scalar>(
    y: &FeatureMap<T>,
    params: &GenerativeLayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<FeatureMap<T>> {
    let (q, g) = generative_geom(
        y.channels(),
        y.length(),
        params.weights.shape(),
        params.biases.len(),
        stride,
        padding,
        false,
    )?;
    let out = generative_kernel(&g, q, y.values(), params.weights.data(), params.biases.data(), false);
    FeatureMap::new(g.out_channels, g.len_out, out)
}

/// `bias + sum_{q=1..Q} transposed_conv1d(weights[q], y^q)`.
pub fn transposed_generative_forward<T: Scalar>(
    y: &FeatureMap<T>,
    params: &GenerativeLayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<FeatureMap<T>> {
    let (q, g) = generative_geom(
        y.channels(),
        y.length(),
        params.weights.shape(),
        params.biases.len(),
        stride,
        padding,
        true,
    )?;
    let out = generative_kernel(&g, q, y.values(), params.weights.data(), params.biases.data(), true);
    FeatureMap::new(g.in_channels, g.len_in, out)
}

/// Fused generative layer on a tape: inputs `[y, weights, biases]`.
struct GenerativeOp {
    geom: ConvGeom,
    q_order: usize,
    transposed: bool,
}

impl<T: Scalar> Backward<T> for GenerativeOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (y, w) = (inputs[0], inputs[1]);
        let g = &self.geom;
        let n = w.len() / self.q_order;
        let mut dy = needs[0].then(|| vec![T::zero(); y.len()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
        let dcols = self.transposed.then(|| conv::tconv_dcols(g, grad.data()));
        for q in 1..=self.q_order {
            let p = if q == 1 {
                y.data().to_vec()
            } else {
                power_slice(y.data(), q)
            };
            let wq = &w.data()[(q - 1) * n..q * n];
            let (dwq, dp) = match &dcols {
                Some(dcols) => conv::tconv_backward_term(g, &p, wq, dcols, needs[1], needs[0]),
                None => conv::conv_backward_term(g, &p, wq, grad.data(), needs[1], needs[0]),
            };
            if let (Some(dw), Some(dwq)) = (dw.as_mut(), dwq) {
                dw[(q - 1) * n..q * n].copy_from_slice(&dwq);
            }
            if let (Some(dy), Some(dp)) = (dy.as_mut(), dp) {
                if q == 1 {
                    dy.iter_mut().zip(&dp).for_each(|(a, &d)| *a += d);
                } else {
                    let qf = T::from_usize_lossy(q);
                    for ((a, &d), &v) in dy.iter_mut().zip(&dp).zip(y.data()) {
                        *a += d * qf * pow_n(v, q - 1);
                    }
                }
            }
        }
        let bias_len = if self.transposed { g.len_in } else { g.len_out };
        let db = needs[2].then(|| Tensor::from_vec(conv::bias_gradient(grad.data(), bias_len)));
        Ok(vec![
            dy.map(|d| Tensor::new(y.shape().to_vec(), d)).transpose()?,
            dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
            db,
        ])
    }
}

/// Record a (transposed) generative layer on a tape. `weights` and `biases`
/// are tape variables shaped like [`GenerativeLayerParams`].
pub fn generative_forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    y: Var,
    weights: Var,
    biases: Var,
    stride: usize,
    padding: usize,
    transposed: bool,
) -> Result<Var> {
    let [c, l] = *tape.value(y)?.shape() else {
        return Err(Error::shape(
            "generative layer",
            "[channels, length]",
            format!("{:?}", tape.value(y)?.shape()),
        ));
    };
    let (q, g) = generative_geom(
        c,
        l,
        tape.value(weights)?.shape(),
        tape.value(biases)?.len(),
        stride,
        padding,
        transposed,
    )?;
    let out = generative_kernel(
        &g,
        q,
        tape.value(y)?.data(),
        tape.value(weights)?.data(),
        tape.value(biases)?.data(),
        transposed,
    );
    let shape = if transposed {
        vec![g.in_channels, g.len_in]
    } else {
        vec![g.out_channels, g.len_out]
    };
    let value = Tensor::new(shape, out)?;
    tape.record(
        &[y, weights, biases],
        value,
        GenerativeOp {
            geom: g,
            q_order: q,
            transposed,
        },
    )
}

/// A configured operational layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OperationalLayer<T> {
    pub config: OperationalLayerConfig,
    pub params: GenerativeLayerParams<T>,
}

impl<T: Scalar> OperationalLayer<T> {
    pub fn new(config: OperationalLayerConfig, params: GenerativeLayerParams<T>) -> Result<Self> {
        config.validate()?;
        let params = GenerativeLayerParams::from_parts(&config, params.weights, params.biases)?;
        Ok(Self { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: OperationalLayerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = GenerativeLayerParams::init(&config, rng);
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count()
    }

    /// Generative (or transposed generative) pass followed by the activation.
    pub fn forward(&self, y: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        operational_layer_forward(y, self)
    }

    pub fn forward_tape(&self, tape: &mut Tape<T>, y: Var, weights: Var, biases: Var) -> Result<Var> {
        let c = &self.config;
        let x = generative_forward_tape(tape, y, weights, biases, c.stride, c.padding, c.transposed)?;
        match c.activation {
            Activation::Tanh => tape.tanh(x),
            Activation::None => Ok(x),
        }
    }
}

pub fn operational_layer_forward<T: Scalar>(y: &FeatureMap<T>, layer: &OperationalLayer<T>) -> Result<FeatureMap<T>> {
    let c = &layer.config;
    let mut x = if c.transposed {
        transposed_generative_forward(y, &layer.params, c.stride, c.padding)?
    } else {
        generative_forward(y, &layer.params, c.stride, c.padding)?
    };
    if c.activation == Activation::Tanh {
        x.values_mut().iter_mut().for_each(|v| *v = v.tanh());
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::conv::{conv1d, transposed_conv1d};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(i: usize, o: usize, k: usize, q: usize, s: usize, p: usize, t: bool) -> OperationalLayerConfig {
        OperationalLayerConfig {
            in_channels: i,
            out_channels: o,
            kernel: k,
            q_order: q,
            stride: s,
            padding: p,
            transposed: t,
            activation: Activation::None,
        }
    }

    #[test]
    fn two_tap_second_order_example() {
        let c = cfg(1, 1, 2, 2, 1, 0, false);
        // [q][out][in][K]: q=1 -> [1, 2], q=2 -> [1, 0]
        let w = Tensor::new(c.weight_shape(), vec![1.0, 2.0, 1.0, 0.0]).unwrap();
        let p = GenerativeLayerParams::from_parts(&c, w, Tensor::zeros(vec![1])).unwrap();
        let y = FeatureMap::from_signal(&[0.5f64, -0.5]).unwrap();
        let out = generative_forward(&y, &p, 1, 0).unwrap();
        assert_eq!(out.values(), &[-0.25]);
    }

    #[test]
    fn q1_matches_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(3, 4, 5, 1, 2, 2, false);
        let p = GenerativeLayerParams::<f32>::init(&c, &mut rng);
        let y = FeatureMap::new(3, 20, (0..60).map(|i| ((i as f32) * 0.37).sin()).collect()).unwrap();
        let a = generative_forward(&y, &p, 2, 2).unwrap();
        let w = p.weights.clone().reshape(vec![4, 3, 5]).unwrap();
        let b = conv1d(&y, &w, p.biases.data(), 2, 2).unwrap();
        assert_eq!(a, b);

        let ct = cfg(3, 2, 4, 1, 2, 1, true);
        let pt = GenerativeLayerParams::<f32>::init(&ct, &mut rng);
        let a = transposed_generative_forward(&y, &pt, 2, 1).unwrap();
        let b = transposed_conv1d(
            &y,
            &pt.weights.clone().reshape(vec![3, 2, 4]).unwrap(),
            pt.biases.data(),
            2,
            1,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_gives_bias() {
        let c = cfg(2, 3, 3, 3, 1, 1, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = GenerativeLayerParams::<f64>::init(&c, &mut rng);
        p.biases = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
        let out = generative_forward(&FeatureMap::zeros(2, 7), &p, 1, 1).unwrap();
        for ch in 0..3 {
            assert!(out.channel(ch).iter().all(|&v| v == p.biases.data()[ch]));
        }
    }

    #[test]
    fn transposed_zero_weights_bias_only() {
        let c = cfg(2, 1, 4, 3, 2, 1, true);
        let mut p = GenerativeLayerParams::<f64>::zeros(&c);
        p.biases = Tensor::from_vec(vec![0.75]);
        let y = FeatureMap::new(2, 8, vec![0.4; 16]).unwrap();
        let out = transposed_generative_forward(&y, &p, 2, 1).unwrap();
        assert_eq!(out.length(), 16);
        assert!(out.values().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn layer_shapes_and_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = FeatureMap::new(1, 16, (0..16).map(|i| (i as f64 / 8.0) - 1.0).collect()).unwrap();
        let mut c = cfg(1, 4, 7, 3, 2, 3, false);
        c.activation = Activation::Tanh;
        let layer = OperationalLayer::<f64>::init(c.clone(), &mut rng).unwrap();
        let out = layer.forward(&y).unwrap();
        assert_eq!(out.length(), 8);
        assert!(out.values().iter().all(|v| v.abs() < 1.0));

        let mut raw = layer.clone();
        raw.config.activation = Activation::None;
        let pre = raw.forward(&y).unwrap();
        let direct = generative_forward(&y, &layer.params, 2, 3).unwrap();
        assert_eq!(pre, direct);

        let same = OperationalLayer::<f64>::init(cfg(1, 2, 5, 2, 1, 2, false), &mut rng).unwrap();
        assert_eq!(same.forward(&y).unwrap().length(), 16);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let c = cfg(2, 1, 3, 2, 1, 0, false);
        let p = GenerativeLayerParams::<f64>::zeros(&c);
        let y = FeatureMap::zeros(3, 10);
        assert!(matches!(generative_forward(&y, &p, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn parameter_count_formula() {
        assert_eq!(cfg(1, 16, 81, 3, 8, 40, false).parameter_count(), 3904);
        let conv_like = cfg(4, 8, 5, 1, 1, 2, false);
        assert_eq!(conv_like.parameter_count(), 8 * 4 * 5 + 8);
    }
}

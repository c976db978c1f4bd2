//! Training objectives of the cascaded transformer: time-domain MAE,
//! STFT-magnitude MAE, classifier-score MSE, and their weighted total
//! `class + lambda * (time + stft)`.
//!
//! Every loss uses a mean reduction.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::autodiff::{Backward, Tape, Var};
use crate::numeric::tensor::Tensor;
use crate::scalar::{lit, Scalar};
use crate::signal::{stft, stft_backward, StftConfig};

/// Added under the square root of `|X|` so the magnitude is differentiable at zero.
pub const MAGNITUDE_EPS: f64 = 1e-12;

/// Spectrum compared by the STFT loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumMode {
    #[default]
    Magnitude,
    Power,
}

/// What the classification term compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassLossMode {
    /// Detector scores on the real vibration vs. on the synthesized one.
    #[default]
    PairedScores,
    /// Detector scores on the synthesized vibration vs. the label encoding.
    LabelTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub time_l1: f64,
    pub stft_l1: f64,
    pub class_mse: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn zero(lambda: f64) -> Self {
        Self {
            time_l1: 0.0,
            stft_l1: 0.0,
            class_mse: 0.0,
            total: 0.0,
            lambda,
        }
    }

    /// Running sum, used for batch averages.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.time_l1 += other.time_l1;
        self.stft_l1 += other.stft_l1;
        self.class_mse += other.class_mse;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            time_l1: self.time_l1 * k,
            stft_l1: self.stft_l1 * k,
            class_mse: self.class_mse * k,
            total: self.total * k,
            lambda: self.lambda,
        }
    }
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("length {a}"), format!("length {b}")));
    }
    if a == 0 {
        return Err(Error::Empty(op));
    }
    Ok(())
}

/// Mean absolute error in the time domain.
pub fn loss_time<T: Scalar>(y: &[T], synth: &[T]) -> Result<T> {
    check_lengths("loss_time", y.len(), synth.len())?;
    let sum: T = y.iter().zip(synth).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / T::from_usize_lossy(y.len()))
}

fn spectrum_values<T: Scalar>(frames: &[Vec<Complex<T>>], mode: SpectrumMode) -> Vec<Vec<T>> {
    let eps: T = lit(MAGNITUDE_EPS);
    frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|c| match mode {
                    SpectrumMode::Magnitude => (c.norm_sqr() + eps).sqrt(),
                    SpectrumMode::Power => c.norm_sqr(),
                })
                .collect()
        })
        .collect()
}

/// Mean over frames and bins of `| |STFT(y)| - |STFT(synth)| |`.
pub fn loss_stft<T: Scalar>(y: &[T], synth: &[T], config: StftConfig, mode: SpectrumMode) -> Result<T> {
    check_lengths("loss_stft", y.len(), synth.len())?;
    let a = spectrum_values(&stft(y, config)?.frames, mode);
    let b = spectrum_values(&stft(synth, config)?.frames, mode);
    let count = a.len() * config.bins();
    let sum: T = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(&p, &q)| (p - q).abs())
        .sum();
    Ok(sum / T::from_usize_lossy(count))
}

/// Mean squared difference of two score vectors.
pub fn loss_class<T: Scalar>(score_real: &[T], score_synth: &[T]) -> Result<T> {
    check_lengths("loss_class", score_real.len(), score_synth.len())?;
    let sum: T = score_real
        .iter()
        .zip(score_synth)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / T::from_usize_lossy(score_real.len()))
}

/// `class + lambda * (time + stft)`.
pub fn loss_total(class_mse: f64, time_l1: f64, stft_l1: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        time_l1,
        stft_l1,
        class_mse,
        total: class_mse + lambda * (time_l1 + stft_l1),
        lambda,
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

struct L1MeanOp;

impl<T: Scalar> Backward<T> for L1MeanOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let k = grad.item()? / T::from_usize_lossy(a.len());
        let d: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| k * sign(x - y)).collect();
        Ok(vec![
            needs[0]
                .then(|| Tensor::new(a.shape().to_vec(), d.clone()))
                .transpose()?,
            needs[1]
                .then(|| Tensor::new(b.shape().to_vec(), d.iter().map(|&v| -v).collect()))
                .transpose()?,
        ])
    }
}

struct MseOp;

impl<T: Scalar> Backward<T> for MseOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let k = grad.item()? * lit::<T>(2.0) / T::from_usize_lossy(a.len());
        let d: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| k * (x - y)).collect();
        Ok(vec![
            needs[0]
                .then(|| Tensor::new(a.shape().to_vec(), d.clone()))
                .transpose()?,
            needs[1]
                .then(|| Tensor::new(b.shape().to_vec(), d.iter().map(|&v| -v).collect()))
                .transpose()?,
        ])
    }
}

struct StftL1Op<T> {
    config: StftConfig,
    mode: SpectrumMode,
    spec_a: Vec<Vec<Complex<T>>>,
    spec_b: Vec<Vec<Complex<T>>>,
}

impl<T: Scalar> StftL1Op<T> {
    /// Gradient w.r.t. the complex bins of one side given `dL/dvalue`.
    fn bin_grads(&self, frames: &[Vec<Complex<T>>], dval: &[Vec<T>]) -> Vec<Vec<Complex<T>>> {
        let eps: T = lit(MAGNITUDE_EPS);
        let two: T = lit(2.0);
        frames
            .iter()
            .zip(dval)
            .map(|(f, d)| {
                f.iter()
                    .zip(d)
                    .map(|(c, &g)| match self.mode {
                        SpectrumMode::Magnitude => *c * (g / (c.norm_sqr() + eps).sqrt()),
                        SpectrumMode::Power => *c * (two * g),
                    })
                    .collect()
            })
            .collect()
    }
}

impl<T: Scalar> Backward<T> for StftL1Op<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let va = spectrum_values(&self.spec_a, self.mode);
        let vb = spectrum_values(&self.spec_b, self.mode);
        let count = va.len() * self.config.bins();
        let k = grad.item()? / T::from_usize_lossy(count);
        let da: Vec<Vec<T>> = va
            .iter()
            .zip(&vb)
            .map(|(fa, fb)| fa.iter().zip(fb).map(|(&p, &q)| k * sign(p - q)).collect())
            .collect();
        let mut out = Vec::with_capacity(2);
        for (i, (frames, flip)) in [(&self.spec_a, false), (&self.spec_b, true)].into_iter().enumerate() {
            if !needs[i] {
                out.push(None);
                continue;
            }
            let dval: Vec<Vec<T>> = if flip {
                da.iter().map(|f| f.iter().map(|&v| -v).collect()).collect()
            } else {
                da.clone()
            };
            let g = self.bin_grads(frames, &dval);
            let dx = stft_backward(inputs[i].len(), self.config, &g)?;
            out.push(Some(Tensor::new(inputs[i].shape().to_vec(), dx)?));
        }
        Ok(out)
    }
}

fn scalar_pair<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (ta, tb) = (tape.value(a)?, tape.value(b)?);
    check_lengths(op, ta.len(), tb.len())
}

/// Recorded [`loss_time`].
pub fn loss_time_tape<T: Scalar>(tape: &mut Tape<T>, y: Var, synth: Var) -> Result<Var> {
    scalar_pair(tape, y, synth, "loss_time")?;
    let v = loss_time(tape.value(y)?.data(), tape.value(synth)?.data())?;
    tape.record(&[y, synth], Tensor::scalar(v), L1MeanOp)
}

/// Recorded [`loss_stft`].
pub fn loss_stft_tape<T: Scalar>(
    tape: &mut Tape<T>,
    y: Var,
    synth: Var,
    config: StftConfig,
    mode: SpectrumMode,
) -> Result<Var> {
    scalar_pair(tape, y, synth, "loss_stft")?;
    let spec_a = stft(tape.value(y)?.data(), config)?.frames;
    let spec_b = stft(tape.value(synth)?.data(), config)?.frames;
    let va = spectrum_values(&spec_a, mode);
    let vb = spectrum_values(&spec_b, mode);
    let count = va.len() * config.bins();
    let sum: T = va
        .iter()
        .flatten()
        .zip(vb.iter().flatten())
        .map(|(&p, &q)| (p - q).abs())
        .sum();
    let v = sum / T::from_usize_lossy(count);
    tape.record(
        &[y, synth],
        Tensor::scalar(v),
        StftL1Op {
            config,
            mode,
            spec_a,
            spec_b,
        },
    )
}

/// Recorded [`loss_class`].
pub fn loss_class_tape<T: Scalar>(tape: &mut Tape<T>, score_real: Var, score_synth: Var) -> Result<Var> {
    scalar_pair(tape, score_real, score_synth, "loss_class")?;
    let v = loss_class(tape.value(score_real)?.data(), tape.value(score_synth)?.data())?;
    tape.record(&[score_real, score_synth], Tensor::scalar(v), MseOp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_loss_examples() {
        let y = [1.0f64, -1.0, 0.0, 0.0];
        assert_eq!(loss_time(&y, &y).unwrap(), 0.0);
        assert_eq!(loss_time(&y, &[0.0; 4]).unwrap(), 0.5);
        let s = [0.3, 0.1, -0.2, 0.9];
        assert_eq!(loss_time(&y, &s).unwrap(), loss_time(&s, &y).unwrap());
        assert!(loss_time(&y, &[0.0; 3]).is_err());
    }

    #[test]
    fn class_loss_examples() {
        assert_eq!(loss_class(&[0.2f64, -0.4], &[0.2, -0.4]).unwrap(), 0.0);
        assert_eq!(loss_class(&[1.0f64, -1.0], &[-1.0, 1.0]).unwrap(), 4.0);
        let a = [0.3f64, -0.8];
        let b = [0.1, 0.5];
        let na = [-0.3, 0.8];
        let nb = [-0.1, -0.5];
        assert_eq!(loss_class(&a, &b).unwrap(), loss_class(&na, &nb).unwrap());
    }

    #[test]
    fn total_examples() {
        let t = loss_total(0.1, 0.2, 0.3, 100.0);
        assert!((t.total - 50.1).abs() < 1e-12);
        assert_eq!(loss_total(0.7, 0.2, 0.3, 0.0).total, 0.7);
        assert_eq!(loss_total(0.0, 0.0, 0.0, 100.0).total, 0.0);
        let a = loss_total(0.1, 0.2, 0.3, 10.0).total;
        let b = loss_total(0.1, 0.2, 0.3, 20.0).total;
        let c = loss_total(0.1, 0.2, 0.3, 30.0).total;
        assert!(((c - b) - (b - a)).abs() < 1e-12);
    }

    #[test]
    fn stft_loss_zero_on_identical_and_nonnegative() {
        let y: Vec<f64> = (0..512).map(|i| (i as f64 * 0.21).sin()).collect();
        assert_eq!(
            loss_stft(&y, &y, StftConfig::default(), SpectrumMode::Magnitude).unwrap(),
            0.0
        );
        let s: Vec<f64> = (0..512).map(|i| (i as f64 * 0.05).cos()).collect();
        assert!(loss_stft(&y, &s, StftConfig::default(), SpectrumMode::Power).unwrap() > 0.0);
        assert!(loss_stft(&y[..100], &s[..100], StftConfig::default(), SpectrumMode::Magnitude).is_err());
    }
}

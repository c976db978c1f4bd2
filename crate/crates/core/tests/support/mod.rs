//! Independent oracles shared by the integration tests and the acceptance
//! target. Nothing here calls the code it is used to check.
#![allow(dead_code)]

pub mod criteria;

use opvib::evaluation::MetricsReport;
use opvib::numeric::{Tape, Tensor, Var};
use opvib::signal::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce any recorded value to a scalar with a fixed random projection.
pub fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> opvib::Result<Var> {
    let n = tape.value(v)?.len();
    let w = uniform(&mut rng(seed), &[1, n], 1.0);
    let w = tape.constant(w);
    tape.dense(v, w, None)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Relative error with a floor on the denominator. Differencing loses about
/// `eps * |f| / h` absolutely, so gradients below `floor` are compared on an
/// absolute scale instead.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare tape gradients of the scalar `f(inputs)` against central finite
/// differences at `points` randomly chosen input coordinates.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], points: usize, seed: u64, f: F) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[Var]) -> opvib::Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).unwrap().item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let floor = 1e-6 * tape.value(out).unwrap().item().unwrap().abs().max(1.0);
    let grads = tape.backward(out).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(&tape, v).unwrap()).collect();

    let total: usize = inputs.iter().map(|t| t.len()).sum();
    let mut r = rng(seed);
    let h = 1e-4;
    let mut max_rel_error = 0.0f64;
    for _ in 0..points {
        let mut flat = r.random_range(0..total);
        let mut which = 0;
        while flat >= inputs[which].len() {
            flat -= inputs[which].len();
            which += 1;
        }
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[flat] += h;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[flat] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic[which].data()[flat];
        max_rel_error = max_rel_error.max(rel_error(a, numeric, floor));
    }
    GradCheck {
        checked: points,
        max_rel_error,
    }
}

/// Direct-loop cross-correlation, `x: [C_in][L]`, `w: [C_out][C_in][K]`.
pub fn naive_conv(
    x: &[f64],
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let len = x.len() / c_in;
    let out_len = (len + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        for t in 0..out_len {
            let mut acc = b[o];
            for c in 0..c_in {
                for r in 0..k {
                    let i = (t * stride + r) as isize - pad as isize;
                    if i >= 0 && (i as usize) < len {
                        acc += w[(o * c_in + c) * k + r] * x[c * len + i as usize];
                    }
                }
            }
            out[o * out_len + t] = acc;
        }
    }
    out
}

/// Direct-loop transposed convolution, `w: [C_in][C_out][K]`, output length
/// `(L - 1) * stride - 2 * pad + K`.
pub fn naive_tconv(
    x: &[f64],
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let len = x.len() / c_in;
    let out_len = (len - 1) * stride + k - 2 * pad;
    let mut out = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        out[o * out_len..(o + 1) * out_len].iter_mut().for_each(|v| *v = b[o]);
    }
    for c in 0..c_in {
        for t in 0..len {
            for o in 0..c_out {
                for r in 0..k {
                    let j = (t * stride + r) as isize - pad as isize;
                    if j >= 0 && (j as usize) < out_len {
                        out[o * out_len + j as usize] += w[(c * c_out + o) * k + r] * x[c * len + t];
                    }
                }
            }
        }
    }
    out
}

/// `O(N^2)` windowed DFT of every frame, bins `0..=N/2`.
pub fn brute_stft(x: &[f64], n: usize, hop: usize) -> Vec<Vec<Complex64>> {
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let frames = (x.len() - n) / hop + 1;
    (0..frames)
        .map(|t| {
            (0..=n / 2)
                .map(|k| {
                    (0..n)
                        .map(|i| {
                            let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                            Complex64::from_polar(window[i] * x[t * hop + i], ang)
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Confusion counts by enumeration: `(tp, fp, tn, fn)` with `positive` as the
/// positive class.
pub fn confusion(pred: &[Label], truth: &[Label], positive: Label) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        match (*p == positive, *t == positive) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

/// Does `report` agree with the oracle counts and the textbook ratios?
pub fn metrics_match(report: &MetricsReport, pred: &[Label], truth: &[Label]) -> bool {
    let (tp, fp, tn, fn_) = confusion(pred, truth, Label::Faulty);
    let ratio = |a: usize, b: usize| {
        if b == 0 {
            None
        } else {
            Some(a as f64 / b as f64 * 100.0)
        }
    };
    let f1 = |s: Option<f64>, p: Option<f64>| match (s, p) {
        (Some(s), Some(p)) if s + p > 0.0 => Some(2.0 * s * p / (s + p)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    };
    let f_sens = ratio(tp, tp + fn_);
    let f_prec = ratio(tp, tp + fp);
    let h_sens = ratio(tn, tn + fp);
    let h_prec = ratio(tn, tn + fn_);
    report.tp == tp
        && report.fp == fp
        && report.tn == tn
        && report.fn_ == fn_
        && report.total == pred.len()
        && (report.accuracy - (tp + tn) as f64 / pred.len() as f64 * 100.0).abs() <= 1e-9
        && close(report.faulty.sensitivity, f_sens)
        && close(report.faulty.precision, f_prec)
        && close(report.faulty.f1, f1(f_sens, f_prec))
        && close(report.healthy.sensitivity, h_sens)
        && close(report.healthy.precision, h_prec)
        && close(report.healthy.f1, f1(h_sens, h_prec))
}

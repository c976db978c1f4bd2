//! Measurements behind the numeric acceptance criteria. Each returns the
//! measured quantity so callers can assert on it or print it.

use opvib::losses::{loss_class_tape, loss_stft_tape, loss_time_tape, SpectrumMode};
use opvib::models::{ClassifierConfig, FaultClassifier, Model, OpUNet, OpUNetConfig};
use opvib::numeric::{adam_step, conv1d, transposed_conv1d, AdamConfig, AdamState, FeatureMap, Tensor};
use opvib::selfonn::{
    generative_forward, generative_forward_tape, Activation, GenerativeLayerParams, OperationalLayerConfig,
};
use opvib::signal::{stft, StftConfig};
use opvib::Scalar;
use rand::Rng;

use super::{brute_stft, check_gradients, naive_conv, naive_tconv, project, rng, uniform, GradCheck};

pub const GRAD_POINTS: usize = 100;

fn signal(rng: &mut impl Rng, len: usize) -> Tensor<f64> {
    uniform(rng, &[1, len], 1.0)
}

/// Finite-difference checks for every differentiable operation, 100 points
/// each, in `f64`.
pub fn gradient_checks() -> Vec<(&'static str, GradCheck)> {
    let mut r = rng(1);
    let mut out = Vec::new();

    let x = uniform(&mut r, &[3, 20], 1.0);
    let w = uniform(&mut r, &[4, 3, 5], 0.5);
    let b = uniform(&mut r, &[4], 0.5);
    out.push((
        "conv1d",
        check_gradients(&[x, w, b], GRAD_POINTS, 10, |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), 2, 2)?;
            project(t, y, 11)
        }),
    ));

    let x = uniform(&mut r, &[3, 9], 1.0);
    let w = uniform(&mut r, &[3, 2, 4], 0.5);
    let b = uniform(&mut r, &[2], 0.5);
    out.push((
        "transposed_conv1d",
        check_gradients(&[x, w, b], GRAD_POINTS, 12, |t, v| {
            let y = t.transposed_conv1d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(t, y, 13)
        }),
    ));

    let x = uniform(&mut r, &[2, 17], 1.0);
    let w = uniform(&mut r, &[3, 3, 2, 7], 0.3);
    let b = uniform(&mut r, &[3], 0.3);
    out.push((
        "generative layer (Q=3)",
        check_gradients(&[x, w, b], GRAD_POINTS, 14, |t, v| {
            let y = generative_forward_tape(t, v[0], v[1], v[2], 2, 3, false)?;
            project(t, y, 15)
        }),
    ));

    let x = uniform(&mut r, &[3, 8], 1.0);
    let w = uniform(&mut r, &[3, 3, 2, 4], 0.3);
    let b = uniform(&mut r, &[2], 0.3);
    out.push((
        "transposed generative layer (Q=3)",
        check_gradients(&[x, w, b], GRAD_POINTS, 16, |t, v| {
            let y = generative_forward_tape(t, v[0], v[1], v[2], 2, 1, true)?;
            project(t, y, 17)
        }),
    ));

    let x = uniform(&mut r, &[2, 30], 2.0);
    out.push((
        "tanh",
        check_gradients(&[x], GRAD_POINTS, 18, |t, v| {
            let y = t.tanh(v[0])?;
            project(t, y, 19)
        }),
    ));

    let y = signal(&mut r, 64);
    let s = signal(&mut r, 64);
    out.push((
        "time L1 loss",
        check_gradients(&[y, s], GRAD_POINTS, 20, |t, v| loss_time_tape(t, v[0], v[1])),
    ));

    let cfg = StftConfig { fft_size: 32, hop: 16 };
    for (name, mode) in [
        ("STFT L1 loss (magnitude)", SpectrumMode::Magnitude),
        ("STFT L1 loss (power)", SpectrumMode::Power),
    ] {
        let y = signal(&mut r, 96);
        let s = signal(&mut r, 96);
        out.push((
            name,
            check_gradients(&[y, s], GRAD_POINTS, 21, move |t, v| {
                loss_stft_tape(t, v[0], v[1], cfg, mode)
            }),
        ));
    }

    let a = uniform(&mut r, &[2, 1], 1.0);
    let b = uniform(&mut r, &[2, 1], 1.0);
    out.push((
        "class MSE loss",
        check_gradients(&[a, b], GRAD_POINTS, 22, |t, v| loss_class_tape(t, v[0], v[1])),
    ));

    let x = uniform(&mut r, &[3, 4], 1.0);
    let w = uniform(&mut r, &[5, 12], 0.5);
    let b = uniform(&mut r, &[5], 0.5);
    out.push((
        "dense",
        check_gradients(&[x, w, b], GRAD_POINTS, 23, |t, v| {
            let y = t.dense(v[0], v[1], Some(v[2]))?;
            project(t, y, 24)
        }),
    ));

    // Whole networks at toy size, cascaded the way training uses them.
    let unet = OpUNet::<f64>::new(
        OpUNetConfig {
            segment_length: 64,
            channels: [2, 3, 3, 4, 4],
            ..OpUNetConfig::default()
        },
        3,
    )
    .unwrap();
    let det = FaultClassifier::<f64>::new(
        ClassifierConfig {
            segment_length: 64,
            kernels: vec![5, 5, 3, 3, 3],
            strides: vec![2, 2, 2, 2, 2],
            channels: 2,
            hidden_dense: 4,
            q_order: 3,
        },
        4,
    )
    .unwrap();
    let sound = signal(&mut r, 64);
    let vib = signal(&mut r, 64);
    let mut inputs = vec![sound, vib];
    inputs.extend(unet.parameters().into_iter().cloned());
    let small = StftConfig { fft_size: 16, hop: 8 };
    out.push((
        "cascade total loss",
        check_gradients(&inputs, GRAD_POINTS, 25, |t, v| {
            let synth = unet.forward_tape(t, v[0], &v[2..])?;
            let frozen = det.bind_frozen(t);
            let s_real = det.forward_tape(t, v[1], &frozen)?;
            let s_synth = det.forward_tape(t, synth, &frozen)?;
            let class = loss_class_tape(t, s_real, s_synth)?;
            let time = loss_time_tape(t, v[1], synth)?;
            let spec = loss_stft_tape(t, v[1], synth, small, SpectrumMode::Magnitude)?;
            t.linear_combination(&[(class, 1.0), (time, 100.0), (spec, 100.0)])
        }),
    ));
    out
}

fn layer_cfg(
    c_in: usize,
    c_out: usize,
    k: usize,
    q: usize,
    stride: usize,
    pad: usize,
    transposed: bool,
) -> OperationalLayerConfig {
    OperationalLayerConfig {
        in_channels: c_in,
        out_channels: c_out,
        kernel: k,
        q_order: q,
        stride,
        padding: pad,
        transposed,
        activation: Activation::None,
    }
}

/// Max-abs difference between a Q=1 generative layer and a plain
/// convolution with the same weights over `configs` random shapes: in `f32`
/// against the library convolution, and in `f64` against direct loops.
pub fn q1_reduction(configs: usize) -> f64 {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let c_in = r.random_range(1..=4);
        let c_out = r.random_range(1..=4);
        let k = r.random_range(1..=9);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..=k / 2);
        let len = r.random_range(k..=40);
        let cfg = layer_cfg(c_in, c_out, k, 1, stride, pad, false);
        let w = uniform(&mut r, &cfg.weight_shape(), 1.0);
        let b = uniform(&mut r, &[c_out], 1.0);
        let x = uniform(&mut r, &[c_in, len], 1.0);

        let params = GenerativeLayerParams::from_parts(&cfg, w.clone(), b.clone()).unwrap();
        let fm = FeatureMap::new(c_in, len, x.data().to_vec()).unwrap();
        let got = generative_forward(&fm, &params, stride, pad).unwrap();
        let want = naive_conv(x.data(), c_in, w.data(), c_out, k, b.data(), stride, pad);
        assert_eq!(got.values().len(), want.len());
        for (a, b) in got.values().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }

        let (w32, b32, x32) = (w.cast::<f32>(), b.cast::<f32>(), x.cast::<f32>());
        let params = GenerativeLayerParams::from_parts(&cfg, w32.clone(), b32.clone()).unwrap();
        let fm = FeatureMap::new(c_in, len, x32.into_data()).unwrap();
        let got = generative_forward(&fm, &params, stride, pad).unwrap();
        let plain_w = w32.reshape(vec![c_out, c_in, k]).unwrap();
        let plain = conv1d(&fm, &plain_w, b32.data(), stride, pad).unwrap();
        for (a, b) in got.values().iter().zip(plain.values()) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    worst
}

/// `(peak bins correct, max |STFT - brute-force DFT|)` for sinusoids at bins
/// 1, 8 and 64 with N=256, hop 128.
pub fn stft_oracle() -> (bool, f64) {
    let cfg = StftConfig::default();
    let n = cfg.fft_size;
    let mut peaks_ok = true;
    let mut worst = 0.0f64;
    for k in [1usize, 8, 64] {
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64 + 0.3).sin())
            .collect();
        let got = stft(&x, cfg).unwrap();
        let want = brute_stft(&x, n, cfg.hop);
        assert_eq!(got.frames.len(), want.len());
        for (fg, fw) in got.frames.iter().zip(&want) {
            let peak = fg
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .map(|p| p.0)
                .unwrap();
            peaks_ok &= peak == k;
            for (a, b) in fg.iter().zip(fw) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    (peaks_ok, worst)
}

/// One randomized adjoint comparison: returns `|<conv x, y> - <x, tconv y>|`
/// and the larger side's magnitude, for shapes drawn from `seed`.
pub fn adjoint_gap(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let c_in = r.random_range(1..=4);
    let c_out = r.random_range(1..=4);
    let k = r.random_range(1..=9);
    let stride = [1, 2, 4][r.random_range(0..3)];
    let pad = r.random_range(0..=3);
    // Lengths where the strided windows tile the padded input exactly, so the
    // transposed convolution returns the original length.
    let min_out = (2 * pad + 1usize).saturating_sub(k).div_ceil(stride) + 1;
    let out_len = r.random_range(min_out..=min_out + 16);
    let len = (out_len - 1) * stride + k - 2 * pad;
    let x = uniform(&mut r, &[c_in, len], 1.0);
    let y = uniform(&mut r, &[c_out, out_len], 1.0);
    let w = uniform(&mut r, &[c_out, c_in, k], 1.0);

    let fx = FeatureMap::new(c_in, len, x.data().to_vec()).unwrap();
    let cx = conv1d(&fx, &w, &vec![0.0; c_out], stride, pad).unwrap();
    // Conv weights [C_out][C_in][K] are the tconv weights of the reverse map.
    let fy = FeatureMap::new(c_out, out_len, y.data().to_vec()).unwrap();
    let ty = transposed_conv1d(&fy, &w, &vec![0.0; c_in], stride, pad).unwrap();
    assert_eq!(ty.length(), len);
    let lhs: f64 = cx.values().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(ty.values()).map(|(a, b)| a * b).sum();
    ((lhs - rhs).abs(), lhs.abs().max(rhs.abs()))
}

/// Max-abs difference of the library transposed convolution against a
/// direct-loop oracle over `configs` random shapes.
pub fn tconv_vs_direct(configs: usize) -> f64 {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let c_in = r.random_range(1..=4);
        let c_out = r.random_range(1..=4);
        let k = r.random_range(1..=8);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..=(k - 1) / 2);
        let len = r.random_range(1..=20);
        let x = uniform(&mut r, &[c_in, len], 1.0);
        let w = uniform(&mut r, &[c_in, c_out, k], 1.0);
        let b = uniform(&mut r, &[c_out], 1.0);
        let fx = FeatureMap::new(c_in, len, x.data().to_vec()).unwrap();
        let got = transposed_conv1d(&fx, &w, b.data(), stride, pad).unwrap();
        let want = naive_tconv(x.data(), c_in, w.data(), c_out, k, b.data(), stride, pad);
        assert_eq!(got.values().len(), want.len());
        for (a, b) in got.values().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Values actually moved by one Adam step with all-ones gradients, checked
/// against the count the step itself reports.
pub fn changed_by_one_step<T: Scalar, M: Model<T>>(model: &mut M) -> usize {
    let grads: Vec<Tensor<T>> = model
        .parameters()
        .into_iter()
        .map(|p| Tensor::full(p.shape().to_vec(), T::one()))
        .collect();
    let mut state = AdamState::new(model.parameters(), AdamConfig::default());
    let before: Vec<Tensor<T>> = model.parameters().into_iter().cloned().collect();
    let reported = adam_step(&mut model.parameters_mut(), &grads, &mut state, 1e-4).unwrap();
    let counted = model
        .parameters()
        .into_iter()
        .zip(&before)
        .map(|(a, b)| a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
        .sum::<usize>();
    assert_eq!(reported, counted);
    counted
}

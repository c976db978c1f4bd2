//! One line per primary criterion: `PASS`/`FAIL`, the id, and what was
//! measured. Runs without the libtest harness so every line is printed; the
//! process fails if any criterion does.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use opvib::dataio::synthetic::{generate_synthetic_in_memory, SyntheticSpec};
use opvib::evaluation::{benchmark_inference, compute_metrics, f1_score};
use opvib::models::{ClassifierConfig, FaultClassifier, Model, OpUNet, OpUNetConfig};
use opvib::signal::{spectrogram, Label, SegmentPair, StftConfig};
use opvib::training::{
    evaluate_transformer, predict_real, predict_synthesized, prepare_segments, train_fault_detector,
    train_transformer_from, TrainConfig,
};
use rand::Rng;
use support::criteria::{adjoint_gap, changed_by_one_step, gradient_checks, q1_reduction, stft_oracle, GRAD_POINTS};
use support::{metrics_match, rng};

fn report(id: &str, pass: bool, detail: String) -> bool {
    println!("{} {id} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn synthetic(healthy: usize, faulty: usize, seed: u64, base: SyntheticSpec) -> Vec<SegmentPair<f32>> {
    let spec = SyntheticSpec {
        num_healthy: healthy,
        num_faulty: faulty,
        seed,
        ..base
    };
    prepare_segments(&generate_synthetic_in_memory(&spec).unwrap()).unwrap()
}

fn a01_gradients() -> bool {
    let t = Instant::now();
    let checks = gradient_checks();
    let worst = checks.iter().map(|(_, c)| c.max_rel_error).fold(0.0, f64::max);
    let names: Vec<&str> = checks.iter().map(|(n, _)| *n).collect();
    let ok = checks
        .iter()
        .all(|(_, c)| c.checked == GRAD_POINTS && c.max_rel_error < 1e-4);
    report(
        "A1",
        ok,
        format!(
            "max rel error {worst:.2e} < 1e-4 over {} ops x {GRAD_POINTS} points ({}) in {:.1?}",
            checks.len(),
            names.join(", "),
            t.elapsed()
        ),
    )
}

fn a02_q1_reduction() -> bool {
    let diff = q1_reduction(50);
    report(
        "A2",
        diff < 1e-6,
        format!("max abs diff {diff:.2e} < 1e-6 over 50 configs"),
    )
}

fn a03_stft_oracle() -> bool {
    let (peaks, dev) = stft_oracle();
    report(
        "A3",
        peaks && dev < 1e-8,
        format!("peak bins exact: {peaks}, max deviation from direct DFT {dev:.2e} < 1e-8"),
    )
}

fn a04_adjoint() -> bool {
    let mut worst = 0.0f64;
    let mut ok = true;
    for seed in 0..200 {
        let (gap, scale) = adjoint_gap(seed);
        worst = worst.max(gap);
        ok &= gap <= 1e-10 * scale.max(1.0);
    }
    report(
        "A4",
        ok,
        format!("max |<conv x, y> - <x, tconv y>| {worst:.2e} over 200 shapes (tol 1e-10 relative)"),
    )
}

fn a05_overfit_surrogate() -> bool {
    let t = Instant::now();
    let train = synthetic(16, 16, 11, SyntheticSpec::default());
    let val = synthetic(4, 4, 12, SyntheticSpec::default());
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let det = train_fault_detector(&train, &val, &cfg).unwrap();
    let init = OpUNet::new(OpUNetConfig::default(), cfg.seed).unwrap();
    let before = evaluate_transformer(&init, &det.model, &train, &cfg).unwrap();
    let out = train_transformer_from(init, &train, &val, &cfg, &det.model).unwrap();
    let after = evaluate_transformer(&out.model, &det.model, &train, &cfg).unwrap();
    let ratio = after.time_l1 / before.time_l1;

    let (mut hits, mut frames) = (0, 0);
    for r in &train {
        let synth = out.model.synthesize(&r.sound).unwrap();
        let want = spectrogram(&r.vibration, StftConfig::default()).unwrap().peak_bins();
        let got = spectrogram(&synth, StftConfig::default()).unwrap().peak_bins();
        hits += want.iter().zip(&got).filter(|(a, b)| a == b).count();
        frames += want.len();
    }
    let peak = hits as f64 / frames as f64 * 100.0;
    report(
        "A5",
        ratio <= 0.10 && peak >= 95.0,
        format!(
            "time_l1 {:.4} -> {:.4} (ratio {ratio:.3}, need <= 0.10), peak bins {hits}/{frames} = {peak:.1}% (need >= 95%), best iteration {}, {:.0?}",
            before.time_l1,
            after.time_l1,
            out.best_iteration,
            t.elapsed()
        )
    )
}

fn a06_detection_gap() -> bool {
    let t = Instant::now();
    // Ringing impacts (20 ms) rather than the default clicks. Test segments
    // share the training speeds; at 200 segments the detector does not
    // transfer to an unseen speed.
    let base = SyntheticSpec {
        speeds: vec![480, 680],
        fault_decay_s: 0.02,
        ..SyntheticSpec::default()
    };
    let pool = synthetic(125, 125, 21, base.clone());
    let (train, val) = pool.split_at(200);
    let test = synthetic(50, 50, 22, base);
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let det = train_fault_detector(train, val, &cfg).unwrap();
    let net = OpUNet::new(OpUNetConfig::default(), cfg.seed).unwrap();
    let tr = train_transformer_from(net, train, val, &cfg, &det.model).unwrap();
    let labels: Vec<Label> = test.iter().map(|r| r.label).collect();
    let real = compute_metrics(&predict_real(&det.model, &test, false).unwrap(), &labels).unwrap();
    let synth = compute_metrics(
        &predict_synthesized(&det.model, &tr.model, &test, false).unwrap(),
        &labels,
    )
    .unwrap();
    let gap = (real.accuracy - synth.accuracy).abs();
    report(
        "A6",
        gap <= 2.0 && real.accuracy >= 95.0,
        format!(
            "real {:.2}% (need >= 95), synthesized {:.2}%, gap {gap:.2} points (need <= 2; reported reference 0.4), {} train / {} test, {:.0?}",
            real.accuracy,
            synth.accuracy,
            train.len(),
            test.len(),
            t.elapsed()
        )
    )
}

fn a07_metrics_oracle() -> bool {
    let mut r = rng(7);
    let lab = |b: bool| if b { Label::Faulty } else { Label::Healthy };
    let mut ok = true;
    for _ in 0..1000 {
        let n = r.random_range(1..100);
        let truth: Vec<Label> = (0..n).map(|_| lab(r.random_bool(0.5))).collect();
        let pred: Vec<Label> = (0..n).map(|_| lab(r.random_bool(0.5))).collect();
        ok &= metrics_match(&compute_metrics(&pred, &truth).unwrap(), &pred, &truth);
    }
    let f1 = (f1_score(100.0, 99.12) * 100.0).round() / 100.0;
    report(
        "A7",
        ok && f1 == 99.56,
        format!("1000 random vectors match enumeration: {ok}, F1(100, 99.12) = {f1:.2}"),
    )
}

fn a08_latency() -> bool {
    let net = OpUNet::<f32>::new(OpUNetConfig::default(), 0).unwrap();
    let x: Vec<f32> = (0..4096).map(|i| (i as f32 * 0.25).sin() * 0.8).collect();
    let b = benchmark_inference(&net, &x, 4096.0, 100, 5).unwrap();
    report(
        "A8",
        b.median_ms < 100.0,
        format!(
            "median {:.2} ms (min {:.2}, max {:.2}) per 1 s segment, real-time factor {:.1} (need > 10; reported reference 6.5 ms)",
            b.median_ms, b.min_ms, b.max_ms, b.real_time_factor
        )
    )
}

fn a09_parameters() -> bool {
    let cfg = OpUNetConfig::default();
    let mut net = OpUNet::<f32>::new(cfg.clone(), 0).unwrap();
    let n = net.parameter_count();
    let moved = changed_by_one_step(&mut net);
    let mut det = FaultClassifier::<f32>::new(ClassifierConfig::default(), 0).unwrap();
    let det_moved = changed_by_one_step(&mut det);
    let rel = (n as f64 - 377_000.0) / 377_000.0 * 100.0;
    println!("{}", cfg.describe());
    report(
        "A9",
        moved == n && det_moved == det.parameter_count() && rel.abs() <= 15.0,
        format!(
            "Op-UNet {n} parameters ({rel:+.1}% vs 377K), Adam moved {moved}; detector {} parameters, Adam moved {det_moved}",
            det.parameter_count()
        )
    )
}

fn pipeline_run(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_opvib"))
            .current_dir(dir)
            .args(["--reproducible", "--seed", "31"])
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let m = "data/manifest.tsv";
    run(&["gen-synthetic", "--healthy", "12", "--faulty", "12", "--out", "data"]);
    run(&[
        "train-detector",
        "--manifest",
        m,
        "--epochs",
        "5",
        "--out",
        "det.opvb",
        "--history",
        "det.json",
    ]);
    run(&[
        "train-transformer",
        "--manifest",
        m,
        "--detector",
        "det.opvb",
        "--iters",
        "40",
        "--val-interval",
        "10",
        "--out",
        "tr.opvb",
        "--log",
        "tr.log",
    ]);
    run(&[
        "evaluate",
        "--manifest",
        m,
        "--detector",
        "det.opvb",
        "--transformer",
        "tr.opvb",
        "--out",
        "report",
    ]);
    [
        "det.opvb",
        "det.json",
        "tr.opvb",
        "tr.log",
        "report/report.json",
        "report/report.txt",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect()
}

fn a10_determinism() -> bool {
    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_run(a.path());
    let second = pipeline_run(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    report(
        "A10",
        differing.is_empty(),
        format!(
            "{} artefacts compared byte for byte, differing: {differing:?}, {:.0?}",
            first.len(),
            t.elapsed()
        ),
    )
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        a01_gradients,
        a02_q1_reduction,
        a03_stft_oracle,
        a04_adjoint,
        a05_overfit_surrogate,
        a06_detection_gap,
        a07_metrics_oracle,
        a08_latency,
        a09_parameters,
        a10_determinism,
    ];
    // `cargo test --test acceptance -- a05 a08` runs a subset.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, f) in criteria.iter().enumerate() {
        let id = format!("a{:02}", i + 1);
        if filters.is_empty() || filters.iter().any(|x| id.contains(x.as_str())) {
            failed += usize::from(!f());
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};

use opvib::dataio::{
    generate_synthetic, load_dataset, load_manifest, load_recording, save_recording, segment_dataset, SyntheticSpec,
};
use opvib::evaluation::{benchmark_inference, compute_metrics, format_table, TableRow};
use opvib::losses::{ClassLossMode, SpectrumMode};
use opvib::models::{
    load_classifier, load_transformer, save_checkpoint, CheckpointMetadata, Model, OpUNet, OpUNetConfig,
};
use opvib::signal::{normalize_segment, Label, SegmentPair, Signal};
use opvib::training::{
    default_held_out_speed, predict_real, predict_synthesized, prepare_segments, split_dataset, train_fault_detector,
    train_transformer_from, DataSplit, IterationUnit, SplitConfig, TrainConfig,
};

use crate::{
    BenchmarkArgs, ClassLossArg, Cli, Command, DataArgs, EvaluateArgs, GenSyntheticArgs, SpectrumArg, SplitArg,
    SynthesizeArgs, TrainDetectorArgs, TrainTransformerArgs, UnitArg, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.reproducible {
        // A one-thread pool makes every parallel map run in order.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            warn!("could not pin the thread pool to one thread: {e}");
        }
    }
    info!("resolved config: {cli:?}");
    let (seed, reproducible) = (cli.seed, cli.reproducible);
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, seed),
        Command::TrainDetector(a) => train_detector(a, seed, reproducible),
        Command::TrainTransformer(a) => train_transformer_cmd(a, seed, reproducible),
        Command::Synthesize(a) => synthesize(a),
        Command::Evaluate(a) => evaluate(a, reproducible),
        Command::Benchmark(a) => benchmark(a, seed),
    }
}

fn gen_synthetic(a: GenSyntheticArgs, seed: u64) -> Result<()> {
    if a.healthy + a.faulty == 0 {
        return Err(usage("--healthy and --faulty are both 0; nothing to generate"));
    }
    if a.speeds.is_empty() {
        return Err(usage("--speeds needs at least one speed"));
    }
    let spec = SyntheticSpec {
        seed,
        num_healthy: a.healthy,
        num_faulty: a.faulty,
        sample_rate_hz: a.sample_rate,
        segment_samples: a.segment_samples,
        noise_level: a.noise,
        fault_frequency_hz: a.fault_frequency,
        fault_amplitude: a.fault_amplitude,
        speeds: a.speeds,
        ..SyntheticSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let (manifest, path) = generate_synthetic(&spec, &a.out)?;
    println!(
        "wrote {} pairs ({} healthy, {} faulty, {} WAV files) and {}",
        manifest.entries.len(),
        a.healthy,
        a.faulty,
        2 * manifest.entries.len(),
        path.display()
    );
    Ok(())
}

struct Loaded {
    split: DataSplit<f32>,
    rate: f64,
    segment_length: usize,
}

fn load_split(d: &DataArgs) -> Result<Loaded> {
    if !(d.segment_seconds > 0.0) {
        return Err(usage(format!(
            "--segment-seconds must be positive, got {}",
            d.segment_seconds
        )));
    }
    let manifest = load_manifest(&d.manifest).with_context(|| format!("loading manifest {}", d.manifest.display()))?;
    let pairs = load_dataset::<f32>(&manifest)?;
    let (records, rate) = segment_dataset(&pairs, d.segment_seconds)?;
    let prepared = prepare_segments(&records)?;
    let held_out = match &d.held_out_speed {
        Some(s) => s.clone(),
        None => default_held_out_speed(&prepared).context("manifest has no segments")?,
    };
    let split_cfg = SplitConfig {
        train_seconds: d.train_seconds,
        val_seconds: d.val_seconds,
        segment_seconds: d.segment_seconds,
    };
    let split = split_dataset(&prepared, &held_out, &split_cfg)?;
    info!(
        "held-out speed {}: {} train, {} validation, {} test segments at {rate} Hz",
        split.held_out_speed,
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let segment_length = (d.segment_seconds * rate).round() as usize;
    Ok(Loaded {
        split,
        rate,
        segment_length,
    })
}

fn base_config(seed: u64, reproducible: bool, o: &crate::OptimArgs, l: &Loaded) -> TrainConfig {
    TrainConfig {
        batch_size: o.batch_size,
        learning_rate: o.lr,
        seed,
        segment_length: l.segment_length,
        sample_rate_hz: l.rate,
        checkpoint_dir: o.checkpoint_dir.clone(),
        reproducible,
        ..TrainConfig::default()
    }
}

fn train_detector(a: TrainDetectorArgs, seed: u64, reproducible: bool) -> Result<()> {
    let l = load_split(&a.data)?;
    let cfg = TrainConfig {
        classifier_epochs: a.epochs,
        ..base_config(seed, reproducible, &a.optim, &l)
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = train_fault_detector(&l.split.train, &l.split.val, &cfg)?;
    let best = &out.history[out.best_epoch - 1];
    let meta = CheckpointMetadata {
        seed,
        iteration: out.best_epoch as u64,
        validation_loss: Some(best.val_mse),
    };
    save_checkpoint(&out.model, &a.out, l.rate, meta)?;
    if let Some(h) = &a.history {
        fs::write(h, serde_json::to_string_pretty(&out.history)?)
            .with_context(|| format!("writing {}", h.display()))?;
    }
    let last = out.history.last().expect("at least one epoch");
    println!(
        "best epoch {} (val_mse {:.6}, val accuracy {:.2}%); final val accuracy {:.2}%; saved {}",
        out.best_epoch,
        best.val_mse,
        best.val_accuracy,
        last.val_accuracy,
        a.out.display()
    );
    Ok(())
}

fn train_transformer_cmd(a: TrainTransformerArgs, seed: u64, reproducible: bool) -> Result<()> {
    let (detector, desc) =
        load_classifier::<f32>(&a.detector).with_context(|| format!("loading detector {}", a.detector.display()))?;
    let l = load_split(&a.data)?;
    if desc.sample_rate_hz != l.rate {
        bail!(
            "detector was trained at {} Hz but the dataset is {} Hz",
            desc.sample_rate_hz,
            l.rate
        );
    }
    let cfg = TrainConfig {
        max_iterations: a.iters,
        iteration_unit: match a.iter_unit {
            UnitArg::Updates => IterationUnit::Updates,
            UnitArg::Epochs => IterationUnit::Epochs,
        },
        lambda: a.lambda,
        validation_interval: a.val_interval,
        class_loss: match a.class_loss {
            ClassLossArg::Paired => ClassLossMode::PairedScores,
            ClassLossArg::Label => ClassLossMode::LabelTarget,
        },
        spectrum: match a.spectrum {
            SpectrumArg::Magnitude => SpectrumMode::Magnitude,
            SpectrumArg::Power => SpectrumMode::Power,
        },
        joint_training: a.joint,
        ..base_config(seed, reproducible, &a.optim, &l)
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let net = OpUNet::new(OpUNetConfig::default().with_segment_length(l.segment_length), seed)
        .map_err(|e| usage(e.to_string()))?;
    let out = train_transformer_from(net, &l.split.train, &l.split.val, &cfg, &detector)?;
    let meta = CheckpointMetadata {
        seed,
        iteration: out.best_iteration as u64,
        validation_loss: Some(out.best_validation.total),
    };
    save_checkpoint(&out.model, &a.out, l.rate, meta)?;
    if let Some(p) = &a.log {
        let text: String = out.history.iter().map(|r| r.log_line() + "\n").collect();
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "best iteration {} (val total {:.6}); saved {}",
        out.best_iteration,
        out.best_validation.total,
        a.out.display()
    );
    Ok(())
}

/// Split into model-sized segments, zero-padding the tail; each segment is
/// normalised on its own before inference.
fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let (net, desc) =
        load_transformer::<f32>(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let sound: Signal<f32> =
        load_recording(&a.sound).with_context(|| format!("loading sound {}", a.sound.display()))?;
    if sound.sample_rate_hz != desc.sample_rate_hz {
        bail!(
            "{} is sampled at {} Hz but the model was trained at {} Hz",
            a.sound.display(),
            sound.sample_rate_hz,
            desc.sample_rate_hz
        );
    }
    let len = net.config().segment_length;
    let total = sound.samples.len();
    if total == 0 {
        bail!("{} contains no samples", a.sound.display());
    }
    let mut out = Vec::with_capacity(total.next_multiple_of(len));
    let mut degenerate = 0usize;
    for (i, chunk) in sound.samples.chunks(len).enumerate() {
        let mut seg = chunk.to_vec();
        seg.resize(len, 0.0);
        let n = normalize_segment(&seg)?;
        if n.degenerate {
            warn!("segment {i} is constant; synthesized from zeros");
            degenerate += 1;
        }
        out.extend(net.synthesize(&n.values)?);
    }
    out.truncate(total);
    save_recording(&a.out, &Signal::new(out, sound.sample_rate_hz)?)?;
    println!(
        "synthesized {:.3} s ({} segments of {len} samples, {degenerate} degenerate) to {}",
        sound.duration_seconds(),
        total.div_ceil(len),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs, reproducible: bool) -> Result<()> {
    let (det, ddesc) =
        load_classifier::<f32>(&a.detector).with_context(|| format!("loading detector {}", a.detector.display()))?;
    let transformer = match &a.transformer {
        Some(p) => Some(load_transformer::<f32>(p).with_context(|| format!("loading transformer {}", p.display()))?),
        None => None,
    };
    let l = load_split(&a.data)?;
    if ddesc.sample_rate_hz != l.rate || det.config().segment_length != l.segment_length {
        bail!(
            "detector expects {}-sample segments at {} Hz, dataset gives {} at {} Hz",
            det.config().segment_length,
            ddesc.sample_rate_hz,
            l.segment_length,
            l.rate
        );
    }
    let data: Vec<SegmentPair<f32>> = match a.split {
        SplitArg::Train => l.split.train,
        SplitArg::Val => l.split.val,
        SplitArg::Test => l.split.test,
        SplitArg::All => [l.split.train, l.split.val, l.split.test].concat(),
    };
    if data.is_empty() {
        bail!("the {:?} split is empty", a.split);
    }
    let labels: Vec<Label> = data.iter().map(|r| r.label).collect();
    let (preds, test_name) = match &transformer {
        Some((net, tdesc)) => {
            if tdesc.sample_rate_hz != l.rate || net.config().segment_length != l.segment_length {
                bail!(
                    "transformer expects {}-sample segments at {} Hz, dataset gives {} at {} Hz",
                    net.config().segment_length,
                    tdesc.sample_rate_hz,
                    l.segment_length,
                    l.rate
                );
            }
            (
                predict_synthesized(&det, net, &data, reproducible)?,
                synthesized_name(&a.train_name),
            )
        }
        None => (predict_real(&det, &data, reproducible)?, a.train_name.clone()),
    };
    let report = compute_metrics(&preds, &labels)?;
    let table = format_table(&[TableRow {
        train_data: &a.train_name,
        test_data: &test_name,
        report: &report,
    }]);
    let json = report.to_json();
    print!("{table}");
    println!("{json}");
    if let Some(dir) = &a.out {
        write_report(dir, &json, &table)?;
    }
    Ok(())
}

/// `RA` -> `SA`: real data of machine A becomes synthesized data of machine A.
fn synthesized_name(train: &str) -> String {
    match train.strip_prefix('R') {
        Some(rest) => format!("S{rest}"),
        None => format!("S({train})"),
    }
}

fn write_report(dir: &Path, json: &str, table: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("report.json"), format!("{json}\n"))?;
    fs::write(dir.join("report.txt"), table)?;
    Ok(())
}

fn benchmark(a: BenchmarkArgs, seed: u64) -> Result<()> {
    let (net, rate) = match &a.model {
        Some(p) => {
            let (net, d) = load_transformer::<f32>(p).with_context(|| format!("loading model {}", p.display()))?;
            (net, d.sample_rate_hz)
        }
        None => (OpUNet::<f32>::new(OpUNetConfig::default(), seed)?, 4096.0),
    };
    let len = net.config().segment_length;
    let segment: Vec<f32> = (0..len).map(|i| (i as f32 * 0.37).sin()).collect();
    info!(
        "benchmarking {} parameters on {len}-sample segments",
        net.parameter_count()
    );
    let report =
        benchmark_inference(&net, &segment, rate, a.reps as usize, a.warmup).map_err(|e| usage(e.to_string()))?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        println!(
            "median {:.3} ms (min {:.3}, max {:.3}) over {} reps for {:.3} s segments; real-time factor {:.1}x",
            report.median_ms,
            report.min_ms,
            report.max_ms,
            report.repetitions,
            report.segment_seconds,
            report.real_time_factor
        );
    }
    Ok(())
}

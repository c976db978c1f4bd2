//! Chronological data splitting, fault-detector pre-training and cascaded
//! transformer training.
//!
//! Per-sample gradients are computed on independent tapes (in parallel
//! unless `reproducible` is set) and summed in batch order, so results do not
//! depend on the number of worker threads.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, MetricsReport};
use crate::losses::{
    loss_class, loss_class_tape, loss_stft, loss_stft_tape, loss_time, loss_time_tape, loss_total, ClassLossMode,
    LossBreakdown, SpectrumMode,
};
use crate::models::checkpoint::{save_checkpoint, CheckpointMetadata};
use crate::models::classifier::{predicted_label, target_scores, ClassifierConfig, FaultClassifier};
use crate::models::opunet::{OpUNet, OpUNetConfig};
use crate::models::Model;
use crate::numeric::adam::{adam_step, AdamConfig, AdamState};
use crate::numeric::autodiff::{Tape, Var};
use crate::numeric::tensor::{FeatureMap, Tensor};
use crate::scalar::{lit, Scalar};
use crate::signal::{Label, SegmentPair, StftConfig};

/// How `max_iterations` is counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationUnit {
    /// One mini-batch update per iteration.
    #[default]
    Updates,
    /// One pass over the training set per iteration.
    Epochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub iteration_unit: IterationUnit,
    pub classifier_epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
    pub segment_length: usize,
    pub sample_rate_hz: f64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Transformer updates between validation passes.
    pub validation_interval: usize,
    pub class_loss: ClassLossMode,
    pub spectrum: SpectrumMode,
    pub stft: StftConfig,
    /// Also update the cascaded detector (ablation only).
    pub joint_training: bool,
    /// Process samples serially.
    pub reproducible: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_iterations: 1000,
            iteration_unit: IterationUnit::Updates,
            classifier_epochs: 50,
            learning_rate: 1e-4,
            lambda: 100.0,
            seed: 0,
            segment_length: 4096,
            sample_rate_hz: 4096.0,
            checkpoint_dir: None,
            validation_interval: 50,
            class_loss: ClassLossMode::PairedScores,
            spectrum: SpectrumMode::Magnitude,
            stft: StftConfig::default(),
            joint_training: false,
            reproducible: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("max_iterations", self.max_iterations),
            ("classifier_epochs", self.classifier_epochs),
            ("segment_length", self.segment_length),
            ("validation_interval", self.validation_interval),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("sample_rate_hz", self.sample_rate_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.segment_length < self.stft.fft_size {
            return Err(Error::SegmentTooShort {
                len: self.segment_length,
                fft_size: self.stft.fft_size,
            });
        }
        Ok(())
    }
}

/// Chronological split boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_seconds: f64,
    pub val_seconds: f64,
    pub segment_seconds: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_seconds: 2100.0,
            val_seconds: 800.0,
            segment_seconds: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit<T> {
    pub train: Vec<SegmentPair<T>>,
    pub val: Vec<SegmentPair<T>>,
    pub test: Vec<SegmentPair<T>>,
    pub held_out_speed: String,
}

fn speed_key(s: &str) -> (f64, String) {
    (s.trim().parse::<f64>().unwrap_or(f64::NEG_INFINITY), s.to_string())
}

/// Distinct speeds in first-seen order.
pub fn available_speeds<T>(records: &[SegmentPair<T>]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.meta.speed) {
            out.push(r.meta.speed.clone());
        }
    }
    out
}

/// The highest numeric speed, used when none is requested.
pub fn default_held_out_speed<T>(records: &[SegmentPair<T>]) -> Option<String> {
    available_speeds(records).into_iter().max_by(|a, b| {
        let (ka, kb) = (speed_key(a), speed_key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
    })
}

/// Hold out one speed for testing; of the rest (in record order) the first
/// `train_seconds` go to training and the next `val_seconds` to validation.
/// When fewer segments are available the two boundaries shrink in
/// proportion.
pub fn split_dataset<T: Clone>(
    records: &[SegmentPair<T>],
    held_out_speed: &str,
    split: &SplitConfig,
) -> Result<DataSplit<T>> {
    let speeds = available_speeds(records);
    if !speeds.iter().any(|s| s == held_out_speed) {
        return Err(Error::UnknownSpeed {
            requested: held_out_speed.to_string(),
            available: speeds,
        });
    }
    let (test, rest): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.meta.speed == held_out_speed);
    let want_train = (split.train_seconds / split.segment_seconds).round() as usize;
    let want_val = (split.val_seconds / split.segment_seconds).round() as usize;
    let (n_train, n_val) = if rest.len() >= want_train + want_val {
        (want_train, want_val)
    } else {
        let frac = want_train as f64 / (want_train + want_val).max(1) as f64;
        let n_train = ((rest.len() as f64) * frac).round() as usize;
        log::info!(
            "{} non-held-out segments (< {} + {}); splitting {} train / {} validation",
            rest.len(),
            want_train,
            want_val,
            n_train,
            rest.len() - n_train
        );
        (n_train, rest.len() - n_train)
    };
    let mut rest = rest.into_iter();
    let train: Vec<_> = rest.by_ref().take(n_train).collect();
    let val: Vec<_> = rest.take(n_val).collect();
    Ok(DataSplit {
        train,
        val,
        test,
        held_out_speed: held_out_speed.to_string(),
    })
}

/// Normalise every pair into `[-1, 1]`, warning about constant segments.
pub fn prepare_segments<T: Scalar>(records: &[SegmentPair<T>]) -> Result<Vec<SegmentPair<T>>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (n, degenerate) = r.normalized()?;
            if degenerate {
                log::warn!("segment {i} is constant in sound or vibration; normalised to zeros");
            }
            Ok(n)
        })
        .collect()
}

/// Shuffled mini-batch indices; reshuffles after each pass, keeps the short
/// final batch.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, rng }
    }

    fn next(&mut self, batch: usize) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor = (start + batch).min(self.order.len());
        &self.order[start..self.cursor]
    }
}

fn map_samples<I, R, F>(items: &[I], serial: bool, f: F) -> Result<Vec<R>>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> Result<R> + Sync + Send,
{
    if serial {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

fn mean_gradients<T: Scalar>(mut per_sample: impl Iterator<Item = Vec<Tensor<T>>>, n: usize) -> Result<Vec<Tensor<T>>> {
    let mut acc = per_sample.next().ok_or(Error::Empty("batch"))?;
    for g in per_sample {
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b)?;
        }
    }
    let k = T::one() / T::from_usize_lossy(n);
    acc.iter_mut().for_each(|t| t.scale(k));
    Ok(acc)
}

fn signal_var<T: Scalar>(tape: &mut Tape<T>, values: &[T]) -> Result<Var> {
    Ok(tape.constant(Tensor::new(vec![1, values.len()], values.to_vec())?))
}

fn check_lengths<T>(data: &[SegmentPair<T>], len: usize) -> Result<()> {
    for (i, r) in data.iter().enumerate() {
        if r.sound.len() != len || r.vibration.len() != len {
            return Err(Error::Config(format!(
                "segment {i} has {}/{} samples, model expects {len}",
                r.sound.len(),
                r.vibration.len()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fault detector

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct DetectorOutcome<T> {
    /// Parameters from the epoch with the lowest validation MSE.
    pub model: FaultClassifier<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Mean detector MSE and accuracy (percent) on real vibration.
pub fn evaluate_detector<T: Scalar>(
    model: &FaultClassifier<T>,
    data: &[SegmentPair<T>],
    serial: bool,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let per = map_samples(data, serial, |r| {
        let s = model.scores(&r.vibration)?;
        let mse = loss_class(&s, &target_scores::<T>(r.label))?;
        Ok((mse.to_f64().unwrap_or(f64::NAN), predicted_label(s) == r.label))
    })?;
    let mse = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let acc = 100.0 * per.iter().filter(|p| p.1).count() as f64 / per.len() as f64;
    Ok((mse, acc))
}

fn detector_sample<T: Scalar>(model: &FaultClassifier<T>, r: &SegmentPair<T>) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let p = model.bind_params(&mut tape);
    let x = signal_var(&mut tape, &r.vibration)?;
    let out = model.forward_tape(&mut tape, x, &p)?;
    let target = tape.constant(Tensor::new(vec![2, 1], target_scores::<T>(r.label).to_vec())?);
    let loss = loss_class_tape(&mut tape, out, target)?;
    let value = tape.value(loss)?.item()?.to_f64().unwrap_or(f64::NAN);
    let grads = tape.backward(loss)?;
    let g = p.iter().map(|&v| grads.wrt(&tape, v)).collect::<Result<_>>()?;
    Ok((value, g))
}

/// Train the default detector architecture on labelled vibration.
pub fn train_fault_detector<T: Scalar>(
    train: &[SegmentPair<T>],
    val: &[SegmentPair<T>],
    cfg: &TrainConfig,
) -> Result<DetectorOutcome<T>> {
    let model = FaultClassifier::new(
        ClassifierConfig::default().with_segment_length(cfg.segment_length),
        cfg.seed,
    )?;
    train_fault_detector_from(model, train, val, cfg)
}

/// MSE against the `(+-1)` encoding, Adam, `classifier_epochs` passes; keeps
/// the epoch with the lowest validation MSE (training MSE when there is no
/// validation set).
pub fn train_fault_detector_from<T: Scalar>(
    mut model: FaultClassifier<T>,
    train: &[SegmentPair<T>],
    val: &[SegmentPair<T>],
    cfg: &TrainConfig,
) -> Result<DetectorOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let first = train[0].label;
    if train.iter().all(|r| r.label == first) {
        return Err(Error::SingleClass(first.to_string()));
    }
    let len = model.config().segment_length;
    check_lengths(train, len)?;
    check_lengths(val, len)?;
    let monitor = if val.is_empty() {
        log::warn!("no validation segments; selecting the detector epoch on training MSE");
        train
    } else {
        val
    };

    let mut adam = AdamState::new(model.parameters(), cfg.adam);
    let mut batcher = Batcher::new(train.len(), cfg.seed ^ 0xD37E_C70A);
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.classifier_epochs);
    let mut best: Option<(f64, usize, FaultClassifier<T>)> = None;

    for epoch in 1..=cfg.classifier_epochs {
        let mut loss_sum = 0.0;
        for _ in 0..batches_per_epoch {
            let batch: Vec<&SegmentPair<T>> = batcher.next(cfg.batch_size).iter().map(|&i| &train[i]).collect();
            let per = map_samples(&batch, cfg.reproducible, |r| detector_sample(&model, r))?;
            loss_sum += per.iter().map(|p| p.0).sum::<f64>();
            let n = per.len();
            let grads = mean_gradients(per.into_iter().map(|p| p.1), n)?;
            let mut params = model.parameters_mut();
            adam_step(&mut params, &grads, &mut adam, cfg.learning_rate)?;
        }
        let (val_mse, val_accuracy) = evaluate_detector(&model, monitor, cfg.reproducible)?;
        let rec = EpochRecord {
            epoch,
            train_mse: loss_sum / train.len() as f64,
            val_mse,
            val_accuracy,
        };
        log::info!(
            "epoch={} train_mse={:.6} val_mse={:.6} val_acc={:.2}",
            rec.epoch,
            rec.train_mse,
            rec.val_mse,
            rec.val_accuracy
        );
        if best.as_ref().is_none_or(|b| val_mse < b.0) {
            best = Some((val_mse, epoch, model.clone()));
            if let Some(dir) = &cfg.checkpoint_dir {
                let meta = CheckpointMetadata {
                    seed: cfg.seed,
                    iteration: epoch as u64,
                    validation_loss: Some(val_mse),
                };
                save_checkpoint(&model, dir.join("detector_best.opvb"), cfg.sample_rate_hz, meta)?;
            }
        }
        history.push(rec);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(DetectorOutcome {
        model,
        history,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Transformer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Batch-mean losses of this update.
    pub train: LossBreakdown,
    /// Most recent validation total.
    pub val_total: f64,
}

impl IterationRecord {
    pub fn log_line(&self) -> String {
        format!(
            "iter={} time={:.6} stft={:.6} class={:.6} total={:.6} val_total={:.6}",
            self.iteration,
            self.train.time_l1,
            self.train.stft_l1,
            self.train.class_mse,
            self.train.total,
            self.val_total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TransformerOutcome<T> {
    /// Parameters with the lowest validation total.
    pub model: OpUNet<T>,
    /// The cascaded detector after training (unchanged unless joint training).
    pub detector: FaultClassifier<T>,
    pub history: Vec<IterationRecord>,
    /// `(iteration, validation losses)`; iteration 0 is the initial model.
    pub validations: Vec<(usize, LossBreakdown)>,
    pub best_iteration: usize,
    pub best_validation: LossBreakdown,
}

struct SampleGrads<T> {
    loss: LossBreakdown,
    transformer: Vec<Tensor<T>>,
    detector: Option<Vec<Tensor<T>>>,
}

fn item_f64<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<f64> {
    Ok(tape.value(v)?.item()?.to_f64().unwrap_or(f64::NAN))
}

fn transformer_sample<T: Scalar>(
    net: &OpUNet<T>,
    det: &FaultClassifier<T>,
    r: &SegmentPair<T>,
    cfg: &TrainConfig,
) -> Result<SampleGrads<T>> {
    let mut tape = Tape::new();
    let p = net.bind_params(&mut tape);
    let c = if cfg.joint_training {
        det.bind_params(&mut tape)
    } else {
        det.bind_frozen(&mut tape)
    };
    let x = signal_var(&mut tape, &r.sound)?;
    let y = signal_var(&mut tape, &r.vibration)?;
    let synth = net.forward_tape(&mut tape, x, &p)?;
    let lt = loss_time_tape(&mut tape, y, synth)?;
    let ls = loss_stft_tape(&mut tape, y, synth, cfg.stft, cfg.spectrum)?;
    let score_synth = det.forward_tape(&mut tape, synth, &c)?;
    let reference = match cfg.class_loss {
        ClassLossMode::PairedScores => det.forward_tape(&mut tape, y, &c)?,
        ClassLossMode::LabelTarget => tape.constant(Tensor::new(vec![2, 1], target_scores::<T>(r.label).to_vec())?),
    };
    let lc = loss_class_tape(&mut tape, reference, score_synth)?;
    let lam: T = lit(cfg.lambda);
    let total = tape.linear_combination(&[(lc, T::one()), (lt, lam), (ls, lam)])?;
    let loss = loss_total(
        item_f64(&tape, lc)?,
        item_f64(&tape, lt)?,
        item_f64(&tape, ls)?,
        cfg.lambda,
    );
    let grads = tape.backward(total)?;
    let transformer = p.iter().map(|&v| grads.wrt(&tape, v)).collect::<Result<_>>()?;
    let detector = if cfg.joint_training {
        Some(c.iter().map(|&v| grads.wrt(&tape, v)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(SampleGrads {
        loss,
        transformer,
        detector,
    })
}

/// Per-sample losses of the cascade without recording a tape.
pub fn transformer_losses<T: Scalar>(
    net: &OpUNet<T>,
    det: &FaultClassifier<T>,
    r: &SegmentPair<T>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let synth = net.synthesize(&r.sound)?;
    let time = loss_time(&r.vibration, &synth)?;
    let stft = loss_stft(&r.vibration, &synth, cfg.stft, cfg.spectrum)?;
    let score_synth = det.scores(&synth)?;
    let reference = match cfg.class_loss {
        ClassLossMode::PairedScores => det.scores(&r.vibration)?,
        ClassLossMode::LabelTarget => target_scores(r.label),
    };
    let class = loss_class(&reference, &score_synth)?;
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    Ok(loss_total(f(class), f(time), f(stft), cfg.lambda))
}

/// Mean cascade losses over a data set.
pub fn evaluate_transformer<T: Scalar>(
    net: &OpUNet<T>,
    det: &FaultClassifier<T>,
    data: &[SegmentPair<T>],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let per = map_samples(data, cfg.reproducible, |r| transformer_losses(net, det, r, cfg))?;
    let mut acc = LossBreakdown::zero(cfg.lambda);
    per.iter().for_each(|l| acc.accumulate(l));
    Ok(acc.scaled(1.0 / per.len() as f64))
}

/// Train a freshly initialised default Op-UNet.
pub fn train_transformer<T: Scalar>(
    train: &[SegmentPair<T>],
    val: &[SegmentPair<T>],
    cfg: &TrainConfig,
    detector: &FaultClassifier<T>,
) -> Result<TransformerOutcome<T>> {
    let net = OpUNet::new(
        OpUNetConfig::default().with_segment_length(cfg.segment_length),
        cfg.seed,
    )?;
    train_transformer_from(net, train, val, cfg, detector)
}

/// Cascaded training: Adam on the Op-UNet against
/// `class + lambda * (time + stft)` with the detector frozen. Returns the
/// parameters with the best validation total (training total when there is
/// no validation set).
pub fn train_transformer_from<T: Scalar>(
    mut net: OpUNet<T>,
    train: &[SegmentPair<T>],
    val: &[SegmentPair<T>],
    cfg: &TrainConfig,
    detector: &FaultClassifier<T>,
) -> Result<TransformerOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let len = net.config().segment_length;
    if detector.config().segment_length != len {
        return Err(Error::Config(format!(
            "detector expects {}-sample segments, transformer {len}",
            detector.config().segment_length
        )));
    }
    check_lengths(train, len)?;
    check_lengths(val, len)?;
    let monitor = if val.is_empty() {
        log::warn!("no validation segments; selecting the transformer checkpoint on training loss");
        train
    } else {
        val
    };

    let mut det = detector.clone();
    let mut adam = AdamState::new(net.parameters(), cfg.adam);
    let mut det_adam = AdamState::new(det.parameters(), cfg.adam);
    let mut batcher = Batcher::new(train.len(), cfg.seed ^ 0x7AA5_F0E1);
    let updates = match cfg.iteration_unit {
        IterationUnit::Updates => cfg.max_iterations,
        IterationUnit::Epochs => cfg.max_iterations * train.len().div_ceil(cfg.batch_size),
    };

    let initial = evaluate_transformer(&net, &det, monitor, cfg)?;
    let mut validations = vec![(0, initial)];
    let mut best = (initial, 0, net.clone());
    let mut history = Vec::with_capacity(updates);
    let save_best = |net: &OpUNet<T>, it: usize, l: &LossBreakdown| -> Result<()> {
        if let Some(dir) = &cfg.checkpoint_dir {
            let meta = CheckpointMetadata {
                seed: cfg.seed,
                iteration: it as u64,
                validation_loss: Some(l.total),
            };
            save_checkpoint(net, dir.join("transformer_best.opvb"), cfg.sample_rate_hz, meta)?;
        }
        Ok(())
    };

    for it in 1..=updates {
        let batch: Vec<&SegmentPair<T>> = batcher.next(cfg.batch_size).iter().map(|&i| &train[i]).collect();
        let per = map_samples(&batch, cfg.reproducible, |r| transformer_sample(&net, &det, r, cfg))?;
        let n = per.len();
        let mut loss = LossBreakdown::zero(cfg.lambda);
        per.iter().for_each(|s| loss.accumulate(&s.loss));
        let loss = loss.scaled(1.0 / n as f64);
        let (tg, dg): (Vec<_>, Vec<_>) = per.into_iter().map(|s| (s.transformer, s.detector)).unzip();
        let grads = mean_gradients(tg.into_iter(), n)?;
        adam_step(&mut net.parameters_mut(), &grads, &mut adam, cfg.learning_rate)?;
        if cfg.joint_training {
            let dgrads = mean_gradients(dg.into_iter().flatten(), n)?;
            adam_step(&mut det.parameters_mut(), &dgrads, &mut det_adam, cfg.learning_rate)?;
        }

        if it % cfg.validation_interval == 0 || it == updates {
            let v = evaluate_transformer(&net, &det, monitor, cfg)?;
            validations.push((it, v));
            if v.total < best.0.total {
                best = (v, it, net.clone());
                save_best(&net, it, &v)?;
            }
        }
        let rec = IterationRecord {
            iteration: it,
            train: loss,
            val_total: validations.last().expect("initial validation").1.total,
        };
        log::info!("{}", rec.log_line());
        history.push(rec);
    }
    if best.1 == 0 {
        save_best(&best.2, 0, &best.0)?;
    }
    let (best_validation, best_iteration, model) = best;
    Ok(TransformerOutcome {
        model,
        detector: det,
        history,
        validations,
        best_iteration,
        best_validation,
    })
}

// ---------------------------------------------------------------------------
// Full protocol

/// Detector predictions on real vibration.
pub fn predict_real<T: Scalar>(det: &FaultClassifier<T>, data: &[SegmentPair<T>], serial: bool) -> Result<Vec<Label>> {
    map_samples(data, serial, |r| det.predict(&r.vibration))
}

/// Detector predictions on vibration synthesized from the sound.
pub fn predict_synthesized<T: Scalar>(
    det: &FaultClassifier<T>,
    net: &OpUNet<T>,
    data: &[SegmentPair<T>],
    serial: bool,
) -> Result<Vec<Label>> {
    map_samples(data, serial, |r| {
        let synth = net.synthesize(&r.sound)?;
        det.predict(&synth)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub held_out_speed: String,
    pub train_segments: usize,
    pub val_segments: usize,
    pub test_segments: usize,
    pub transformer_parameters: usize,
    pub detector_parameters: usize,
    pub detector_best_epoch: usize,
    pub transformer_best_iteration: usize,
    /// Detector on real test vibration.
    pub real: MetricsReport,
    /// Detector on synthesized test vibration.
    pub synthesized: MetricsReport,
    /// `|accuracy(real) - accuracy(synthesized)|` in percentage points.
    pub accuracy_gap: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome<T> {
    pub report: ExperimentReport,
    pub detector: DetectorOutcome<T>,
    pub transformer: TransformerOutcome<T>,
}

/// Normalise, split, pre-train the detector on real vibration, train the
/// cascaded transformer, then score the detector on real and on synthesized
/// test vibration.
pub fn run_experiment<T: Scalar>(
    cfg: &TrainConfig,
    records: &[SegmentPair<T>],
    split: &SplitConfig,
    held_out_speed: Option<&str>,
) -> Result<ExperimentOutcome<T>> {
    let prepared = prepare_segments(records)?;
    let held_out = match held_out_speed {
        Some(s) => s.to_string(),
        None => default_held_out_speed(&prepared).ok_or(Error::Empty("dataset"))?,
    };
    let data = split_dataset(&prepared, &held_out, split)?;
    if data.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let detector = train_fault_detector(&data.train, &data.val, cfg)?;
    let transformer = train_transformer(&data.train, &data.val, cfg, &detector.model)?;
    let labels: Vec<Label> = data.test.iter().map(|r| r.label).collect();
    let real = compute_metrics(&predict_real(&detector.model, &data.test, cfg.reproducible)?, &labels)?;
    let synthesized = compute_metrics(
        &predict_synthesized(&detector.model, &transformer.model, &data.test, cfg.reproducible)?,
        &labels,
    )?;
    let report = ExperimentReport {
        held_out_speed: held_out,
        train_segments: data.train.len(),
        val_segments: data.val.len(),
        test_segments: data.test.len(),
        transformer_parameters: transformer.model.parameter_count(),
        detector_parameters: detector.model.parameter_count(),
        detector_best_epoch: detector.best_epoch,
        transformer_best_iteration: transformer.best_iteration,
        accuracy_gap: (real.accuracy - synthesized.accuracy).abs(),
        real,
        synthesized,
    };
    Ok(ExperimentOutcome {
        report,
        detector,
        transformer,
    })
}

/// Synthesize the vibration for one normalised sound segment.
pub fn synthesize_segment<T: Scalar>(net: &OpUNet<T>, sound: &[T]) -> Result<Vec<T>> {
    Ok(net.forward(&FeatureMap::from_signal(sound)?)?.into_values())
}

//! Experiment execution: the training loop, evaluation, and the accuracy gate.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{self, CutoutConfig};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::flops::{self, FlopPolicy};
use crate::model::{load_checkpoint, save_checkpoint, ModelSpec, ResNet};
use crate::ops;
use crate::optim::Sgd;
use crate::prune::{self, FilterMask};
use crate::rng;


use super::config::{DataSource, ExperimentConfig};

/// One row of the per-epoch metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mega_flops: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_accuracy,test_accuracy,mega_flops";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{:.2}",
            self.epoch, self.train_loss, self.train_accuracy, self.test_accuracy, self.mega_flops
        )
    }
}

/// Final outcome of one run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunResult {
    pub method: String,
    pub depth: usize,
    pub mega_flops: f64,
    pub accuracy: f64,
    pub config_hash: String,
    pub checkpoint: String,
}

/// Names of the files a run writes under its output directory.
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const RESULT_FILE: &str = "result.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const COMPACT_FILE: &str = "compact.ckpt";

fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.data {
        DataSource::Cifar => {
            let dir = config.data_dir.as_ref().ok_or_else(|| {
                Error::config("data.source = cifar requires a data directory".to_string())
            })?;
            data::load_cifar10(dir)
        }
        DataSource::Synthetic { train_n, test_n, seed } => {
            let full = data::synthetic_dataset(train_n + test_n, data::NUM_CLASSES, *seed)?;
            let train = data::slice_range(&full, 0, *train_n, data::Split::Train);
            let test = data::slice_range(&full, *train_n, train_n + test_n, data::Split::Test);
            Ok((train, test))
        }
    }
}

/// Classify the whole dataset in eval mode; returns percent correct.
/// Argmax ties resolve to the lowest index.
pub fn evaluate(model: &ResNet<f32>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Degenerate("evaluate on an empty dataset".to_string()));
    }
    let mut correct = 0usize;
    for batch in data::sequential_batches(dataset, 256) {
        let logits = model.forward_eval(&batch.images)?;
        let (_, k) = logits.dims2()?;
        for (row, &label) in logits.data().chunks(k).zip(&batch.labels) {
            if argmax(row) == label as usize {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Outcome of the accuracy rule: a candidate passes when it is at most five
/// percentage points below its same-depth control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome {
    pub pass: bool,
    /// candidate accuracy minus control accuracy, percentage points.
    pub margin: f64,
}

pub const GATE_POINTS: f64 = 5.0;

pub fn accuracy_gate(candidate: &RunResult, control: &RunResult) -> Result<GateOutcome> {
    if candidate.depth != control.depth {
        return Err(Error::contract(format!(
            "accuracy gate compares equal depths, got {} vs {}",
            candidate.depth, control.depth
        )));
    }
    let margin = candidate.accuracy - control.accuracy;
    // The boundary case (exactly five points below) passes; the epsilon only
    // absorbs decimal-fraction rounding in the inputs.
    let pass = control.accuracy - candidate.accuracy <= GATE_POINTS + 1e-9;
    Ok(GateOutcome { pass, margin })
}

struct MetricsWriter {
    file: std::fs::File,
    path: PathBuf,
}

impl MetricsWriter {
    fn open(path: PathBuf, resume_rows: usize) -> Result<Self> {
        let io_err = |e| Error::io(path.display().to_string(), e);
        if resume_rows == 0 {
            let mut file = std::fs::File::create(&path).map_err(io_err)?;
            writeln!(file, "{}", MetricsRecord::CSV_HEADER).map_err(io_err)?;
            return Ok(MetricsWriter { file, path });
        }
        // Keep exactly the header plus one row per completed epoch.
        let text = std::fs::read_to_string(&path).map_err(io_err)?;
        let keep: Vec<&str> = text.lines().take(1 + resume_rows).collect();
        let mut file = std::fs::File::create(&path).map_err(io_err)?;
        for line in keep {
            writeln!(file, "{line}").map_err(io_err)?;
        }
        Ok(MetricsWriter { file, path })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_csv_row())
            .map_err(|e| Error::io(self.path.display().to_string(), e))
    }
}

/// Run one experiment to completion, writing metrics, timings, checkpoints,
/// and the final `result.json` under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, resume: bool) -> Result<RunResult> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let spec = ModelSpec::new(config.depth)?;
    let (train, test) = load_data(config)?;
    let stats = data::compute_stats(&train);
    let train = data::normalize(&train, &stats);
    let test = data::normalize(&test, &stats);

    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let mut model: ResNet<f32>;
    let mut optimizer = Sgd::new(config.lr, config.momentum, config.weight_decay)?;
    let mut start_epoch = 0usize;
    let mut current_masks: Vec<FilterMask> = Vec::new();
    if resume && checkpoint_path.exists() {
        let ckpt = load_checkpoint(&checkpoint_path)?;
        if ckpt.model.spec.depth != config.depth {
            return Err(Error::config(format!(
                "checkpoint depth {} does not match config depth {}",
                ckpt.model.spec.depth, config.depth
            )));
        }
        model = ckpt.model;
        start_epoch = ckpt.epoch;
        if let Some(vel) = ckpt.velocity {
            optimizer.set_velocities(vel);
        }
        current_masks = ckpt.masks.unwrap_or_default();
    } else {
        model = ResNet::build(spec, config.seeds.init);
    }

    let dense_report = flops::model_flops(&spec, 1.0, FlopPolicy::Dense)?;
    let mut metrics = MetricsWriter::open(out_dir.join(METRICS_FILE), start_epoch)?;
    let timings_path = out_dir.join(TIMINGS_FILE);
    let mut timings = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&timings_path)
        .map_err(|e| Error::io(timings_path.display().to_string(), e))?;
    if start_epoch == 0 {
        timings.set_len(0).map_err(|e| Error::io(timings_path.display().to_string(), e))?;
        writeln!(timings, "epoch,seconds").map_err(|e| Error::io(timings_path.display().to_string(), e))?;
    }

    for epoch in start_epoch..config.epochs {
        let wall = std::time::Instant::now();
        optimizer.learning_rate = config.lr_at(epoch);

        if config.method.uses_prune() && epoch % config.prune.frequency == 0 {
            let mut prune_rng = rng::stream(config.seeds.prune, epoch as u64);
            current_masks = prune::apply_soft_prune(&mut model, &config.prune, &mut prune_rng)?;
        }

        let (train_loss, train_accuracy) = train_one_epoch(&mut model, &mut optimizer, config, &train, epoch)?;
        let test_accuracy = evaluate(&model, &test)?;
        let mega_flops = if config.method.uses_prune() {
            flops::masked_model_flops(&model, &current_masks)?.mega_flops()
        } else {
            dense_report.mega_flops()
        };
        metrics.append(&MetricsRecord { epoch, train_loss, train_accuracy, test_accuracy, mega_flops })?;
        writeln!(timings, "{},{:.3}", epoch, wall.elapsed().as_secs_f64())
            .map_err(|e| Error::io(timings_path.display().to_string(), e))?;

        let masks_opt = if current_masks.is_empty() { None } else { Some(current_masks.as_slice()) };
        save_checkpoint(&checkpoint_path, &model, epoch + 1, masks_opt, Some(optimizer.velocities()), None)?;
    }

    // Final model: for pruning runs, one last zeroing pass then extraction.
    let result = if config.method.uses_prune() {
        let mut prune_rng = rng::stream(config.seeds.prune, config.epochs as u64);
        let final_masks = prune::apply_soft_prune(&mut model, &config.prune, &mut prune_rng)?;
        save_checkpoint(
            &checkpoint_path,
            &model,
            config.epochs,
            Some(&final_masks),
            Some(optimizer.velocities()),
            None,
        )?;
        let extraction = prune::finalize_compact(&model, &config.prune)?;
        let compact_path = out_dir.join(COMPACT_FILE);
        save_checkpoint(&compact_path, &extraction.model, config.epochs, None, None, Some(&extraction.plan))?;
        let accuracy = evaluate(&extraction.model, &test)?;
        let mega_flops = flops::compact_model_flops(&extraction.model)?.mega_flops();
        RunResult {
            method: config.method.key().to_string(),
            depth: config.depth,
            mega_flops,
            accuracy,
            config_hash: config.config_hash(),
            checkpoint: compact_path.display().to_string(),
        }
    } else {
        if start_epoch == 0 && config.epochs == 0 {
            save_checkpoint(&checkpoint_path, &model, 0, None, Some(optimizer.velocities()), None)?;
        }
        let accuracy = evaluate(&model, &test)?;
        RunResult {
            method: config.method.key().to_string(),
            depth: config.depth,
            mega_flops: dense_report.mega_flops(),
            accuracy,
            config_hash: config.config_hash(),
            checkpoint: checkpoint_path.display().to_string(),
        }
    };

    let result_path = out_dir.join(RESULT_FILE);
    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| Error::Ingestion(format!("result serialization failed: {e}")))?;
    std::fs::write(&result_path, json).map_err(|e| Error::io(result_path.display().to_string(), e))?;
    Ok(result)
}

fn train_one_epoch(
    model: &mut ResNet<f32>,
    optimizer: &mut Sgd<f32>,
    config: &ExperimentConfig,
    train: &Dataset,
    epoch: usize,
) -> Result<(f64, f64)> {
    let mut shuffle_rng = rng::stream(config.seeds.shuffle, epoch as u64);
    let mut aug_rng = rng::stream(config.seeds.augment, epoch as u64);
    let cutout_cfg: CutoutConfig = config.cutout;

    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut batches_done = 0usize;
    for (batch_index, batch) in data::batches(train, config.batch_size, &mut shuffle_rng).into_iter().enumerate()
    {
        let mut images = batch.images;
        if config.standard_augment {
            augment::map_batch_images(&mut images, |img| augment::standard_augment(img, &mut aug_rng));
        }
        if cutout_cfg.enabled {
            augment::map_batch_images(&mut images, |img| {
                let cy = rand::Rng::gen_range(&mut aug_rng, 0..data::IMAGE_SIDE);
                let cx = rand::Rng::gen_range(&mut aug_rng, 0..data::IMAGE_SIDE);
                augment::cutout_at(img, cutout_cfg.mask_size, cy, cx)
            });
        }
        let mut targets = batch.targets;
        if config.mixup.enabled {
            let (mixed_images, mixed_targets, _lambda) =
                augment::mixup_batch(&images, &targets, &config.mixup, &mut aug_rng)?;
            images = mixed_images;
            targets = mixed_targets;
        }

        model.zero_grad();
        let (logits, trace) = model.forward_train(&images)?;
        let (loss, grad_logits) = ops::softmax_cross_entropy(&logits, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {epoch}, batch {batch_index}, lr {}",
                optimizer.learning_rate
            )));
        }
        model.backward(&trace, &grad_logits)?;
        drop(trace);
        optimizer.step(&mut model.params_mut());

        loss_sum += loss;
        batches_done += 1;
        let (_, k) = logits.dims2()?;
        for (row, &label) in logits.data().chunks(k).zip(&batch.labels) {
            if argmax(row) == label as usize {
                correct += 1;
            }
        }
    }
    let train_loss = loss_sum / batches_done.max(1) as f64;
    let train_accuracy = 100.0 * correct as f64 / train.len() as f64;
    Ok((train_loss, train_accuracy))
}

/// Reusable single-epoch trainer for the pruning loop in tests and the
/// self-test: plain control training on the given dataset.
pub fn plain_epoch_hook<'a>(
    optimizer: &'a mut Sgd<f32>,
    config: &'a ExperimentConfig,
    train: &'a Dataset,
) -> impl FnMut(&mut ResNet<f32>, usize) -> Result<()> + 'a {
    move |model, epoch| {
        optimizer.learning_rate = config.lr_at(epoch);
        train_one_epoch(model, optimizer, config, train, epoch).map(|_| ())
    }
}

//! The training loop.
//!
//! Every epoch derives fresh random streams from the root seed and the epoch
//! number, so a run resumed from a checkpoint replays exactly what an
//! uninterrupted run would have done. The data stream shuffles `0..n` with
//! `SliceRandom::shuffle` and batches are consecutive chunks of that order.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use smcl_core::rng::{stream, AUGMENT, DATA, GATE, MASKING, TARGET};
use smcl_core::schedule::{drw_active, learning_rate, masking_gate};
use smcl_core::{
    drw_weights, effective_numbers, ClassHistogram, ClassIndex, DrwWeights, EvalReport,
    MinorWeightedDistribution, TrainConfig,
};

use crate::augment::Augmenter;
use crate::checkpoint::{self, CheckpointMeta};
use crate::dataset::{ImageSet, Normalization};
use crate::error::{contract, Error, IoContext, Result};
use crate::eval::evaluate;
use crate::losses::{objective, StepLabels};
use crate::model::{Model, ModelSpec};
use crate::optim::MomentumSgd;
use crate::record::config_fingerprint;
use crate::views::{fill_values, Batch, ViewBuilder, ViewRngs};

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRow {
    Step(StepRow),
    Epoch(EpochRow),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub mce: f64,
    pub msc: f64,
    pub total: f64,
    pub mean_area: f64,
    pub masked: bool,
    pub anchors_without_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub drw_active: bool,
    pub five_view: bool,
    pub mce: f64,
    pub msc: f64,
    pub total: f64,
    /// Accuracy of the clean source views during training, percent.
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub eval_many: Option<f64>,
    pub eval_med: Option<f64>,
    pub eval_few: Option<f64>,
}

/// Where a run keeps its files. `None` keeps everything in memory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join(crate::record::METRICS_FILE),
            checkpoint: dir.join(crate::record::CHECKPOINT_FILE),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub steps: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
    pub final_report: Option<EvalReport>,
}

pub struct Trainer {
    cfg: TrainConfig,
    fingerprint: String,
    model: Model,
    optimizer: MomentumSgd,
    train: ImageSet,
    eval: Option<ImageSet>,
    histogram: ClassHistogram,
    class_index: ClassIndex,
    target_dist: MinorWeightedDistribution,
    drw: DrwWeights,
    normalization: Normalization,
    augmenter: Augmenter,
    start_epoch: usize,
    files: Option<RunFiles>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl Trainer {
    /// A fresh run. Writes the initial checkpoint when `files` is given.
    pub fn new(
        cfg: TrainConfig,
        train: ImageSet,
        eval: Option<ImageSet>,
        dtype: DType,
        files: Option<RunFiles>,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = ModelSpec {
            arch: cfg.backbone,
            in_channels: train.channels(),
            num_classes: train.num_classes(),
            proj_dim: cfg.proj_dim,
        };
        let model = Model::new(spec, dtype, cfg.seed)?;
        let trainer = Self::assemble(cfg, model, train, eval, 0, files)?;
        if let Some(files) = &trainer.files {
            File::create(&files.metrics).at(&files.metrics)?;
            trainer.save_checkpoint(0)?;
        }
        Ok(trainer)
    }

    /// Continues the run whose checkpoint and metrics live in `files`.
    pub fn resume(train: ImageSet, eval: Option<ImageSet>, files: RunFiles) -> Result<Self> {
        let loaded = checkpoint::load(&files.checkpoint)?;
        let cfg = loaded
            .meta
            .config
            .clone()
            .ok_or_else(|| contract("checkpoint carries no training config"))?;
        let start = loaded.meta.epoch;
        truncate_metrics(&files.metrics, start)?;
        let mut trainer = Self::assemble(cfg, loaded.model, train, eval, start, Some(files))?;
        if trainer.fingerprint != loaded.meta.config_fingerprint {
            return Err(contract("checkpoint config fingerprint does not match its config"));
        }
        trainer.optimizer.set_buffers(loaded.momentum);
        Ok(trainer)
    }

    fn assemble(
        cfg: TrainConfig,
        model: Model,
        train: ImageSet,
        eval: Option<ImageSet>,
        start_epoch: usize,
        files: Option<RunFiles>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(contract("training set is empty"));
        }
        let histogram = train.histogram()?;
        let normalization = train.normalization();
        Ok(Self {
            fingerprint: config_fingerprint(&cfg),
            optimizer: MomentumSgd::new(cfg.momentum, cfg.weight_decay),
            class_index: ClassIndex::from_labels(train.labels(), train.num_classes())?,
            target_dist: effective_numbers(&histogram)?,
            drw: drw_weights(&histogram, cfg.drw_beta)?,
            augmenter: Augmenter::new(cfg.augmentation, normalization.mean.clone()),
            histogram,
            normalization,
            model,
            train,
            eval,
            start_epoch,
            files,
            cfg,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn histogram(&self) -> &ClassHistogram {
        &self.histogram
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn start_epoch(&self) -> usize {
        self.start_epoch
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// DRW weights in effect during `epoch`.
    pub fn drw_for_epoch(&self, epoch: usize) -> DrwWeights {
        if drw_active(epoch, &self.cfg) {
            self.drw.clone()
        } else {
            DrwWeights::inactive(self.histogram.num_classes())
        }
    }

    fn save_checkpoint(&self, completed_epochs: usize) -> Result<()> {
        let Some(files) = &self.files else {
            return Ok(());
        };
        let meta = CheckpointMeta {
            model: self.model.spec(),
            config_fingerprint: self.fingerprint.clone(),
            epoch: completed_epochs,
            normalization: self.normalization.clone(),
            config: Some(self.cfg.clone()),
            train_histogram: Some(self.histogram.counts().to_vec()),
        };
        checkpoint::save(&files.checkpoint, &self.model, Some(&self.optimizer), &meta)
    }

    /// Runs epochs `start_epoch..epochs`.
    ///
    /// A non-finite loss stops the run with [`Error::NonFiniteLoss`] before
    /// any update from that step; the checkpoint on disk is left untouched.
    pub fn run(&mut self) -> Result<TrainSummary> {
        self.run_until(self.cfg.epochs)
    }

    /// Runs epochs up to (not including) `stop`, as if the process were
    /// interrupted there. Only periodic checkpoints are written unless `stop`
    /// reaches the end of the schedule.
    pub fn run_until(&mut self, stop: usize) -> Result<TrainSummary> {
        let stop = stop.min(self.cfg.epochs);
        let metrics_path = self.files.as_ref().map(|f| f.metrics.clone());
        let mut summary = TrainSummary::default();
        for epoch in self.start_epoch..stop {
            let (steps, row) = self.run_epoch(epoch)?;
            if let Some(path) = &metrics_path {
                let mut rows: Vec<MetricRow> = steps.iter().cloned().map(MetricRow::Step).collect();
                rows.push(MetricRow::Epoch(row.clone()));
                append_metrics(path, &rows)?;
            }
            summary.steps.extend(steps);
            summary.epochs.push(row);
            let done = epoch + 1;
            let every = self.cfg.checkpoint_every;
            if done < self.cfg.epochs && every > 0 && done % every == 0 {
                self.save_checkpoint(done)?;
            }
        }
        self.start_epoch = self.start_epoch.max(stop);
        if stop < self.cfg.epochs {
            return Ok(summary);
        }
        self.save_checkpoint(self.cfg.epochs)?;
        if let Some(eval) = &self.eval {
            summary.final_report = Some(evaluate(&self.model, eval, &self.normalization, &self.histogram)?);
        }
        Ok(summary)
    }

    fn run_epoch(&mut self, epoch: usize) -> Result<(Vec<StepRow>, EpochRow)> {
        let seed = self.cfg.seed;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut stream(seed, DATA, epoch as u64));
        let mut augment_rng = stream(seed, AUGMENT, epoch as u64);
        let mut target_rng = stream(seed, TARGET, epoch as u64);
        let mut masking_rng = stream(seed, MASKING, epoch as u64);
        let mut gate_rng = stream(seed, GATE, epoch as u64);

        let lr = learning_rate(&self.cfg, epoch);
        let drw = self.drw_for_epoch(epoch);
        let five_view = self.cfg.five_view_epoch(epoch);
        let weights = self.cfg.objective();
        let vars = self.model.trainable_vars();
        let builder = ViewBuilder {
            data: &self.train,
            class_index: &self.class_index,
            target_dist: &self.target_dist,
            augmenter: &self.augmenter,
            mask_mode: self.cfg.mask_mode,
            mask_params: self.cfg.mask_params(),
            fill: fill_values(self.cfg.fill_policy, &self.normalization),
        };

        let mut rows = Vec::new();
        let (mut correct, mut seen) = (0usize, 0usize);
        for (step, sources) in order.chunks(self.cfg.batch_size).enumerate() {
            let masked = five_view && masking_gate(epoch, &self.cfg, &mut gate_rng);
            let mut rngs = ViewRngs {
                augment: &mut augment_rng,
                target: &mut target_rng,
                masking: &mut masking_rng,
            };
            let sets = builder.assemble(sources, five_view, masked, &mut rngs)?;
            let batch = Batch::from_view_sets(&sets, &self.normalization)?;
            let x = self.model.input(&batch.pixels, batch.num_rows(), batch.height, batch.width)?;
            let out = self.model.forward(&x, true)?;
            let labels = StepLabels::from(&batch);
            let obj = match objective(&out.logits, &out.features, &labels, &drw, &weights, self.cfg.strict_mixing) {
                Err(Error::Core(smcl_core::Error::NonFinite(_))) => {
                    return Err(Error::NonFiniteLoss { epoch, step })
                }
                other => other?,
            };
            let grads = obj.total.backward()?;
            self.optimizer.step(&vars, &grads, lr)?;

            let logits = out.logits.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?;
            for (s, &y) in batch.source_labels.iter().enumerate() {
                for view in 0..2 {
                    let (pred, _) = crate::model::argmax_confidence(&logits[s * batch.views_per_source + view]);
                    correct += usize::from(pred == y as usize);
                    seen += 1;
                }
            }
            let b = obj.breakdown;
            rows.push(StepRow {
                epoch,
                step,
                lr,
                mce: b.mce,
                msc: b.msc,
                total: b.total,
                mean_area: batch.mean_area(),
                masked,
                anchors_without_positives: obj.anchors_without_positives,
            });
        }
        if rows.iter().any(|r| r.anchors_without_positives > 0) {
            log::warn!(
                "epoch {epoch}: {} anchors had no positives",
                rows.iter().map(|r| r.anchors_without_positives).sum::<usize>()
            );
        }

        let every = self.cfg.eval_every;
        let report = match &self.eval {
            Some(set) if every > 0 && ((epoch + 1) % every == 0 || epoch + 1 == self.cfg.epochs) => {
                Some(evaluate(&self.model, set, &self.normalization, &self.histogram)?)
            }
            _ => None,
        };
        let collect = |f: fn(&StepRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        let row = EpochRow {
            epoch,
            lr,
            drw_active: drw.is_active(),
            five_view,
            mce: collect(|r| r.mce),
            msc: collect(|r| r.msc),
            total: collect(|r| r.total),
            train_acc: 100.0 * correct as f64 / seen.max(1) as f64,
            eval_acc: report.as_ref().map(|r| r.overall_acc),
            eval_many: report.as_ref().and_then(|r| r.group_acc.many),
            eval_med: report.as_ref().and_then(|r| r.group_acc.med),
            eval_few: report.as_ref().and_then(|r| r.group_acc.few),
        };
        log::info!(
            "epoch {epoch}: lr {lr} loss {:.4} train acc {:.2}",
            row.total,
            row.train_acc
        );
        Ok((rows, row))
    }
}

fn append_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let file = OpenOptions::new().append(true).create(true).open(path).at(path)?;
    let mut sink = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut sink, row)?;
        sink.write_all(b"\n").at(path)?;
    }
    sink.flush().at(path)
}

/// Reads every row of a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).at(path)?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.at(path)?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

/// Drops rows from epochs at or after `epoch`: work past the last checkpoint
/// is replayed on resume.
fn truncate_metrics(path: &Path, epoch: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<MetricRow> = read_metrics(path)?
        .into_iter()
        .filter(|row| match row {
            MetricRow::Step(s) => s.epoch < epoch,
            MetricRow::Epoch(e) => e.epoch < epoch,
        })
        .collect();
    let mut out = Vec::new();
    for row in kept {
        serde_json::to_writer(&mut out, &row)?;
        out.push(b'\n');
    }
    fs::write(path, out).at(path)
}

//! Training and evaluation loops.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccnn::ccnn::{Ctx, Model, StatUpdate};
use ccnn::checkpoint;
use ccnn::data::random_permutation;
use ccnn::optim::{kernel_l2_loss, lr_at, AdamW};
use ccnn::{Gradients, Module, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::tasks::{self, Batch, EvalOverride, Samples};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the saved checkpoint, 0 for the initialization.
    pub best_epoch: usize,
    pub test: Metrics,
    pub wall_time_s: f64,
    pub status: String,
}

/// Mean cross-entropy and accuracy of `[B, K]` logits.
fn score(logits: &Tensor<f32>, labels: &[usize]) -> (f64, usize) {
    let k = logits.shape()[1];
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
        loss += lse - row[y] as f64;
        let arg = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        correct += usize::from(arg == y);
    }
    (loss, correct)
}

/// Evaluation-mode loss and accuracy over a split.
pub fn evaluate(model: &Model<f32>, samples: &Samples, cfg: &ExperimentConfig) -> CliResult<Metrics> {
    let n = samples.len();
    let (mut loss, mut correct) = (0.0, 0);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let b = samples.batch(chunk)?;
        let logits = model.predict(&b.x, b.neighborhood.as_ref(), cfg.backend)?;
        let (l, c) = score(&logits, &b.labels);
        loss += l;
        correct += c;
    }
    Ok(Metrics {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

struct ShardOut {
    loss: f64,
    correct: usize,
    grads: Gradients<f32>,
    stats: Vec<StatUpdate>,
}

/// Forward and backward on one shard. The loss is the shard's mean
/// cross-entropy plus the kernel penalty.
fn shard_step(model: &Model<f32>, batch: &Batch, cfg: &ExperimentConfig, seed: u64) -> CliResult<ShardOut> {
    let tape = Tape::new();
    let mut ctx = Ctx::train(&tape, seed).with_backend(cfg.backend);
    ctx.neighborhood = batch.neighborhood.as_ref();
    let logits = model.forward(&mut ctx, tape.constant(batch.x.clone()))?;
    let ce = logits.cross_entropy(&batch.labels)?;
    let reg = kernel_l2_loss(&tape, &ctx.kernels, cfg.kernel_l2)?;
    let total = ce.add(reg)?;
    let loss = total.value().item() as f64;
    let (_, correct) = score(&logits.value(), &batch.labels);
    let grads = tape.backward(total)?;
    Ok(ShardOut {
        loss,
        correct,
        grads,
        stats: ctx.stat_updates,
    })
}

/// Size-weighted average of the shards' batch statistics.
fn merge_stats(parts: &[(usize, Vec<StatUpdate>)]) -> Vec<StatUpdate> {
    let total: usize = parts.iter().map(|p| p.0).sum();
    let mut out: Vec<StatUpdate> = Vec::new();
    for (n, stats) in parts {
        let w = *n as f64 / total as f64;
        for (i, s) in stats.iter().enumerate() {
            if out.len() <= i {
                out.push(StatUpdate {
                    prefix: s.prefix.clone(),
                    mean: vec![0.0; s.mean.len()],
                    var: vec![0.0; s.var.len()],
                });
            }
            for (a, b) in out[i].mean.iter_mut().zip(&s.mean) {
                *a += w * b;
            }
            for (a, b) in out[i].var.iter_mut().zip(&s.var) {
                *a += w * b;
            }
        }
    }
    out
}

/// One optimizer step's gradients, split across `cfg.threads` workers.
fn batch_step(model: &Model<f32>, samples: &Samples, idx: &[usize], cfg: &ExperimentConfig, seed: u64) -> CliResult<ShardOut> {
    let shards: Vec<&[usize]> = idx.chunks(idx.len().div_ceil(cfg.threads)).collect();
    let results: Vec<CliResult<ShardOut>> = if shards.len() == 1 {
        vec![samples.batch(idx).and_then(|b| shard_step(model, &b, cfg, seed))]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = shards
                .iter()
                .enumerate()
                .map(|(i, sh)| {
                    s.spawn(move || samples.batch(sh).and_then(|b| shard_step(model, &b, cfg, seed.wrapping_add(i as u64 + 1))))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let n = idx.len() as f64;
    let mut merged = ShardOut {
        loss: 0.0,
        correct: 0,
        grads: Gradients::default(),
        stats: Vec::new(),
    };
    let mut stats = Vec::new();
    for (sh, r) in shards.iter().zip(results) {
        let mut r = r?;
        let w = sh.len() as f64 / n;
        r.grads.scale(w as f32);
        merged.grads.merge(r.grads);
        merged.loss += w * r.loss;
        merged.correct += r.correct;
        stats.push((sh.len(), r.stats));
    }
    merged.stats = if stats.len() == 1 { stats.pop().unwrap().1 } else { merge_stats(&stats) };
    Ok(merged)
}

fn write_summary(out: &Path, record: &RunRecord, extra: serde_json::Value) -> CliResult<()> {
    let mut v = serde_json::to_value(record)?;
    if let (Some(obj), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
        obj.extend(e);
    }
    fs::write(out.join(SUMMARY_FILE), serde_json::to_vec_pretty(&v)?)?;
    Ok(())
}

fn checkpoint_meta(cfg: &ExperimentConfig, epoch: usize, val: Option<Metrics>) -> CliResult<serde_json::Value> {
    Ok(serde_json::json!({
        "experiment": serde_json::to_value(cfg)?,
        "config_hash": cfg.hash(),
        "epoch": epoch,
        "val": val,
    }))
}

/// Trains under `out`, writing `metrics.csv` (one flushed row per epoch), the
/// best-validation checkpoint and `summary.json`. Test metrics come from the
/// reloaded checkpoint.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let data = tasks::build(cfg)?;
    let mut model = Model::<f32>::new(cfg.model(data.n_classes), cfg.seed)?;
    let optim = cfg.optim();
    let mut adam = AdamW::<f32>::new();
    let ckpt = out.join(CHECKPOINT_DIR);
    checkpoint::save(&ckpt, &model, 0, 0, checkpoint_meta(cfg, 0, None)?)?;

    let mut csv = csv::Writer::from_writer(File::create(out.join(METRICS_FILE))?);
    csv.write_record(["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"])?;
    csv.flush()?;

    let mut record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        epochs: Vec::new(),
        best_epoch: 0,
        test: Metrics {
            loss: f64::NAN,
            accuracy: f64::NAN,
        },
        wall_time_s: 0.0,
        status: "running".into(),
    };
    let n = data.train.len();
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut best = f64::NEG_INFINITY;
    for epoch in 0..cfg.epochs {
        let order = random_permutation(n, cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut lr = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            lr = lr_at(epoch as f64 + bi as f64 / n_batches as f64, &optim);
            let step = adam.step + 1;
            let seed = cfg.seed ^ step.wrapping_mul(0x9e37_79b9);
            let r = batch_step(&model, &data.train, idx, cfg, seed)?;
            let abort = |msg: String, record: &mut RunRecord| -> CliResult<RunRecord> {
                record.status = "aborted".into();
                record.wall_time_s = start.elapsed().as_secs_f64();
                write_summary(out, record, serde_json::json!({ "abort_step": step, "abort_epoch": epoch }))?;
                Err(CliError::Numerical { step, epoch, msg })
            };
            if !r.loss.is_finite() {
                return abort(format!("loss is {}", r.loss), &mut record);
            }
            match adam.step(&mut model.params_mut(), &r.grads, lr, &optim) {
                Err(ccnn::Error::NonFinite { op }) => return abort(format!("non-finite gradient in {op}"), &mut record),
                other => other?,
            }
            model.commit_stats(&r.stats)?;
            loss_sum += r.loss * idx.len() as f64;
            correct += r.correct;
        }
        let val = evaluate(&model, &data.val, cfg)?;
        let row = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        csv.write_record([
            row.epoch.to_string(),
            format!("{:.8e}", row.lr),
            format!("{:.8e}", row.train_loss),
            format!("{:.8e}", row.train_acc),
            format!("{:.8e}", row.val_loss),
            format!("{:.8e}", row.val_acc),
        ])?;
        csv.flush()?;
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train {:.4} / {:.4}  val {:.4} / {:.4}  ({:.0}s)",
            row.epoch,
            row.lr,
            row.train_loss,
            row.train_acc,
            row.val_loss,
            row.val_acc,
            start.elapsed().as_secs_f64()
        );
        if !val.loss.is_finite() {
            record.status = "aborted".into();
            write_summary(out, &record, serde_json::json!({ "abort_step": adam.step, "abort_epoch": epoch }))?;
            return Err(CliError::Numerical {
                step: adam.step,
                epoch,
                msg: "validation loss is not finite".into(),
            });
        }
        if val.accuracy > best {
            best = val.accuracy;
            record.best_epoch = epoch + 1;
            checkpoint::save(&ckpt, &model, adam.step, epoch + 1, checkpoint_meta(cfg, epoch + 1, Some(val))?)?;
        }
        record.epochs.push(row);
    }
    let (best_model, _) = checkpoint::load::<f32>(&ckpt)?;
    record.test = evaluate(&best_model, &data.test, cfg)?;
    record.wall_time_s = start.elapsed().as_secs_f64();
    record.status = "ok".into();
    write_summary(out, &record, serde_json::json!({}))?;
    Ok(record)
}

/// Experiment config stored with a checkpoint.
pub fn checkpoint_config(dir: &Path) -> CliResult<ExperimentConfig> {
    let m = checkpoint::read_manifest(dir)?;
    let exp = m
        .meta
        .get("experiment")
        .ok_or_else(|| CliError::Config(format!("{} has no experiment config", dir.display())))?;
    Ok(serde_json::from_value(exp.clone())?)
}

/// Accepts a run directory or the checkpoint directory itself.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.join(checkpoint::MANIFEST).exists() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

/// Test metrics of a saved model, optionally at another resolution or in
/// another representation.
pub fn run_eval(checkpoint_path: &Path, ov: EvalOverride) -> CliResult<Metrics> {
    let dir = resolve_checkpoint(checkpoint_path);
    let cfg = checkpoint_config(&dir)?;
    let (model, _) = checkpoint::load::<f32>(&dir)?;
    let (test, n_classes) = tasks::build_test(&cfg, ov)?;
    if n_classes != model.config.n_classes {
        return Err(CliError::Config(format!(
            "checkpoint predicts {} classes, dataset has {n_classes}",
            model.config.n_classes
        )));
    }
    evaluate(&model, &test, &cfg)
}

/// Reads `metrics.csv` back into records.
pub fn read_metrics(path: &Path) -> CliResult<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<EpochRecord>, _>>()?)
}

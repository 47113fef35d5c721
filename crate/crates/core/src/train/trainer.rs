//! The training loop, evaluation and the CSV training log.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Normalization};
use super::config::{ModelPreset, TrainConfig};
use super::metrics::{relative_l2, relative_l2_samples};
use super::optim::{clip_grad_norm, Adam};
use super::schedule::{cosine_lr, curriculum_horizon};
use crate::error::{Error, Result};
use crate::model::{HnoModel, ModelConfig, Problem};
use crate::nn::ForwardCtx;
use crate::pde::{PdeDataset, ProblemConfig};
use crate::tensor::{no_grad, Tensor};

pub const LOG_HEADER: &str = "epoch,step,lr,horizon,train_rel_l2,val_rel_l2,wall_s";
pub const STEP_HEADER: &str = "epoch,step,lr,horizon,loss,grad_norm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Zero-based optimizer step.
    pub step: usize,
    pub lr: f64,
    pub horizon: usize,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub horizon: usize,
    pub train_rel_l2: f64,
    pub val_rel_l2: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lr).collect()
    }

    pub fn horizon_trace(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.horizon).collect()
    }

    /// One row per epoch under [`LOG_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.epoch, e.step, e.lr, e.horizon, e.train_rel_l2, e.val_rel_l2, e.wall_s
            );
        }
        s
    }

    /// One row per optimizer step under [`STEP_HEADER`].
    pub fn steps_csv(&self) -> String {
        let mut s = format!("{STEP_HEADER}\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.step, r.lr, r.horizon, r.loss, r.grad_norm
            );
        }
        s
    }
}

/// Model configuration for `ds` under the chosen preset.
pub fn model_config(cfg: &TrainConfig, ds: &PdeDataset) -> Result<ModelConfig> {
    let points = ds.points();
    let base = match (&ds.meta.config, cfg.model) {
        (ProblemConfig::DiffusionReaction { .. }, ModelPreset::Desk) => {
            ModelConfig::desk_1d(cfg.width)
        }
        (ProblemConfig::DiffusionReaction { .. }, ModelPreset::Paper) => ModelConfig::paper_1d(),
        (ProblemConfig::NavierStokes(ns), ModelPreset::Desk) => {
            ModelConfig::desk_2d(cfg.width, ns.resolution, ns.steps_in, ns.horizon)
        }
        (ProblemConfig::NavierStokes(ns), ModelPreset::Paper) => {
            let mut c = ModelConfig::paper_2d();
            c.input_channels = ns.steps_in;
            c.encoder_top_widths[0] = ns.steps_in + c.grid_channels;
            c.max_horizon = ns.horizon;
            c
        }
    };
    let c = ModelConfig {
        dropout: cfg.dropout,
        seed: cfg.seed,
        ..base.with_seq_len(points)
    };
    c.validate()?;
    Ok(c)
}

/// Checks that `ds` has the channels, horizon and problem `config` expects.
/// The number of grid points may differ.
pub fn check_compatible(config: &ModelConfig, ds: &PdeDataset) -> Result<()> {
    let steps = output_steps(config);
    let (cin, cout, g) = (ds.input.shape[2], ds.target.shape[2], ds.grid.shape[1]);
    if ds.meta.problem != config.problem
        || cin != config.input_channels
        || cout != steps * config.output_channels
        || g != config.grid_channels
    {
        return Err(Error::Config(format!(
            "dataset ({:?}, {cin} input / {cout} target channels, grid {g}) does not fit the checkpoint model \
             ({:?}, {} input channels, {} output steps)",
            ds.meta.problem, config.problem, config.input_channels, steps
        )));
    }
    Ok(())
}

/// Predicted time steps per sample.
pub fn output_steps(config: &ModelConfig) -> usize {
    match config.problem {
        Problem::DiffusionReaction1d => 1,
        Problem::NavierStokes2d => config.max_horizon,
    }
}

fn grid_tensor(ds: &PdeDataset) -> Result<Tensor<f32>> {
    Tensor::from_vec(ds.grid.data.clone(), &ds.grid.shape)
}

/// Standardized inputs `[B, P, C]` for the given sample indices.
pub fn gather_inputs(ds: &PdeDataset, idx: &[usize], norm: &Normalization) -> Result<Tensor<f32>> {
    let (p, c) = (ds.input.shape[1], ds.input.shape[2]);
    let mut data = Vec::with_capacity(idx.len() * p * c);
    for &i in idx {
        let sample = &ds.input.data[i * p * c..(i + 1) * p * c];
        data.extend(sample.iter().enumerate().map(|(j, &v)| {
            let ch = j % c;
            ((v as f64 - norm.input_mean[ch]) / norm.input_std[ch]) as f32
        }));
    }
    Tensor::from_vec(data, &[idx.len(), p, c])
}

/// Raw targets `[B, P, horizon]`, keeping the first `horizon` steps.
pub fn gather_targets(ds: &PdeDataset, idx: &[usize], horizon: usize) -> Result<Tensor<f32>> {
    let (p, t) = (ds.target.shape[1], ds.target.shape[2]);
    if horizon == 0 || horizon > t {
        return Err(Error::invalid(format!("horizon {horizon} outside 1..={t}")));
    }
    let mut data = Vec::with_capacity(idx.len() * p * horizon);
    for &i in idx {
        for row in ds.target.data[i * p * t..(i + 1) * p * t].chunks(t) {
            data.extend_from_slice(&row[..horizon]);
        }
    }
    Tensor::from_vec(data, &[idx.len(), p, horizon])
}

/// Network output mapped back to physical units.
pub fn predict(
    model: &HnoModel<f32>,
    norm: &Normalization,
    inputs: &Tensor<f32>,
    grid: &Tensor<f32>,
    horizon: usize,
    ctx: &mut ForwardCtx,
) -> Result<Tensor<f32>> {
    Ok(model
        .forward(inputs, grid, horizon, ctx)?
        .scale(norm.target_std)
        .add_scalar(norm.target_mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Relative L2 per sample; `None` for zero-norm targets.
    pub per_sample: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    /// Mean relative L2 per predicted time step (time-dependent problems).
    pub per_step: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Eval-mode predictions for the samples `idx` of `ds`, `[len(idx), P, steps]` flat.
pub fn predict_samples(
    model: &HnoModel<f32>,
    norm: &Normalization,
    ds: &PdeDataset,
    idx: &[usize],
    batch: usize,
) -> Result<Vec<f32>> {
    check_compatible(&model.config, ds)?;
    if let Some(&bad) = idx.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::invalid(format!(
            "sample index {bad} out of range for {} samples",
            ds.len()
        )));
    }
    let horizon = output_steps(&model.config);
    let grid = grid_tensor(ds)?;
    no_grad(|| {
        let mut out = Vec::with_capacity(idx.len() * ds.points() * horizon);
        for chunk in idx.chunks(batch.max(1)) {
            let x = gather_inputs(ds, chunk, norm)?;
            out.extend_from_slice(
                predict(model, norm, &x, &grid, horizon, &mut ForwardCtx::eval())?.data(),
            );
        }
        Ok(out)
    })
}

/// Predictions for every sample of `ds`.
pub fn predict_dataset(
    model: &HnoModel<f32>,
    norm: &Normalization,
    ds: &PdeDataset,
    batch: usize,
) -> Result<Vec<f32>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    predict_samples(model, norm, ds, &idx, batch)
}

/// Relative L2 statistics of flat predictions `[N, P, steps]` against the targets.
pub fn report(
    pred: &[f32],
    ds: &PdeDataset,
    steps: usize,
    time_dependent: bool,
) -> Result<EvalReport> {
    let len = ds.points() * steps;
    let per_sample = relative_l2_samples(pred, &ds.target.data, len)?;
    let valid: Vec<f64> = per_sample.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::invalid("evaluation: every target has zero norm"));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let std = (valid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / valid.len() as f64).sqrt();
    let per_step = time_dependent.then(|| {
        (0..steps)
            .map(|s| {
                let pick = |buf: &[f32]| -> Vec<f32> {
                    buf.iter().skip(s).step_by(steps).copied().collect()
                };
                let errs = relative_l2_samples(&pick(pred), &pick(&ds.target.data), ds.points())
                    .unwrap_or_default();
                let errs: Vec<f64> = errs.into_iter().flatten().collect();
                errs.iter().sum::<f64>() / errs.len().max(1) as f64
            })
            .collect()
    });
    Ok(EvalReport {
        samples: ds.len(),
        per_sample,
        mean,
        std,
        per_step,
    })
}

/// Relative L2 statistics of `model` on `ds` over the full horizon.
pub fn evaluate(
    model: &HnoModel<f32>,
    norm: &Normalization,
    ds: &PdeDataset,
    batch: usize,
) -> Result<EvalReport> {
    let pred = predict_dataset(model, norm, ds, batch)?;
    let steps = output_steps(&model.config);
    report(
        &pred,
        ds,
        steps,
        model.config.problem == Problem::NavierStokes2d,
    )
}

/// State to continue from: the last checkpoint and, if available, the best one.
pub struct Resume {
    pub last: Checkpoint,
    pub best: Option<Checkpoint>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub resume: Option<Resume>,
    /// Directory for checkpoints and logs.
    pub out: Option<&'a Path>,
    /// Stops after this many completed epochs, as if interrupted; the
    /// schedule still spans `epochs`.
    pub stop_after: Option<usize>,
}

pub struct TrainOutcome {
    pub model: HnoModel<f32>,
    pub log: TrainLog,
    pub last: Checkpoint,
    pub best: Option<Checkpoint>,
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed ^ 0x5348_5546_0000_0000 ^ epoch as u64,
    ));
    idx
}

fn dropout_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (step as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Horizon trained on during `epoch`.
pub fn epoch_horizon(cfg: &TrainConfig, model: &ModelConfig, epoch: usize) -> usize {
    let t = output_steps(model);
    if model.problem == Problem::NavierStokes2d && cfg.curriculum {
        curriculum_horizon(
            epoch,
            cfg.epochs,
            cfg.curriculum_gamma0,
            t,
            cfg.curriculum_end_fraction,
        )
    } else {
        t
    }
}

fn write_artifacts(
    dir: &Path,
    last: &Checkpoint,
    best: Option<&Checkpoint>,
    log: &TrainLog,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    last.write(&dir.join("last.ckpt"))?;
    if let Some(b) = best {
        b.write(&dir.join("best.ckpt"))?;
    }
    std::fs::write(dir.join("log.csv"), log.to_csv())?;
    std::fs::write(dir.join("steps.csv"), log.steps_csv())?;
    Ok(())
}

/// Trains on `train`, validating on `val` after every epoch with the full
/// horizon. With `opts.out`, `last.ckpt`, `best.ckpt`, `log.csv` and
/// `steps.csv` are written there at the checkpoint cadence.
pub fn train(
    train: &PdeDataset,
    val: &PdeDataset,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    let TrainOptions {
        resume,
        out,
        stop_after,
    } = opts;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(
            "training needs non-empty train and validation splits",
        ));
    }
    let (model, norm, mut adam, mut log, mut best, start) = match resume {
        Some(Resume { last, best }) => {
            let model = last.build_model()?;
            let adam = last
                .optimizer()
                .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
            let m = &last.manifest;
            let state = (m.epoch, m.step, m.best_val, m.initial_loss, m.bad_epochs);
            (
                model,
                m.normalization.clone(),
                adam,
                m.log.clone(),
                best,
                state,
            )
        }
        None => {
            let model = HnoModel::new(model_config(cfg, train)?)?;
            let adam = Adam::new(model.store.params(), cfg.adam);
            let norm = Normalization::fit(train, cfg.standardize);
            (
                model,
                norm,
                adam,
                TrainLog::default(),
                None,
                (0, 0, None, None, 0),
            )
        }
    };
    let (start_epoch, mut step, mut best_val, mut initial, mut bad_epochs) = start;
    check_compatible(&model.config, train)?;
    check_compatible(&model.config, val)?;
    let grid = grid_tensor(train)?;
    let total = cfg.total_steps(train.len());
    let params = model.store.params().to_vec();
    let clock = Instant::now();
    let mut last = None;
    let end = stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    for epoch in start_epoch..end {
        let horizon = epoch_horizon(cfg, &model.config, epoch);
        let order = epoch_order(cfg.seed, epoch, train.len());
        let (mut sum, mut lr) = (0.0, cfg.lr0);
        for batch in order.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total, cfg.lr0, cfg.lr_floor);
            let x = gather_inputs(train, batch, &norm)?;
            let y = gather_targets(train, batch, horizon)?;
            let mut ctx = ForwardCtx::train(dropout_seed(cfg.seed, step));
            let loss = relative_l2(&predict(&model, &norm, &x, &grid, horizon, &mut ctx)?, &y)?;
            model.store.zero_grad();
            loss.backward()?;
            let value = loss.item()? as f64;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: value,
                    initial: initial.unwrap_or(f64::NAN),
                });
            }
            let mut grads = Adam::collect_grads(&params)?;
            let grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm);
            adam.apply(&params, &grads, lr)?;
            initial.get_or_insert(value);
            sum += value * batch.len() as f64;
            log.steps.push(StepRecord {
                epoch,
                step,
                lr,
                horizon,
                loss: value,
                grad_norm,
            });
            step += 1;
        }
        let train_rel = sum / train.len() as f64;
        let val_rel = evaluate(&model, &norm, val, cfg.batch_size)?.mean;
        let wall_s = if cfg.record_wall_time {
            clock.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log.epochs.push(EpochRecord {
            epoch,
            step,
            lr,
            horizon,
            train_rel_l2: train_rel,
            val_rel_l2: val_rel,
            wall_s,
        });
        log::info!(
            "epoch {epoch}: train {train_rel:.5} val {val_rel:.5} horizon {horizon} lr {lr:.3e}"
        );
        let init = initial.unwrap_or(train_rel);
        bad_epochs = if train_rel > 10.0 * init {
            bad_epochs + 1
        } else {
            0
        };
        if bad_epochs >= 3 {
            return Err(Error::Diverged {
                epoch,
                loss: train_rel,
                initial: init,
            });
        }
        let improved = best_val.map_or(true, |b| val_rel < b);
        if improved {
            best_val = Some(val_rel);
        }
        let snap = |adam: Option<&Adam<f32>>, log: &TrainLog| {
            Checkpoint::capture(
                &model,
                cfg,
                &norm,
                epoch + 1,
                step,
                best_val,
                initial,
                bad_epochs,
                adam,
                log,
            )
        };
        if improved {
            best = Some(snap(None, &log));
        }
        let ckpt = snap(Some(&adam), &log);
        if let Some(dir) = out {
            if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == end {
                write_artifacts(dir, &ckpt, best.as_ref(), &log)?;
            }
        }
        last = Some(ckpt);
    }
    let last = match last {
        Some(c) => c,
        None => Checkpoint::capture(
            &model,
            cfg,
            &norm,
            start_epoch,
            step,
            best_val,
            initial,
            bad_epochs,
            Some(&adam),
            &log,
        ),
    };
    Ok(TrainOutcome {
        model,
        log,
        last,
        best,
    })
}

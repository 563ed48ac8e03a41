//! Training loops.

use std::time::Instant;

use ndarray::{Array2, Zip};
use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{slice_submodel, MaskSet, Model, Topology, Variant};
use crate::error::{Error, Result};
use crate::loss::{compressed_spectral_loss, joint_loss, LossConfig};

use super::data::{Batch, Dataset};
use super::optim::{adam_step, OptState};
use super::report::{EpochRecord, StageReport, StopReason, TrainReport};
use super::schedule::Plateau;
use super::{Strategy, TrainConfig};

/// Position of an optimizer step within a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Exit being trained layer-wise; `None` for joint training.
    pub stage: Option<usize>,
    /// 1-based within the stage.
    pub epoch: usize,
    /// 1-based within the epoch.
    pub step: usize,
    pub loss: f64,
}

/// Hooks called by the training loops.
pub trait TrainObserver {
    /// Before the first step of a stage.
    fn on_stage_start(&mut self, _stage: Option<usize>, _model: &Model<f32>) -> Result<()> {
        Ok(())
    }

    /// After every optimizer step.
    fn on_step(&mut self, _info: &StepInfo, _model: &Model<f32>) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _stage: Option<usize>, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Result of a training run. The model passed in holds the final
/// parameters; `best` holds those with the lowest validation objective.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: Model<f32>,
}

/// Layer-wise epoch cap for exit `stage`.
pub fn stage_epoch_cap(variant: Variant, stage: usize, cfg: &TrainConfig) -> usize {
    match variant.topology() {
        Topology::Chain => cfg.stage_epochs,
        Topology::Split | Topology::Concat => cfg.stage_epochs * (stage + 1),
    }
}

/// Dispatches on `strategy`.
pub fn train(
    model: &mut Model<f32>,
    strategy: Strategy,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    baseline: Option<&Model<f32>>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    match strategy {
        Strategy::Joint => train_joint(model, train_set, val_set, cfg, baseline, observer),
        Strategy::Layerwise => train_layerwise(model, train_set, val_set, cfg, baseline, observer),
    }
}

fn prepare(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    baseline: Option<&Model<f32>>,
) -> Result<()> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must both be non-empty".into(),
        ));
    }
    if model.variant().needs_baseline() {
        let base = baseline
            .ok_or_else(|| Error::MissingBaselineCheckpoint(model.variant().to_string()))?;
        if base.variant() != Variant::Baseline {
            return Err(Error::InvalidArgument(format!(
                "initial checkpoint is {}, expected baseline",
                base.variant()
            )));
        }
        model.load_matching(base)?;
    }
    Ok(())
}

/// Trains all exits at once on the unweighted sum of their losses.
pub fn train_joint(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    baseline: Option<&Model<f32>>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    prepare(model, train_set, val_set, cfg, baseline)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let exits = model.variant().exits().to_vec();
    let (stage, best) = run_stage(
        model,
        None,
        &exits,
        cfg.max_epochs,
        train_set,
        val_set,
        cfg,
        &mut rng,
        observer,
    )?;
    Ok(TrainOutcome {
        report: TrainReport {
            variant: model.variant(),
            strategy: Strategy::Joint,
            stages: vec![stage],
            wall_clock_secs: start.elapsed().as_secs_f64(),
            checkpoint_id: None,
        },
        best,
    })
}

/// Trains exit by exit. Each stage trains the sub-model ending at that
/// exit, restores its best parameters and freezes them.
pub fn train_layerwise(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    baseline: Option<&Model<f32>>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    if model.variant().exits().len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "layer-wise training needs a multi-exit variant, got {}",
            model.variant()
        )));
    }
    prepare(model, train_set, val_set, cfg, baseline)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stages = Vec::new();
    for &exit in model.variant().exits() {
        let cap = stage_epoch_cap(model.variant(), exit, cfg);
        let (report, best) = run_stage(
            model,
            Some(exit),
            &[exit],
            cap,
            train_set,
            val_set,
            cfg,
            &mut rng,
            observer,
        )?;
        *model = best;
        slice_submodel(model, exit)?.freeze();
        stages.push(report);
    }
    Ok(TrainOutcome {
        report: TrainReport {
            variant: model.variant(),
            strategy: Strategy::Layerwise,
            stages,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            checkpoint_id: None,
        },
        best: model.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: &mut Model<f32>,
    stage: Option<usize>,
    exits: &[usize],
    epoch_cap: usize,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    observer: &mut dyn TrainObserver,
) -> Result<(StageReport, Model<f32>)> {
    let mut opt = OptState::new(&model.params());
    let mut plateau = Plateau::new(cfg.lr, cfg.lr_decay, cfg.decay_every, cfg.patience);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut best = model.clone();
    let mut stop = StopReason::EpochCap;
    observer.on_stage_start(stage, model)?;

    for epoch in 1..=epoch_cap {
        let lr = plateau.lr();
        order.shuffle(rng);
        let mut sums = vec![0.0; exits.len()];
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(chunk)?;
            let losses = train_step(model, &batch, stage, exits, &cfg.loss)?;
            let total = joint_loss(&losses, &vec![1.0; losses.len()])?;
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: step + 1,
                    loss: total,
                });
            }
            adam_step(model.params_mut(), &mut opt, lr)?;
            observer.on_step(
                &StepInfo {
                    stage,
                    epoch,
                    step: step + 1,
                    loss: total,
                },
                model,
            )?;
            for (s, l) in sums.iter_mut().zip(&losses) {
                *s += l * chunk.len() as f64;
            }
            seen += chunk.len();
        }
        let val = evaluate_losses(model, val_set, stage, exits, cfg.batch_size, &cfg.loss)?;
        let val_objective: f64 = val.iter().sum();
        if !val_objective.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: 0,
                loss: val_objective,
            });
        }
        let decision = plateau.update(val_objective);
        if decision.improved {
            best = model.clone();
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: exits
                .iter()
                .zip(&sums)
                .map(|(&e, s)| (e, s / seen as f64))
                .collect(),
            val_loss: exits.iter().copied().zip(val).collect(),
            val_objective,
            improved: decision.improved,
        };
        observer.on_epoch(stage, &record)?;
        epochs.push(record);
        if decision.stop {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    Ok((
        StageReport {
            stage,
            epoch_cap,
            epochs,
            stop,
            best_epoch: plateau.best_epoch(),
            best_val: plateau.best().unwrap_or(f64::NAN),
        },
        best,
    ))
}

/// Masks for `exits`: all exits in one pass, or the sub-model ending at
/// `stage`.
fn forward_masks(
    model: &Model<f32>,
    features: &Array2<f32>,
    batch: usize,
    stage: Option<usize>,
) -> Result<(MaskSet<f32>, crate::arch::ForwardTape<f32>)> {
    let pass = match stage {
        None => model.forward_all_exits(features.view(), batch)?,
        Some(i) => model.run(features.view(), batch, i, &[i], true)?,
    };
    Ok((pass.masks, pass.tape))
}

/// Loss of `mask ⊙ noisy` against `clean`, and optionally the gradient
/// with respect to the mask.
fn masked_loss(
    mask: &Array2<f32>,
    noisy: &Array2<Complex32>,
    clean: &Array2<Complex32>,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f32>>)> {
    let mut estimate = noisy.clone();
    estimate.zip_mut_with(mask, |x, &m| *x *= m);
    let (loss, g) = compressed_spectral_loss(clean.view(), estimate.view(), cfg)?;
    if !want_grad {
        return Ok((loss, None));
    }
    let mut dmask = Array2::zeros(mask.dim());
    Zip::from(&mut dmask)
        .and(&g)
        .and(noisy)
        .for_each(|d, g, x| *d = g.re * x.re + g.im * x.im);
    Ok((loss, Some(dmask)))
}

fn train_step(
    model: &mut Model<f32>,
    batch: &Batch,
    stage: Option<usize>,
    exits: &[usize],
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let (masks, tape) = forward_masks(model, &batch.features, batch.batch, stage)?;
    let mut grads = MaskSet::new();
    let mut losses = Vec::with_capacity(exits.len());
    for &e in exits {
        let (l, g) = masked_loss(&masks[&e], &batch.noisy, &batch.clean, cfg, true)?;
        losses.push(l);
        grads.insert(e, g.expect("gradient requested"));
    }
    model.zero_grad();
    model.backward(&tape, &grads)?;
    Ok(losses)
}

/// Mean loss per exit over `data`; `stage` selects sub-model evaluation.
pub fn evaluate_losses(
    model: &Model<f32>,
    data: &Dataset,
    stage: Option<usize>,
    exits: &[usize],
    batch_size: usize,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut sums = vec![0.0; exits.len()];
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let (masks, _) = forward_masks(model, &batch.features, batch.batch, stage)?;
        for (s, &e) in sums.iter_mut().zip(exits) {
            let mask = masks.get(&e).ok_or_else(|| {
                Error::InvalidArgument(format!("exit {e} not computed for stage {stage:?}"))
            })?;
            *s += masked_loss(mask, &batch.noisy, &batch.clean, cfg, false)?.0 * chunk.len() as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / data.len().max(1) as f64).collect())
}

//! NLL training with Adam, warmup-then-cosine learning rate, fixed
//! validation subset and early stopping; grid search over configurations.

use ivos_core::Task;
use ivos_tensor::{Adam, GradBuffer, Graph, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::encoder::fit_standardization;
use crate::model::{EpochLog, TrainedModel, TrainingLog};
use crate::ModelError;

/// Batches are split into this many fixed chunks whose gradients are summed
/// in order, so results do not depend on the thread count.
const REDUCTION_CHUNKS: usize = 8;

/// Learning rate at fractional epoch `progress`: linear warmup from 0, then
/// cosine decay reaching 0 at `max_epochs`.
pub fn learning_rate_at(cfg: &ModelConfig, progress: f64) -> f64 {
    warmup_cosine(cfg.learning_rate, cfg.warmup_epochs, cfg.max_epochs, progress)
}

pub(crate) fn warmup_cosine(base: f64, warmup_epochs: usize, max_epochs: usize, progress: f64) -> f64 {
    let warm = warmup_epochs as f64;
    let total = max_epochs as f64;
    if progress < warm {
        return base * progress / warm;
    }
    let span = (total - warm).max(f64::MIN_POSITIVE);
    let frac = ((progress - warm) / span).clamp(0.0, 1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Tasks usable for likelihood training: non-empty context and targets.
fn usable(tasks: &[Task]) -> Vec<&Task> {
    tasks
        .iter()
        .filter(|t| !t.targets.is_empty() && t.context.iter().any(|m| m.t_hours < t.tau_hours))
        .collect()
}

/// Mean per-task NLL over `tasks` with the given parameters.
pub fn mean_task_nll(model: &TrainedModel, store: &ParamStore, tasks: &[&Task]) -> Result<f64, ModelError> {
    let losses: Vec<Option<f64>> = tasks
        .par_iter()
        .map(|t| {
            let mut g = Graph::new();
            Ok(model.task_loss(&mut g, store, t)?.map(|v| g.value(v).item()))
        })
        .collect::<Result<_, ModelError>>()?;
    let vals: Vec<f64> = losses.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(ModelError::NoTargets);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

fn batch_gradient(
    model: &TrainedModel,
    store: &ParamStore,
    batch: &[&Task],
) -> Result<(GradBuffer, f64, usize), ModelError> {
    let chunk = batch.len().div_ceil(REDUCTION_CHUNKS).max(1);
    let parts: Vec<(GradBuffer, f64, usize)> = batch
        .par_chunks(chunk)
        .map(|tasks| {
            let mut buf = GradBuffer::new(store);
            let mut loss = 0.0;
            let mut n = 0;
            for t in tasks {
                let mut g = Graph::new();
                if let Some(l) = model.task_loss(&mut g, store, t)? {
                    loss += g.value(l).item();
                    n += 1;
                    buf.accumulate(&g.backward(l)?);
                }
            }
            Ok((buf, loss, n))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut loss, mut n) = iter.next().expect("non-empty batch");
    for (b, l, k) in iter {
        total.add(&b);
        loss += l;
        n += k;
    }
    Ok((total, loss, n))
}

/// Trains from scratch. Standardization constants come from the training
/// tasks' measurements.
pub fn train(tasks: &[Task], val_tasks: &[Task], cfg: &ModelConfig, seed: u64) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    let train_set = usable(tasks);
    let val_set = usable(val_tasks);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::NoTargets);
    }
    let standardization = fit_standardization(train_set.iter().flat_map(|t| t.context.iter().chain(&t.targets)));
    let mut model = TrainedModel::new(cfg.clone(), standardization, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_d00d);

    // Validation subset, drawn once.
    let val_subset: Vec<&Task> = if val_set.len() <= cfg.val_epoch_size {
        val_set.clone()
    } else {
        let mut idx: Vec<usize> = (0..val_set.len()).collect();
        for i in 0..cfg.val_epoch_size {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..cfg.val_epoch_size].iter().map(|&i| val_set[i]).collect()
    };

    let mut store = model.params.clone();
    let mut adam = Adam::new(&store);
    let mut best = store.clone();
    let mut log = TrainingLog {
        best_val_nll: f64::INFINITY,
        ..TrainingLog::default()
    };
    let steps = cfg.epoch_size.div_ceil(cfg.batch_size);
    for epoch in 0..cfg.max_epochs {
        let picks: Vec<&Task> = (0..cfg.epoch_size)
            .map(|_| train_set[rng.random_range(0..train_set.len())])
            .collect();
        let mut epoch_loss = 0.0;
        let mut epoch_n = 0usize;
        let mut lr = 0.0;
        for (step, batch) in picks.chunks(cfg.batch_size).enumerate() {
            let (mut grads, loss, n) = batch_gradient(&model, &store, batch)?;
            if n == 0 {
                continue;
            }
            grads.scale(1.0 / n as f64);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    step,
                    loss: loss / n as f64,
                });
            }
            lr = learning_rate_at(cfg, epoch as f64 + (step + 1) as f64 / steps as f64);
            adam.step(&mut store, &grads, lr);
            epoch_loss += loss;
            epoch_n += n;
        }
        let val_nll = mean_task_nll(&model, &store, &val_subset)?;
        let train_nll = epoch_loss / epoch_n.max(1) as f64;
        if !val_nll.is_finite() {
            return Err(ModelError::Diverged {
                epoch,
                step: steps,
                loss: val_nll,
            });
        }
        log::info!("epoch {epoch}: lr {lr:.2e} train nll {train_nll:.4} val nll {val_nll:.4}");
        log.epochs.push(EpochLog {
            epoch,
            learning_rate: lr,
            train_nll,
            val_nll,
        });
        if val_nll < log.best_val_nll {
            log.best_val_nll = val_nll;
            log.best_epoch = epoch;
            best = store.clone();
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    model.params = best;
    model.log = log;
    Ok(model)
}

/// Trains every configuration and keeps the lowest validation NLL; the
/// earliest configuration wins ties. Diverged runs are skipped.
pub fn grid_search(
    space: &[ModelConfig],
    tasks: &[Task],
    val_tasks: &[Task],
    seed: u64,
) -> Result<TrainedModel, ModelError> {
    if space.is_empty() {
        return Err(ModelError::Config("empty search space".into()));
    }
    let mut best: Option<TrainedModel> = None;
    for cfg in space {
        match train(tasks, val_tasks, cfg, seed) {
            Ok(m) => {
                log::info!(
                    "grid: channels {} lr {:.0e} -> val nll {:.4}",
                    cfg.channels,
                    cfg.learning_rate,
                    m.log.best_val_nll
                );
                if best.as_ref().is_none_or(|b| m.log.best_val_nll < b.log.best_val_nll) {
                    best = Some(m);
                }
            }
            Err(ModelError::Diverged { epoch, step, loss }) => {
                log::warn!("grid: configuration diverged at epoch {epoch} step {step} (loss {loss})");
            }
            Err(e) => return Err(e),
        }
    }
    best.ok_or(ModelError::AllDiverged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear_and_cosine_ends_at_zero() {
        let cfg = ModelConfig::full();
        assert!((learning_rate_at(&cfg, 25.0) - 0.5 * cfg.learning_rate).abs() < 1e-18);
        assert_eq!(learning_rate_at(&cfg, 0.0), 0.0);
        assert!((learning_rate_at(&cfg, 50.0) - cfg.learning_rate).abs() < 1e-18);
        assert!(learning_rate_at(&cfg, 500.0).abs() < 1e-18);
        let mid = learning_rate_at(&cfg, 275.0);
        assert!((mid - 0.5 * cfg.learning_rate).abs() < 1e-12);
        let no_warm = ModelConfig::tiny();
        assert_eq!(learning_rate_at(&no_warm, 0.0), no_warm.learning_rate);
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, is_feasible};
use super::checkpoint::Checkpoint;
use super::data::{make_batch, validation_samples, Sample, TrainConfig};
use super::grad::{batch_gradient, loss};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::par;
use crate::real::Real;
use crate::tensor::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Completed epochs after this one.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtrack {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    /// Epoch of the checkpoint that was restored.
    pub restored_epoch: usize,
    pub lr_before: f64,
    pub lr_after: f64,
}

/// Hooks into the training loop. Every method has a no-op default.
pub trait TrainObserver<T> {
    fn on_epoch(&mut self, _stats: &EpochStats) {}

    fn on_backtrack(&mut self, _event: &Backtrack) {}

    /// Called for every periodic and best-so-far checkpoint.
    fn on_checkpoint(&mut self, _ckpt: &Checkpoint<T>, _best: bool) -> Result<()> {
        Ok(())
    }

    /// Lets tests inject faults into the observed batch loss.
    fn observe_loss(&mut self, _epoch: usize, _batch: usize, loss: f64) -> f64 {
        loss
    }
}

pub struct NoopObserver;

impl<T> TrainObserver<T> for NoopObserver {}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    /// Checkpoint with the lowest validation loss.
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
    pub history: Vec<EpochStats>,
    pub backtracks: Vec<Backtrack>,
    pub converged: bool,
}

#[derive(Debug)]
pub enum TrainError<T> {
    Failed(Error),
    /// Three consecutive backtracks without getting past the divergence.
    Unrecoverable {
        epoch: usize,
        last_good: Box<Checkpoint<T>>,
    },
}

impl<T> From<Error> for TrainError<T> {
    fn from(e: Error) -> Self {
        TrainError::Failed(e)
    }
}

impl<T> TrainError<T> {
    pub fn into_error(self) -> Error {
        match self {
            TrainError::Failed(e) => e,
            TrainError::Unrecoverable { epoch, .. } => Error::Diverged { epoch },
        }
    }
}

const MAX_CONSECUTIVE_BACKTRACKS: usize = 3;
const MIN_HISTORY_FOR_DIVERGENCE: usize = 10;

/// Trains a freshly initialised model.
pub fn train<T: Real>(
    dataset: &[Image<T>],
    validation: &[Image<T>],
    model: ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainReport<T>, TrainError<T>> {
    cfg.validate()?;
    let params = ModelParams::init(model, cfg.sigma_mid().max(f64::MIN_POSITIVE))?;
    resume(Checkpoint::new(params, cfg.clone()), dataset, validation, observer)
}

/// Continues training from `start` with its stored train config.
pub fn resume<T: Real>(
    start: Checkpoint<T>,
    dataset: &[Image<T>],
    validation: &[Image<T>],
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainReport<T>, TrainError<T>> {
    let cfg = start.train_config.clone();
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("training needs at least one image").into());
    }
    let val = validation_samples(validation, &cfg)?;
    let adaptive = start.params.config.adaptive;

    let mut state = start;
    let start_epoch = state.epoch;
    let mut latest = state.clone();
    let mut history: Vec<EpochStats> = Vec::new();
    let mut backtracks = Vec::new();
    let mut recent: Vec<f64> = Vec::new();
    let mut consecutive = 0usize;
    let mut diverged_at: Option<usize> = None;

    let mut best = state.clone();
    if best.best_validation_loss.is_infinite() && !val.is_empty() {
        best.best_validation_loss = validation_loss(&best.params, &val, adaptive)?;
        state.best_validation_loss = best.best_validation_loss;
    }
    let mut best_by_epoch: Vec<f64> = Vec::new();
    let mut converged = false;

    'epochs: while state.epoch < cfg.max_epochs {
        let epoch = state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&Image<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
            let batch = make_batch(&images, &cfg, &mut rng)?;
            let (batch_loss, grads) = match batch_gradient(&state.params, &batch) {
                Ok(g) => (g.loss, Some(g.grads)),
                Err(e) if e.is_numeric() => (f64::NAN, None),
                Err(e) => return Err(e.into()),
            };
            let batch_loss = observer.observe_loss(epoch, bi, batch_loss);

            if is_divergent(batch_loss, &recent, &cfg) || grads.is_none() {
                consecutive += 1;
                let lr_before = state.optimizer.lr;
                if consecutive >= MAX_CONSECUTIVE_BACKTRACKS {
                    return Err(TrainError::Unrecoverable {
                        epoch,
                        last_good: Box::new(latest),
                    });
                }
                let lr_after = lr_before * cfg.backtrack_factor;
                let event = Backtrack {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                    restored_epoch: latest.epoch,
                    lr_before,
                    lr_after,
                };
                observer.on_backtrack(&event);
                backtracks.push(event);
                diverged_at = Some(epoch);
                state = latest.clone();
                state.optimizer.lr = lr_after;
                history.retain(|h: &EpochStats| h.epoch <= state.epoch);
                best_by_epoch.truncate(state.epoch.saturating_sub(start_epoch));
                continue 'epochs;
            }

            let grads = grads.expect("checked above");
            let lr = state.optimizer.lr;
            adam_step(&mut state.params, &grads, &mut state.optimizer, lr);
            debug_assert!(is_feasible(&state.params));
            recent.push(batch_loss);
            if recent.len() > cfg.divergence_window.max(1) {
                recent.remove(0);
            }
            epoch_loss += batch_loss;
            batches += 1;
        }

        state.epoch += 1;
        if diverged_at.is_some_and(|e| state.epoch > e) {
            consecutive = 0;
            diverged_at = None;
        }
        if state.epoch % cfg.decay_every == 0 {
            state.optimizer.lr *= cfg.lr_decay;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            validation_loss(&state.params, &val, adaptive)?
        };
        let stats = EpochStats {
            epoch: state.epoch,
            train_loss,
            validation_loss: val_loss,
            lr: state.optimizer.lr,
        };
        observer.on_epoch(&stats);
        history.push(stats);

        if val_loss < best.best_validation_loss || !best.best_validation_loss.is_finite() {
            state.best_validation_loss = val_loss;
            best = state.clone();
            observer.on_checkpoint(&best, true)?;
        }
        if state.epoch % cfg.checkpoint_every == 0 {
            latest = state.clone();
            observer.on_checkpoint(&latest, false)?;
        }

        best_by_epoch.push(best.best_validation_loss);
        let w = cfg.convergence_window;
        if w > 0 && best_by_epoch.len() > w {
            let then = best_by_epoch[best_by_epoch.len() - 1 - w];
            let now = best.best_validation_loss;
            if then.is_finite() && (then - now) <= cfg.convergence_tol * then.abs() {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainReport {
        best,
        last: state,
        history,
        backtracks,
        converged,
    })
}

fn is_divergent(loss: f64, recent: &[f64], cfg: &TrainConfig) -> bool {
    if !loss.is_finite() {
        return true;
    }
    if recent.len() < MIN_HISTORY_FOR_DIVERGENCE {
        return false;
    }
    let mut sorted = recent.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    loss > cfg.divergence_factor * median
}

/// Mean per-image loss on fixed validation pairs.
pub(crate) fn validation_loss<T: Real>(params: &ModelParams<T>, val: &[Sample<T>], adaptive: bool) -> Result<f64> {
    let losses = par::map_slice(val, |s| -> Result<f64> {
        let out = params.forward(&s.y, adaptive.then_some(s.sigma))?;
        loss(&s.x, &out.x_hat)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / val.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(n: usize) -> Vec<Image<f64>> {
        (0..n)
            .map(|i| Image::from_fn(16, 16, |r, c| if (r + i) % 8 < 4 { 0.2 } else { 0.7 } + 0.01 * c as f64))
            .collect()
    }

    fn toy_config() -> (ModelConfig, TrainConfig) {
        let m = ModelConfig { k: 2, m: 4, filter_size: 3, stride: 1, adaptive: false, seed: 1 };
        let t = TrainConfig { batch_size: 2, crop_size: 12, max_epochs: 4, checkpoint_every: 2, lr0: 1e-2, ..TrainConfig::default() };
        (m, t)
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let (m, t) = toy_config();
        let t = TrainConfig { max_epochs: 0, ..t };
        let report = train(&toy_set(3), &[], m, &t, &mut NoopObserver).unwrap();
        assert_eq!(report.best.params, ModelParams::init(m, t.sigma_mid()).unwrap());
        assert!(report.history.is_empty());
    }

    #[test]
    fn divergence_rule() {
        let cfg = TrainConfig::default();
        assert!(is_divergent(f64::NAN, &[], &cfg));
        assert!(!is_divergent(100.0, &[1.0; 5], &cfg));
        assert!(is_divergent(5.1, &[1.0; 20], &cfg));
        assert!(!is_divergent(4.9, &[1.0; 20], &cfg));
    }

    struct Faulty {
        epoch: usize,
        fired: usize,
        limit: usize,
        events: Vec<Backtrack>,
    }

    impl TrainObserver<f64> for Faulty {
        fn observe_loss(&mut self, epoch: usize, batch: usize, loss: f64) -> f64 {
            if epoch == self.epoch && batch == 0 && self.fired < self.limit {
                self.fired += 1;
                f64::NAN
            } else {
                loss
            }
        }

        fn on_backtrack(&mut self, event: &Backtrack) {
            self.events.push(event.clone());
        }
    }

    #[test]
    fn injected_nan_restores_checkpoint_and_shrinks_lr() {
        let (m, t) = toy_config();
        let mut obs = Faulty { epoch: 3, fired: 0, limit: 1, events: vec![] };
        let report = train(&toy_set(4), &toy_set(2), m, &t, &mut obs).unwrap();
        assert_eq!(obs.events.len(), 1);
        let ev = &obs.events[0];
        assert_eq!(ev.restored_epoch, 2);
        assert_eq!(ev.lr_after, ev.lr_before * 0.8);
        assert_eq!(report.last.epoch, 4);
        assert_eq!(report.history.len(), 4);
    }

    #[test]
    fn repeated_divergence_is_unrecoverable() {
        let (m, t) = toy_config();
        let mut obs = Faulty { epoch: 1, fired: 0, limit: usize::MAX, events: vec![] };
        match train(&toy_set(4), &[], m, &t, &mut obs) {
            Err(TrainError::Unrecoverable { last_good, .. }) => assert_eq!(last_good.epoch, 0),
            other => panic!("expected unrecoverable divergence, got {:?}", other.map(|r| r.last.epoch)),
        }
        assert_eq!(obs.events.len(), 2);
    }

    #[test]
    fn training_is_deterministic() {
        let (m, t) = toy_config();
        let a = train(&toy_set(4), &toy_set(2), m, &t, &mut NoopObserver).unwrap();
        let b = train(&toy_set(4), &toy_set(2), m, &t, &mut NoopObserver).unwrap();
        assert_eq!(a.last.to_bytes(), b.last.to_bytes());
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{build_forward, Dropout};
use super::{ForecastError, ForecastSample, ModelWeights, TrainConfig, CLIP_NORM, MOMENTUM};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training pinball loss over the epoch's batches (dropout active).
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned; `None` means the starting weights
    /// were never beaten on validation.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn sample_loss_grad(
    weights: &ModelWeights,
    sample: &ForecastSample,
    index: usize,
    dropout: Option<Dropout<'_>>,
) -> Result<(f64, Vec<f64>), ForecastError> {
    let target = sample.target.clone().ok_or(ForecastError::MissingTarget(index))?;
    let (mut tape, out) = build_forward(weights, sample, dropout)?;
    let loss = tape.pinball(out, target, weights.config.quantiles.clone());
    let mut grad = vec![0.0; weights.params.len()];
    tape.backward(loss, &mut grad);
    Ok((tape.value(loss)[0], grad))
}

/// Sums per-sample results in index order so the total does not depend on
/// how the parallel map was scheduled.
fn reduce(parts: Vec<(f64, Vec<f64>)>, n_params: usize) -> (f64, Vec<f64>) {
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean pinball loss over steps, levels and samples, and its gradient with
/// respect to every parameter, in inference mode.
pub fn loss_and_gradients(weights: &ModelWeights, batch: &[ForecastSample]) -> Result<(f64, Vec<f64>), ForecastError> {
    if batch.is_empty() {
        return Err(ForecastError::EmptySet("batch"));
    }
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_loss_grad(weights, s, i, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(reduce(parts, weights.params.len()))
}

/// Mean pinball loss in inference mode.
pub fn evaluate_loss(weights: &ModelWeights, set: &[ForecastSample]) -> Result<f64, ForecastError> {
    if set.is_empty() {
        return Err(ForecastError::EmptySet("evaluation set"));
    }
    let losses = set
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let target = s.target.clone().ok_or(ForecastError::MissingTarget(i))?;
            let (mut tape, out) = build_forward(weights, s, None)?;
            let loss = tape.pinball(out, target, weights.config.quantiles.clone());
            Ok(tape.value(loss)[0])
        })
        .collect::<Result<Vec<f64>, ForecastError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mini-batch gradient descent with momentum, gradient-norm clipping,
/// linear learning-rate decay and early stopping. Returns the weights with
/// the lowest validation loss seen, counting the starting weights.
pub fn train(
    weights: &ModelWeights,
    train_set: &[ForecastSample],
    val_set: &[ForecastSample],
    cfg: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory), ForecastError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ForecastError::EmptySet("training set"));
    }
    if val_set.is_empty() {
        return Err(ForecastError::EmptySet("validation set"));
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((weights.clone(), history));
    }
    let mut current = weights.clone();
    let mut best = weights.clone();
    let mut best_val = evaluate_loss(weights, val_set)?;
    let mut velocity = vec![0.0; current.params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = rng_for(cfg.seed, "forecaster/shuffle");
    let mut since_best = 0;
    let dropout = current.config.dropout;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let label = format!("forecaster/dropout/{epoch}/{b}/{i}");
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &label));
                    sample_loss_grad(&current, &train_set[i], i, Some(Dropout { rate: dropout, rng: &mut rng }))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let (loss, mut grad) = reduce(parts, current.params.len());
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(ForecastError::Divergence { epoch: epoch + 1 });
            }
            if norm > CLIP_NORM {
                let s = CLIP_NORM / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            for ((p, v), g) in current.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = MOMENTUM * *v + g;
                *p -= lr * *v;
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = evaluate_loss(&current, val_set)?;
        if !val_loss.is_finite() || current.params.iter().any(|p| !p.is_finite()) {
            return Err(ForecastError::Divergence { epoch: epoch + 1 });
        }
        history.epochs.push(EpochRecord { epoch: epoch + 1, train_loss, val_loss, lr });
        if val_loss < best_val {
            best_val = val_loss;
            best = current.clone();
            history.best_epoch = Some(epoch + 1);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stopping_patience {
                history.stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    Ok((best, history))
}

/// [`train`] starting from pretrained weights, with a budget no larger than
/// the pretraining one.
pub fn finetune(
    global: &ModelWeights,
    local_train: &[ForecastSample],
    local_val: &[ForecastSample],
    fcfg: &TrainConfig,
    pretrain: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory), ForecastError> {
    if fcfg.initial_lr > pretrain.initial_lr {
        return Err(ForecastError::Config(format!(
            "finetune learning rate {} exceeds the pretraining rate {}",
            fcfg.initial_lr, pretrain.initial_lr
        )));
    }
    if fcfg.epochs > pretrain.epochs {
        return Err(ForecastError::Config(format!(
            "finetune epochs {} exceed pretraining epochs {}",
            fcfg.epochs, pretrain.epochs
        )));
    }
    train(global, local_train, local_val, fcfg)
}

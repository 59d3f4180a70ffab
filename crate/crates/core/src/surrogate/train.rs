use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fast::FastModel;
use super::graph::loss_on_tape;
use super::{SurrogateConfig, SurrogateModel};
use crate::dataset::{Dataset, SampleRef, Split};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch MSE on normalized targets.
    pub train_loss: f64,
    /// Validation RMSE in K.
    pub val_rmse: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_rmse: Option<f64>,
    pub stopped_early: bool,
    /// Epoch and loss at which training produced a non-finite loss; the
    /// parameters are then the last good ones.
    pub diverged: Option<(usize, f64)>,
}

impl TrainingMetrics {
    /// The divergence as an error, if there was one.
    pub fn divergence_error(&self) -> Option<Error> {
        self.diverged.map(|(epoch, loss)| Error::Diverged { epoch, loss })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub rmse: f64,
    /// Undefined for a single sample or constant targets.
    pub r2: Option<f64>,
}

pub fn evaluate_predictions(preds: &[f64], targets: &[f64]) -> Result<EvalReport> {
    if preds.len() != targets.len() {
        return Err(Error::Shape {
            what: "predictions",
            expected: targets.len(),
            got: preds.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty sample set".into()));
    }
    let n = targets.len() as f64;
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = (targets.len() > 1 && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(EvalReport {
        n: targets.len(),
        rmse: (ss_res / n).sqrt(),
        r2,
    })
}

/// Predictions in K for dataset samples, one window at a time.
pub fn predict_refs(model: &SurrogateModel, dataset: &Dataset, refs: &[SampleRef]) -> Result<Vec<f64>> {
    check_compatible(model, dataset)?;
    let mut fast = FastModel::new(model);
    let mut buf = vec![0.0; dataset.row_len()];
    refs.iter()
        .map(|&r| {
            dataset.fill_raw(r, &mut buf)?;
            fast.predict_raw(&buf)
        })
        .collect()
}

pub fn evaluate(model: &SurrogateModel, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    let refs = dataset.samples(split);
    let preds = predict_refs(model, dataset, &refs)?;
    let targets: Vec<f64> = refs.iter().map(|&r| dataset.target(r)).collect();
    evaluate_predictions(&preds, &targets)
}

fn check_compatible(model: &SurrogateModel, dataset: &Dataset) -> Result<()> {
    if model.config.window != dataset.window {
        return Err(Error::Config(format!(
            "model window {} differs from dataset window {}",
            model.config.window, dataset.window
        )));
    }
    if model.n_inputs != dataset.n_controllable() {
        return Err(Error::Shape {
            what: "input channels",
            expected: model.n_inputs,
            got: dataset.n_controllable(),
        });
    }
    Ok(())
}

fn fill_batch(dataset: &Dataset, model: &SurrogateModel, refs: &[SampleRef]) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut x = Array2::zeros((refs.len(), dataset.row_len()));
    let mut y = Vec::with_capacity(refs.len());
    for (mut row, &r) in x.rows_mut().into_iter().zip(refs) {
        dataset.fill_normalized(r, row.as_slice_mut().expect("standard layout"))?;
        y.push(model.norm.normalize_temp(dataset.target(r)));
    }
    Ok((x, y))
}

/// Minibatch Adam on the MSE of normalized targets with early stopping on
/// validation RMSE. The returned model carries the best validation
/// parameters; see [`TrainingMetrics::diverged`] for the failure case.
pub fn train(dataset: &Dataset, config: &SurrogateConfig) -> Result<SurrogateModel> {
    let mut model = SurrogateModel::init(config.clone(), dataset.norm.clone(), dataset.registry_hash.clone())?;
    check_compatible(&model, dataset)?;
    let mut train_refs = dataset.samples(Split::Train);
    if train_refs.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let mut val_refs = dataset.samples(Split::Val);
    if val_refs.is_empty() {
        log::warn!("validation split is empty; early stopping uses the training split");
        val_refs = train_refs.clone();
    }
    let val_targets: Vec<f64> = val_refs.iter().map(|&r| dataset.target(r)).collect();
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            clip_norm: config.clip_norm,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = seeded_rng(config.seed ^ 0x5eed_7a11);
    let mut metrics = TrainingMetrics::default();
    let mut best = model.params.clone();
    let mut best_rmse = f64::INFINITY;
    let mut since_best = 0usize;
    let mut lr = config.learning_rate;
    let per_epoch = match config.samples_per_epoch {
        0 => train_refs.len(),
        n => n.min(train_refs.len()),
    };
    'epochs: for epoch in 0..config.epochs {
        let started = Instant::now();
        train_refs.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in train_refs[..per_epoch].chunks(config.batch_size) {
            let (x, y) = fill_batch(dataset, &model, chunk)?;
            let (loss, grads) = loss_on_tape(&model, &x, &y);
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                log::error!("non-finite loss at epoch {epoch}; keeping the last good parameters");
                metrics.diverged = Some((epoch, loss));
                break 'epochs;
            }
            opt.step(&mut model.params, &grads);
            loss_sum += loss;
            batches += 1;
        }
        let preds = predict_refs(&model, dataset, &val_refs)?;
        let val = evaluate_predictions(&preds, &val_targets)?.rmse;
        if !val.is_finite() {
            metrics.diverged = Some((epoch, val));
            break;
        }
        metrics.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_rmse: val,
            learning_rate: lr,
        });
        log::info!(
            "epoch {epoch}: train mse {:.3e}, val rmse {val:.3e} K, lr {lr:.1e} ({:.1}s)",
            loss_sum / batches as f64,
            started.elapsed().as_secs_f64()
        );
        if val < best_rmse {
            best_rmse = val;
            best.clone_from(&model.params);
            metrics.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                metrics.stopped_early = true;
                break;
            }
            if config.lr_patience > 0 && since_best % config.lr_patience == 0 && lr > config.min_learning_rate {
                lr = (lr * 0.5).max(config.min_learning_rate);
                opt.set_learning_rate(lr);
            }
        }
    }
    if best_rmse.is_finite() {
        model.params = best;
        metrics.best_val_rmse = Some(best_rmse);
    } else if metrics.diverged.is_some() {
        // diverged before the first validation: fall back to the initialization
        model.params = SurrogateModel::init(config.clone(), dataset.norm.clone(), String::new())?.params;
    }
    model.metrics = metrics;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        let r = evaluate_predictions(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r.r2.unwrap() - 0.5).abs() < 1e-15);
        let perfect = evaluate_predictions(&[1.0, 5.0], &[1.0, 5.0]).unwrap();
        assert_eq!((perfect.rmse, perfect.r2), (0.0, Some(1.0)));
        let mean = evaluate_predictions(&[2.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mean.r2, Some(0.0));
        assert_eq!(evaluate_predictions(&[1.0], &[2.0]).unwrap().r2, None);
        assert!(evaluate_predictions(&[], &[]).is_err());
    }
}

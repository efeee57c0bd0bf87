//! Mini-batch Adam on mean squared error with held-out early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Example, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Share of examples held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 50,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.patience > 0
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the epoch's batch losses, weighted by batch size.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    #[serde(skip)]
    pub params: Vec<f64>,
    /// Loss on the training split before the first update.
    pub initial_loss: f64,
    pub curve: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 means the initialization).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

/// Mean loss over `examples`, evaluated in parallel and summed in order.
pub fn mean_loss(net: &Network, params: &[f64], examples: &[&Example]) -> Result<f64> {
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut scratch = vec![0.0; params.len()];
            net.loss_and_grad(params, ex, &mut scratch)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn batch_gradient(net: &Network, params: &[f64], batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = vec![0.0; params.len()];
            let l = net.loss_and_grad(params, ex, &mut g)?;
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Trains `net` from its seeded initialization.
pub fn train(net: &Network, examples: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if examples.len() < 2 || config.validation_fraction == 0.0 {
        0
    } else {
        ((examples.len() as f64 * config.validation_fraction).round() as usize).clamp(1, examples.len() - 1)
    };
    let val: Vec<&Example> = order[..n_val].iter().map(|&i| &examples[i]).collect();
    let mut train_set: Vec<&Example> = order[n_val..].iter().map(|&i| &examples[i]).collect();

    let mut params = net.init_params(config.seed);
    let targets: Vec<f64> = train_set.iter().flat_map(|e| e.targets.iter().copied()).collect();
    params[net.head_bias().offset] = targets.iter().sum::<f64>() / targets.len().max(1) as f64;

    let initial_loss = mean_loss(net, &params, &train_set)?;
    check_finite(initial_loss, 0, 0, "initial training loss")?;
    let mut best_val = if val.is_empty() {
        f64::INFINITY
    } else {
        mean_loss(net, &params, &val)?
    };
    let mut best = (0usize, params.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut curve = Vec::with_capacity(config.epochs);

    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step = 0i32;
    for epoch in 1..=config.epochs {
        train_set.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in train_set.chunks(config.batch_size).enumerate() {
            let (loss, grad) = batch_gradient(net, &params, batch)?;
            check_finite(loss, epoch, b, "batch loss")?;
            loss_sum += loss * batch.len() as f64;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("gradient of `{}` is not finite", param_name(net, i)),
                });
            }
            step += 1;
            let bc1 = 1.0 - config.beta1.powi(step);
            let bc2 = 1.0 - config.beta2.powi(step);
            for i in 0..params.len() {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
                params[i] -= config.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.epsilon);
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(net, &params, &val)?)
        };
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match val_loss {
            Some(vl) if vl < best_val => {
                best_val = vl;
                best = (epoch, params.clone());
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
            None => best = (epoch, params.clone()),
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        initial_loss,
        curve,
        best_epoch: best.0,
        stopped_early,
        n_train: train_set.len(),
        n_val,
    })
}

fn check_finite(loss: f64, epoch: usize, batch: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            batch,
            detail: format!("{what} is {loss}"),
        })
    }
}

fn param_name(net: &Network, index: usize) -> String {
    let mut offset = 0;
    for e in &net.layout.entries {
        let n: usize = e.shape.iter().product();
        if index < offset + n {
            return format!("{}[{}]", e.name, index - offset);
        }
        offset += n;
    }
    format!("#{index}")
}

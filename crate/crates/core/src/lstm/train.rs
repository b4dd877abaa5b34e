use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LstmParams, Tape, TrainingInstance};
use crate::error::{invalid, Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub hidden_dim: usize,
    /// Seeds parameter initialization and the per-epoch shuffles.
    pub rng_seed: u64,
    pub num_instances: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.05,
            batch_size: 32,
            clip_norm: 5.0,
            hidden_dim: super::DEFAULT_HIDDEN,
            rng_seed: 1,
            num_instances: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning_rate = {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(invalid("batch_size and hidden_dim must be positive"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(invalid("clip_norm must be positive"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            epochs: kv.get_or("epochs", d.epochs)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
            hidden_dim: kv.get_or("hidden_dim", d.hidden_dim)?,
            rng_seed: kv.get_or("train_seed", d.rng_seed)?,
            num_instances: kv.get_or("num_instances", d.num_instances)?,
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("epochs", self.epochs);
        kv.set("learning_rate", self.learning_rate);
        kv.set("batch_size", self.batch_size);
        kv.set("clip_norm", self.clip_norm);
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("train_seed", self.rng_seed);
        kv.set("num_instances", self.num_instances);
        kv
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams,
    /// Mean instance loss seen during each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch SGD with global-norm gradient clipping.
///
/// Each epoch shuffles the instance order with a generator seeded from
/// `config.rng_seed`, so the run is a pure function of its inputs.
pub fn train(
    init: LstmParams,
    instances: &[TrainingInstance],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if instances.is_empty() {
        return Err(invalid("training needs at least one instance"));
    }
    for inst in instances {
        if inst.features.len() != inst.labels.len() * init.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: inst.labels.len() * init.input_dim(),
                found: inst.features.len(),
            });
        }
    }
    let mut params = init;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x005e_ed0f_1a57);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut grad = vec![0.0; params.num_params()];
    let mut tape = Tape::default();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &ix in batch {
                let inst = &instances[ix];
                epoch_loss += params.accumulate_grad(
                    &inst.features,
                    &inst.labels,
                    scale,
                    &mut grad,
                    &mut tape,
                )?;
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            let step = if norm > config.clip_norm {
                config.learning_rate * config.clip_norm / norm
            } else {
                config.learning_rate
            };
            for (p, g) in params.as_flat_mut().iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let mean = epoch_loss / instances.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        loss_trace.push(mean);
    }
    Ok(TrainOutcome { params, loss_trace })
}

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::eval::heldout_accuracy;
use super::{distinct_rows, nll_and_gradient, Embedding, EmbeddingMeta, OBJECTIVE_CONVENTION};
use crate::error::{Error, Result};
use crate::triplets::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// Subgradient of the penalty added to the step, then clip at zero.
    #[default]
    Subgradient,
    /// Soft-threshold the batch rows after the likelihood step.
    Proximal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a held-out accuracy improvement.
    pub patience: usize,
    /// Emit a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub l1_mode: L1Mode,
    pub optimizer: Optimizer,
    /// Mean of the positive initialization distribution.
    pub init_mean: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 30,
            lambda: 0.0025,
            lr: 0.001,
            epochs: 500,
            batch_size: 4096,
            seed: 0,
            patience: 20,
            checkpoint_every: 0,
            l1_mode: L1Mode::Subgradient,
            optimizer: Optimizer::Adam,
            init_mean: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.init_mean > 0.0) {
            return bad("init_mean must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub embedding: Embedding,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best held-out snapshot when a held-out set is given, else the final
    /// state; columns sorted by descending mass.
    pub embedding: Embedding,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

struct Adam {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, x: &mut Array2<f64>, g: &Array2<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        ndarray::Zip::from(x)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(g)
            .for_each(|x, m, v, &g| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
    }
}

fn initial_values(n: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(cfg.init_mean, cfg.init_mean / 2.0).expect("valid normal");
    Array2::from_shape_simple_fn((n, cfg.dim), || loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            break v;
        }
    })
}

fn snapshot(values: &Array2<f64>, cfg: &TrainConfig, epoch: usize) -> Embedding {
    let meta = EmbeddingMeta {
        lambda: cfg.lambda,
        lr: cfg.lr,
        seed: cfg.seed,
        epoch,
        objective: OBJECTIVE_CONVENTION.to_string(),
    };
    Embedding { values: values.clone(), meta }
}

pub fn train(
    n_stimuli: usize,
    train_set: &[Observation],
    heldout: Option<&[Observation]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(n_stimuli, train_set, heldout, cfg, |_| Ok(()))
}

/// Mini-batch training with a checkpoint callback.
pub fn train_with<F>(
    n_stimuli: usize,
    train_set: &[Observation],
    heldout: Option<&[Observation]>,
    cfg: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&Checkpoint) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("no training judgments".into()));
    }
    if let Some(o) = train_set
        .iter()
        .chain(heldout.unwrap_or(&[]))
        .find(|o| o.members.iter().any(|m| m.0 >= n_stimuli))
    {
        return Err(Error::InvalidArgument(format!(
            "trial {} references a stimulus outside 0..{n_stimuli}",
            o.trial_id
        )));
    }
    let heldout = heldout.filter(|h| !h.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = initial_values(n_stimuli, cfg, &mut rng);
    let mut adam = Adam { m: Array2::zeros(x.raw_dim()), v: Array2::zeros(x.raw_dim()), t: 0 };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let mut last_good = (0usize, x.clone());
    let mut best: Option<(f64, usize, Array2<f64>)> = None;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i]));
            let (nll, mut grad) = nll_and_gradient(&x, &batch);
            let rows = distinct_rows(&batch);
            let scale = cfg.lambda / rows.len() as f64;
            let mut l1 = 0.0;
            for &r in &rows {
                for (g, &v) in grad.row_mut(r).iter_mut().zip(x.row(r)) {
                    l1 += v;
                    if cfg.l1_mode == L1Mode::Subgradient && v > 0.0 {
                        *g += scale;
                    }
                }
            }
            loss_sum += nll + scale * l1;
            n_batches += 1;
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut x, &grad, cfg.lr),
                Optimizer::Sgd => x.scaled_add(-cfg.lr, &grad),
            }
            if cfg.l1_mode == L1Mode::Proximal {
                let shrink = cfg.lr * scale;
                for &r in &rows {
                    x.row_mut(r).mapv_inplace(|v| v - shrink);
                }
            }
            x.mapv_inplace(|v| v.max(0.0));
        }
        let loss = loss_sum / n_batches as f64;
        if !loss.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                last_good_epoch: last_good.0,
                last_good: Box::new(snapshot(&last_good.1, cfg, last_good.0)),
            });
        }
        last_good = (epoch, x.clone());

        let acc = match heldout {
            Some(h) => Some(heldout_accuracy(&snapshot(&x, cfg, epoch), h)?),
            None => None,
        };
        history.push(EpochStats { epoch, loss, heldout_accuracy: acc });

        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            let mut e = snapshot(&x, cfg, epoch);
            e.sort_columns_by_mass();
            on_checkpoint(&Checkpoint { epoch, embedding: e })?;
        }

        if let Some(a) = acc {
            match &best {
                Some((b, _, _)) if a <= *b => since_best += 1,
                _ => {
                    best = Some((a, epoch, x.clone()));
                    since_best = 0;
                }
            }
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }

    let mut embedding = match best {
        Some((_, epoch, values)) => snapshot(&values, cfg, epoch),
        None => snapshot(&last_good.1, cfg, last_good.0),
    };
    embedding.sort_columns_by_mass();
    Ok(TrainOutcome { embedding, history, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { dim: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn paper_settings_are_valid() {
        for lambda in [0.0025, 0.004, 0.005] {
            let cfg = TrainConfig { lr: 0.001, lambda, ..Default::default() };
            assert!(cfg.validate().is_ok());
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(train(5, &[], None, &TrainConfig::default()).is_err());
    }
}

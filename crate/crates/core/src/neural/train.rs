use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Graph, Grads, MiniModel, Var};
use crate::{Error, Result};

/// A differentiable per-example loss.
pub trait Objective {
    type Example;

    /// Heads this objective trains; they are marked trained afterwards.
    fn heads(&self) -> &[&'static str];

    fn loss<'m>(&self, model: &'m MiniModel, g: &mut Graph<'m>, example: &Self::Example) -> Result<Var>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub epochs: usize,
    /// Caps the number of optimizer steps regardless of `epochs`.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 8,
            grad_accum: 1,
            epochs: 10,
            max_steps: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean example loss of every optimizer step.
    pub losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn initial(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Loss and gradients of one example.
pub fn example_grads<O: Objective>(model: &MiniModel, objective: &O, example: &O::Example) -> Result<(f64, Grads)> {
    let mut g = model.graph();
    let loss = objective.loss(model, &mut g, example)?;
    let value = g.scalar(loss);
    Ok((value, g.backward(loss)))
}

/// Minibatch Adam training. Examples are reshuffled every epoch from a
/// generator seeded with `cfg.seed`, and gradients are summed in example
/// order, so runs are reproducible.
pub fn train<O: Objective>(
    model: &mut MiniModel,
    examples: &[O::Example],
    objective: &O,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    if cfg.batch_size == 0 || cfg.grad_accum == 0 {
        return Err(Error::InvalidConfig("batch_size and grad_accum must be ≥ 1".into()));
    }
    if !model.params.is_finite() {
        return Err(Error::Contract("initial parameters are not finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.optimizer.clone(), &model.params);
    let per_step = cfg.batch_size * cfg.grad_accum;
    let steps_per_epoch = examples.len().div_ceil(per_step);
    let full = cfg.epochs.saturating_mul(steps_per_epoch);
    let total = cfg.max_steps.map_or(full, |m| m.min(full));

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(total);
    for step in 0..total {
        let mut grads = Grads::new(model.params.len());
        let mut batch = Vec::with_capacity(per_step);
        for _ in 0..per_step {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut sum = 0.0;
        for &i in &batch {
            let (loss, g) = example_grads(model, objective, &examples[i])?;
            if !loss.is_finite() || !g.is_finite() {
                return Err(Error::NonFiniteLoss { step, batch, loss });
            }
            sum += loss;
            grads.merge(&g);
        }
        grads.scale(1.0 / batch.len() as f64);
        opt.step(&mut model.params, &grads);
        losses.push(sum / batch.len() as f64);
    }
    for h in objective.heads() {
        model.mark_trained(h);
    }
    Ok(TrainReport { losses, steps: total })
}

/// Mean loss over `examples` without updating anything.
pub fn mean_loss<O: Objective>(model: &MiniModel, objective: &O, examples: &[O::Example]) -> Result<f64> {
    let mut sum = 0.0;
    for ex in examples {
        let mut g = model.graph();
        let l = objective.loss(model, &mut g, ex)?;
        sum += g.scalar(l);
    }
    Ok(sum / examples.len().max(1) as f64)
}

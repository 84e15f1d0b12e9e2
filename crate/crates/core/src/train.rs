//! Fitting grad networks: loss, Adam, learning-rate schedule and the loop.

use std::fmt::Write as _;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradnet::AutoIntPair;
use crate::graph::{backward, record_tape, GraphError};
use crate::nets::params::{GradientSet, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iter} (learning rate {lr:e})")]
    NonFinite { iter: usize, lr: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut cot = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let e = p - t;
        loss += e * e;
        cot.push(2.0 * e / n);
    }
    Ok((loss / n, cot))
}

fn default_lr() -> f64 {
    5e-4
}
fn default_decay() -> f64 {
    0.2
}
fn default_decay_every() -> usize {
    100_000
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl TrainConfig {
    pub fn new(max_iters: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            decay_factor: default_decay(),
            decay_every: default_decay_every(),
            max_iters,
            seed,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(TrainError::Config("decay_factor must be in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(TrainError::Config("decay_every must be positive".into()));
        }
        Ok(())
    }

    /// Step schedule: `lr * decay^floor(iter / decay_every)`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((iter / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            m: GradientSet::zeros_like(params),
            v: GradientSet::zeros_like(params),
            step: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn from_config(params: &ParamStore, cfg: &TrainConfig) -> Self {
        AdamState {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            ..Self::new(params)
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if !grads.is_congruent(params) || !state.m.is_congruent(params) {
        return Err(TrainError::Shape(
            "gradients or optimizer state do not match the parameters".into(),
        ));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    };
    for (((l, g), m), v) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        Zip::from(&mut l.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(update);
        Zip::from(&mut l.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(update);
    }
    Ok(())
}

/// What the grad-network outputs are compared against.
#[derive(Debug, Clone)]
pub enum Target {
    /// One target row per input row.
    Values(Array2<f64>),
    /// Consecutive groups of `samples_per_ray` input rows form one Monte-Carlo
    /// estimate `scale / T * sum(Psi)`, compared against one row of `values`.
    RayAverage {
        samples_per_ray: usize,
        scale: f64,
        values: Array2<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Grad-network inputs in signature order.
    pub inputs: Vec<Array2<f64>>,
    pub target: Target,
}

/// Source of training batches. Implementations own their random stream.
pub trait Sampler {
    fn next_batch(&mut self, iter: usize) -> Batch;
}

/// Reduces per-row predictions to what the target measures, and maps the
/// loss cotangent back to per-row cotangents.
fn reduce(pred: &Array2<f64>, target: &Target) -> Result<(f64, Array2<f64>), TrainError> {
    match target {
        Target::Values(t) => {
            if t.dim() != pred.dim() {
                return Err(TrainError::Shape(format!(
                    "prediction {:?}, target {:?}",
                    pred.dim(),
                    t.dim()
                )));
            }
            let p = pred.as_standard_layout();
            let tt = t.as_standard_layout();
            let (loss, cot) = mse_loss(p.as_slice().unwrap(), tt.as_slice().unwrap())?;
            Ok((loss, Array2::from_shape_vec(pred.dim(), cot).unwrap()))
        }
        Target::RayAverage {
            samples_per_ray,
            scale,
            values,
        } => {
            let t = *samples_per_ray;
            let rays = values.nrows();
            if t == 0 || pred.nrows() != rays * t || pred.ncols() != values.ncols() {
                return Err(TrainError::Shape(format!(
                    "{} prediction rows for {rays} rays of {t} samples",
                    pred.nrows()
                )));
            }
            let w = pred.ncols();
            let k = scale / t as f64;
            let est = pred
                .to_shape((rays, t, w))
                .unwrap()
                .sum_axis(Axis(1))
                .mapv(|v| v * k);
            let e = est.as_standard_layout();
            let vv = values.as_standard_layout();
            let (loss, cot) = mse_loss(e.as_slice().unwrap(), vv.as_slice().unwrap())?;
            let mut per_row = Array2::zeros(pred.dim());
            for (r, mut row) in per_row.rows_mut().into_iter().enumerate() {
                let ray = r / t;
                for c in 0..w {
                    row[c] = cot[ray * w + c] * k;
                }
            }
            Ok((loss, per_row))
        }
    }
}

/// Loss of one batch and its gradient with respect to every parameter.
pub fn loss_and_grad(pair: &AutoIntPair, batch: &Batch) -> Result<(f64, GradientSet), TrainError> {
    let tape = record_tape(&pair.grad, &batch.inputs, &pair.params)?;
    let pred = tape.outputs().swap_remove(0);
    let (loss, cot) = reduce(&pred, &batch.target)?;
    let b = backward(&pair.grad, &tape, &[cot], &pair.params, false)?;
    Ok((loss, b.params))
}

/// Loss of one batch, forward only.
pub fn batch_loss(pair: &AutoIntPair, batch: &Batch) -> Result<f64, TrainError> {
    let pred = pair.eval_grad(&batch.inputs)?;
    Ok(reduce(&pred, &batch.target)?.0)
}

/// Per-iteration loss and learning rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,lr\n");
        for (i, (l, r)) in self.losses.iter().zip(&self.lrs).enumerate() {
            let _ = writeln!(s, "{i},{l:e},{r:e}");
        }
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Trains the grad network of `pair` in place.
pub fn fit_grad_network(
    pair: &mut AutoIntPair,
    sampler: &mut dyn Sampler,
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    fit_grad_network_with(pair, sampler, cfg, |_, _| {})
}

/// As [`fit_grad_network`], calling `hook(iter, params)` after every update
/// (for periodic checkpoints or progress logging).
pub fn fit_grad_network_with(
    pair: &mut AutoIntPair,
    sampler: &mut dyn Sampler,
    cfg: &TrainConfig,
    mut hook: impl FnMut(usize, &ParamStore),
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    let mut state = AdamState::from_config(&pair.params, cfg);
    let mut log = TrainLog::default();
    for iter in 0..cfg.max_iters {
        let lr = cfg.lr_at(iter);
        let batch = sampler.next_batch(iter);
        let (loss, grads) = loss_and_grad(pair, &batch)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(TrainError::NonFinite { iter, lr });
        }
        adam_step(&mut pair.params, &grads, &mut state, lr)?;
        log.losses.push(loss);
        log.lrs.push(lr);
        if iter % 1000 == 0 {
            log::debug!("iter {iter} loss {loss:.3e} lr {lr:.1e}");
        }
        hook(iter, &pair.params);
    }
    Ok(log)
}

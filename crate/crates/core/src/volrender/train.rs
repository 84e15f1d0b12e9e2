//! Joint training of the density, color and sampling networks on ray colors.

use ndarray::Array2;
use rand::Rng;

use super::composite::{composite, composite_backward};
use super::model::{activate, deltas_from_logits, ray_arrays, sample_inputs, NvrModel};
use super::scene::{reference_render, AnalyticScene};
use super::{Camera, Ray, RenderError};
use crate::graph::{backward, record_tape};
use crate::nets::{sigmoid, GradientSet};
use crate::rng::{substream, Stream};
use crate::train::{adam_step, mse_loss, AdamState, TrainConfig, TrainError, TrainLog};

/// Rays with their ground-truth colors.
#[derive(Debug, Clone, Default)]
pub struct RayDataset {
    pub rays: Vec<Ray>,
    pub colors: Vec<[f64; 3]>,
}

impl RayDataset {
    /// Every pixel of every view, rendered with [`reference_render`].
    pub fn from_views(
        scene: &AnalyticScene,
        cameras: &[Camera],
        width: usize,
        height: usize,
        tol: f64,
    ) -> Result<Self, RenderError> {
        let mut out = RayDataset::default();
        for cam in cameras {
            for r in cam.rays(width, height, scene.bound)? {
                out.colors.push(reference_render(scene, &r, tol)?);
                out.rays.push(r);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvrTrainOptions {
    /// Stratified samples `M` per interval.
    pub samples_per_interval: usize,
    pub rays_per_batch: usize,
}

impl NvrTrainOptions {
    /// `M = 128 / N`, so every ray gets 128 samples.
    pub fn with_total_samples(intervals: usize, rays_per_batch: usize) -> Self {
        NvrTrainOptions {
            samples_per_interval: (128 / intervals).max(1),
            rays_per_batch,
        }
    }
}

/// Uniform `[0, 1)` offsets of the stratified samples, ray-major then
/// interval then bin.
#[derive(Debug, Clone)]
pub struct StepNoise(pub Vec<f64>);

impl StepNoise {
    pub fn draw<R: Rng>(rays: usize, intervals: usize, m: usize, rng: &mut R) -> Self {
        StepNoise((0..rays * intervals * m).map(|_| rng.gen()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct NvrGrads {
    pub sigma: GradientSet,
    pub color: GradientSet,
    pub sampler: Option<GradientSet>,
}

impl NvrGrads {
    pub fn all_finite(&self) -> bool {
        self.sigma.all_finite() && self.color.all_finite() && self.sampler.as_ref().map_or(true, |g| g.all_finite())
    }
}

/// Mean squared color error over a batch of rays and its gradient for every
/// network. Sample positions are `t_{i-1} + (j + u) / M * delta_i`, so the
/// loss is differentiated through them into the sampling network.
pub fn nvr_loss_and_grads(
    model: &NvrModel,
    rays: &[Ray],
    target: &[[f64; 3]],
    m: usize,
    noise: &StepNoise,
) -> Result<(f64, NvrGrads), RenderError> {
    let (b, n) = (rays.len(), model.intervals());
    let per = n * m;
    if target.len() != b || noise.0.len() != b * per || m == 0 {
        return Err(TrainError::Shape(format!("{b} rays, {} targets, {} offsets", target.len(), noise.0.len())).into());
    }

    let (o, d) = ray_arrays(rays);
    let sampler_tape = match &model.sampler {
        Some(s) => Some(record_tape(&s.graph, &[o, d], &s.params)?),
        None => None,
    };
    let mut deltas = Array2::zeros((b, n));
    let mut probs = Array2::zeros((b, n));
    match &sampler_tape {
        Some(tape) => {
            let z = tape.outputs().swap_remove(0);
            for (i, r) in rays.iter().enumerate() {
                let (dl, p) = deltas_from_logits(&z.row(i).to_vec(), r.length());
                for k in 0..n {
                    deltas[[i, k]] = dl[k];
                    probs[[i, k]] = p[k];
                }
            }
        }
        None => {
            for (i, r) in rays.iter().enumerate() {
                deltas.row_mut(i).fill(r.length() / n as f64);
            }
        }
    }

    let mut ts = Vec::with_capacity(b * per);
    for (i, r) in rays.iter().enumerate() {
        let mut lo = r.near;
        for k in 0..n {
            let dk = deltas[[i, k]];
            for j in 0..m {
                ts.push(lo + (j as f64 + noise.0[i * per + k * m + j]) / m as f64 * dk);
            }
            lo += dk;
        }
    }
    let inputs = sample_inputs(rays, &ts, per);
    let tape_s = record_tape(&model.sigma.grad, &inputs, &model.sigma.params)?;
    let tape_c = record_tape(&model.color.grad, &inputs, &model.color.params)?;
    let psi_s = tape_s.outputs().swap_remove(0);
    let psi_c = tape_c.outputs().swap_remove(0);

    struct RayState {
        raw_s: Vec<f64>,
        sigma: Vec<f64>,
        color: Vec<[f64; 3]>,
    }
    let mut states = Vec::with_capacity(b);
    let mut pred = Vec::with_capacity(3 * b);
    for i in 0..b {
        let mut st = RayState {
            raw_s: Vec::with_capacity(n),
            sigma: Vec::with_capacity(n),
            color: Vec::with_capacity(n),
        };
        for k in 0..n {
            let rows = (i * per + k * m)..(i * per + (k + 1) * m);
            let rs = rows.clone().map(|r| psi_s[[r, 0]]).sum::<f64>() / m as f64;
            let rc = [0, 1, 2].map(|ch| rows.clone().map(|r| psi_c[[r, ch]]).sum::<f64>() / m as f64);
            let (s, c) = activate(rs, rc);
            st.raw_s.push(rs);
            st.sigma.push(s);
            st.color.push(c);
        }
        let drow: Vec<f64> = deltas.row(i).to_vec();
        pred.extend_from_slice(&composite(&st.sigma, &st.color, &drow).0);
        states.push(st);
    }
    let flat_target: Vec<f64> = target.iter().flatten().copied().collect();
    let (loss, dpred) = mse_loss(&pred, &flat_target)?;

    let mut cot_s = Array2::zeros((b * per, 1));
    let mut cot_c = Array2::zeros((b * per, 3));
    let mut ddelta = Array2::<f64>::zeros((b, n));
    for (i, st) in states.iter().enumerate() {
        let drow: Vec<f64> = deltas.row(i).to_vec();
        let g = [dpred[3 * i], dpred[3 * i + 1], dpred[3 * i + 2]];
        let cg = composite_backward(&st.sigma, &st.color, &drow, g);
        for k in 0..n {
            ddelta[[i, k]] = cg.delta[k];
            let da_s = cg.sigma[k] * sigmoid(st.raw_s[k]) / m as f64;
            let da_c = [0, 1, 2].map(|ch| {
                let c = st.color[k][ch];
                cg.color[k][ch] * c * (1.0 - c) / m as f64
            });
            for r in (i * per + k * m)..(i * per + (k + 1) * m) {
                cot_s[[r, 0]] = da_s;
                for ch in 0..3 {
                    cot_c[[r, ch]] = da_c[ch];
                }
            }
        }
    }

    let want_t = model.sampler.is_some();
    let bs = backward(&model.sigma.grad, &tape_s, &[cot_s], &model.sigma.params, want_t)?;
    let bc = backward(&model.color.grad, &tape_c, &[cot_c], &model.color.params, want_t)?;

    let sampler_grads = match (&model.sampler, sampler_tape) {
        (Some(s), Some(tape)) => {
            let slot = model.sigma.var_slot();
            let dts = bs.inputs[slot].as_ref().expect("input cotangents requested");
            let dtc = bc.inputs[slot].as_ref().expect("input cotangents requested");
            let mut dz = Array2::zeros((b, n));
            for (i, r) in rays.iter().enumerate() {
                // t_{k,j} = near + sum_{q<k} delta_q + (j + u) / M * delta_k.
                let mut later = 0.0;
                for k in (0..n).rev() {
                    let mut own = 0.0;
                    let mut here = 0.0;
                    for j in 0..m {
                        let row = i * per + k * m + j;
                        let dt = dts[[row, 0]] + dtc[[row, 0]];
                        own += dt * (j as f64 + noise.0[row]) / m as f64;
                        here += dt;
                    }
                    ddelta[[i, k]] += own + later;
                    later += here;
                }
                let scale = r.length() * (1.0 - n as f64 * super::DELTA_FLOOR);
                let dp: Vec<f64> = (0..n).map(|k| ddelta[[i, k]] * scale).collect();
                let pdp: f64 = (0..n).map(|k| probs[[i, k]] * dp[k]).sum();
                for k in 0..n {
                    dz[[i, k]] = probs[[i, k]] * (dp[k] - pdp);
                }
            }
            Some(backward(&s.graph, &tape, &[dz], &s.params, false)?.params)
        }
        _ => None,
    };

    Ok((
        loss,
        NvrGrads {
            sigma: bs.params,
            color: bc.params,
            sampler: sampler_grads,
        },
    ))
}

/// Trains all networks of `model` in place on random ray batches.
pub fn train_nvr(
    model: &mut NvrModel,
    data: &RayDataset,
    cfg: &TrainConfig,
    opts: NvrTrainOptions,
) -> Result<TrainLog, RenderError> {
    cfg.validate()?;
    if data.is_empty() || opts.rays_per_batch == 0 || opts.samples_per_interval == 0 {
        return Err(TrainError::Config("empty dataset or batch".into()).into());
    }
    let mut batch_rng = substream(cfg.seed, Stream::Batching);
    let mut noise_rng = substream(cfg.seed, Stream::Sampling);
    let mut st_s = AdamState::from_config(&model.sigma.params, cfg);
    let mut st_c = AdamState::from_config(&model.color.params, cfg);
    let mut st_p = model.sampler.as_ref().map(|s| AdamState::from_config(&s.params, cfg));
    let (bsz, m, n) = (opts.rays_per_batch, opts.samples_per_interval, model.intervals());
    let mut log = TrainLog::default();
    let mut rays = Vec::with_capacity(bsz);
    let mut target = Vec::with_capacity(bsz);
    for iter in 0..cfg.max_iters {
        let lr = cfg.lr_at(iter);
        rays.clear();
        target.clear();
        for _ in 0..bsz {
            let k = batch_rng.gen_range(0..data.len());
            rays.push(data.rays[k]);
            target.push(data.colors[k]);
        }
        let noise = StepNoise::draw(bsz, n, m, &mut noise_rng);
        let (loss, g) = nvr_loss_and_grads(model, &rays, &target, m, &noise)?;
        if !loss.is_finite() || !g.all_finite() {
            return Err(TrainError::NonFinite { iter, lr }.into());
        }
        adam_step(&mut model.sigma.params, &g.sigma, &mut st_s, lr)?;
        adam_step(&mut model.color.params, &g.color, &mut st_c, lr)?;
        if let (Some(s), Some(gs), Some(st)) = (model.sampler.as_mut(), g.sampler.as_ref(), st_p.as_mut()) {
            adam_step(&mut s.params, gs, st, lr)?;
        }
        log.losses.push(loss);
        log.lrs.push(lr);
        if iter % 1000 == 0 {
            log::debug!("nvr iter {iter} loss {loss:.3e}");
        }
    }
    Ok(log)
}

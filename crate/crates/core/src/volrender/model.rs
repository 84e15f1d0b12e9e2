//! Density and color networks over `(o, t, d)`, the interval sampling network,
//! and rendering with them.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::composite::composite;
use super::{stratified_samples, Ray, RenderError};
use crate::gradnet::AutoIntPair;
use crate::graph::{evaluate, ComputeGraph, InputSlot};
use crate::nets::{
    build_integral_network, init_params, sigmoid, softplus, Checkpoint, InitScheme, InputBlock, MlpSpec,
    Nonlinearity, ParamStore,
};

/// Each interval keeps at least this fraction of the ray.
pub const DELTA_FLOOR: f64 = 1e-4;

/// Rows per batched network call while rendering.
const MAX_ROWS: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvrSpec {
    /// Number of intervals `N` per ray.
    pub intervals: usize,
    pub hidden: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    /// Encoding frequencies for the sample point; the raw point is always included.
    pub freqs: usize,
    /// Encoding frequencies for the view direction fed to the color network (0: raw).
    #[serde(default)]
    pub dir_freqs: usize,
    /// Hidden layers of the sampling network; `None` splits rays uniformly.
    #[serde(default)]
    pub sampler_hidden: Option<Vec<usize>>,
}

fn ray_inputs() -> Vec<InputSlot> {
    vec![
        InputSlot::constant("o", 3),
        InputSlot::var("t"),
        InputSlot::constant("d", 3),
    ]
}

fn point_blocks(freqs: usize) -> Vec<InputBlock> {
    let mut b = vec![InputBlock::ray_point("o", "t", "d", 0, false)];
    if freqs > 0 {
        b.push(InputBlock::ray_point("o", "t", "d", freqs, true));
    }
    b
}

/// Density integral network: one output, raw (pre-activation) density.
pub fn sigma_spec(spec: &NvrSpec) -> MlpSpec {
    MlpSpec {
        inputs: ray_inputs(),
        blocks: point_blocks(spec.freqs),
        hidden: spec.hidden.clone(),
        nonlinearity: spec.nonlinearity,
        out_width: 1,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

/// Color integral network: three outputs, raw (pre-sigmoid) color.
pub fn color_spec(spec: &NvrSpec) -> MlpSpec {
    let mut blocks = point_blocks(spec.freqs);
    blocks.push(InputBlock::slot("d", spec.dir_freqs, false));
    MlpSpec {
        inputs: ray_inputs(),
        blocks,
        hidden: spec.hidden.clone(),
        nonlinearity: spec.nonlinearity,
        out_width: 3,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

/// `delta = L (floor + (1 - N floor) softmax(z))`; returns `(delta, softmax(z))`.
pub fn deltas_from_logits(z: &[f64], length: f64) -> (Vec<f64>, Vec<f64>) {
    let n = z.len() as f64;
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();
    let d = p
        .iter()
        .map(|pi| length * (DELTA_FLOOR + (1.0 - n * DELTA_FLOOR) * pi))
        .collect();
    (d, p)
}

/// MLP from the raw ray `(o, d)` to `N` interval-length logits.
#[derive(Debug, Clone)]
pub struct SamplingNet {
    pub spec: MlpSpec,
    pub params: ParamStore,
    pub graph: ComputeGraph,
}

impl SamplingNet {
    pub fn new(hidden: Vec<usize>, intervals: usize, seed: u64) -> Result<Self, RenderError> {
        let spec = MlpSpec {
            inputs: vec![InputSlot::constant("o", 3), InputSlot::constant("d", 3)],
            blocks: vec![InputBlock::slot("o", 0, false), InputBlock::slot("d", 0, false)],
            hidden,
            nonlinearity: Nonlinearity::Relu,
            out_width: intervals,
            final_bias: true,
            init: InitScheme::Auto,
        };
        let params = init_params(&spec, seed)?;
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: MlpSpec, params: ParamStore) -> Result<Self, RenderError> {
        let graph = build_integral_network(&spec, &params)?;
        Ok(SamplingNet { spec, params, graph })
    }

    pub fn logits(&self, o: &Array2<f64>, d: &Array2<f64>) -> Result<Array2<f64>, RenderError> {
        let rep = evaluate(&self.graph, &[o.clone(), d.clone()], &self.params, true)?;
        Ok(rep.outputs.into_iter().next().expect("one output"))
    }
}

/// Ray origins and directions as `B x 3` arrays.
pub(crate) fn ray_arrays(rays: &[Ray]) -> (Array2<f64>, Array2<f64>) {
    let b = rays.len();
    let o = Array2::from_shape_fn((b, 3), |(i, k)| rays[i].o[k]);
    let d = Array2::from_shape_fn((b, 3), |(i, k)| rays[i].d[k]);
    (o, d)
}

/// Grad-network inputs for `per_ray` positions on each ray.
pub(crate) fn sample_inputs(rays: &[Ray], ts: &[f64], per_ray: usize) -> Vec<Array2<f64>> {
    let rows = rays.len() * per_ray;
    debug_assert_eq!(ts.len(), rows);
    let o = Array2::from_shape_fn((rows, 3), |(r, k)| rays[r / per_ray].o[k]);
    let d = Array2::from_shape_fn((rows, 3), |(r, k)| rays[r / per_ray].d[k]);
    let t = Array2::from_shape_vec((rows, 1), ts.to_vec()).expect("row count");
    vec![o, t, d]
}

/// Interval means of the raw outputs mapped to density and color.
pub(crate) fn activate(raw_sigma: f64, raw_color: [f64; 3]) -> (f64, [f64; 3]) {
    (softplus(raw_sigma), raw_color.map(sigmoid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoIntRender {
    pub colors: Vec<[f64; 3]>,
    /// Integral-network rows evaluated, both networks together.
    pub integral_evals: usize,
    /// Distinct evaluation points per ray and network (`N + 1`).
    pub points_per_ray: usize,
    /// Evaluations per ray and network without sharing endpoints (`2N`).
    pub unshared_points_per_ray: usize,
}

/// Density and color networks plus the optional sampling network.
#[derive(Debug, Clone)]
pub struct NvrModel {
    pub spec: NvrSpec,
    pub seed: u64,
    pub sigma: AutoIntPair,
    pub color: AutoIntPair,
    pub sampler: Option<SamplingNet>,
}

impl NvrModel {
    /// Fresh networks. The three networks draw from distinct seeds derived from `seed`.
    pub fn new(spec: &NvrSpec, seed: u64) -> Result<Self, RenderError> {
        if spec.intervals == 0 || spec.intervals as f64 * DELTA_FLOOR >= 1.0 {
            return Err(RenderError::Ray(format!("{} intervals", spec.intervals)));
        }
        let base = seed.wrapping_mul(4);
        let pair = |mspec: MlpSpec, s: u64| -> Result<AutoIntPair, RenderError> {
            let p = init_params(&mspec, s)?;
            let g = build_integral_network(&mspec, &p)?;
            Ok(AutoIntPair::new(g, "t", p)?)
        };
        let sampler = match &spec.sampler_hidden {
            Some(h) => Some(SamplingNet::new(h.clone(), spec.intervals, base + 2)?),
            None => None,
        };
        Ok(NvrModel {
            spec: spec.clone(),
            seed,
            sigma: pair(sigma_spec(spec), base)?,
            color: pair(color_spec(spec), base + 1)?,
            sampler,
        })
    }

    pub fn intervals(&self) -> usize {
        self.spec.intervals
    }

    /// Interval lengths per ray, `B x N`.
    pub fn deltas(&self, rays: &[Ray]) -> Result<Array2<f64>, RenderError> {
        let n = self.intervals();
        match &self.sampler {
            None => Ok(Array2::from_shape_fn((rays.len(), n), |(i, _)| rays[i].length() / n as f64)),
            Some(s) => {
                let (o, d) = ray_arrays(rays);
                let z = s.logits(&o, &d)?;
                let mut out = Array2::zeros((rays.len(), n));
                for (i, r) in rays.iter().enumerate() {
                    let (dl, _) = deltas_from_logits(&z.row(i).to_vec(), r.length());
                    out.row_mut(i).assign(&ndarray::Array1::from(dl));
                }
                Ok(out)
            }
        }
    }

    /// Piecewise rendering from the integral networks: per interval and
    /// network, `(Phi(t_i) - Phi(t_{i-1})) / delta_i`, with the `N + 1`
    /// boundaries of a ray evaluated once each.
    pub fn autoint_render(&self, rays: &[Ray]) -> Result<AutoIntRender, RenderError> {
        let deltas = self.deltas(rays)?;
        self.autoint_render_with(rays, &deltas)
    }

    pub fn autoint_render_with(&self, rays: &[Ray], deltas: &Array2<f64>) -> Result<AutoIntRender, RenderError> {
        let n = self.intervals();
        let per = n + 1;
        let mut colors = Vec::with_capacity(rays.len());
        let mut evals = 0;
        let chunk = (MAX_ROWS / per).max(1);
        for (c, rs) in rays.chunks(chunk).enumerate() {
            let base = c * chunk;
            let mut ts = Vec::with_capacity(rs.len() * per);
            for (i, r) in rs.iter().enumerate() {
                let mut t = r.near;
                ts.push(t);
                for k in 0..n {
                    t += deltas[[base + i, k]];
                    ts.push(t);
                }
            }
            let inputs = sample_inputs(rs, &ts, per);
            let ps = self.sigma.eval_integral(&inputs)?;
            let pc = self.color.eval_integral(&inputs)?;
            evals += ps.batch_rows + pc.batch_rows;
            let (ps, pc) = (&ps.outputs[0], &pc.outputs[0]);
            for i in 0..rs.len() {
                let mut sig = Vec::with_capacity(n);
                let mut col = Vec::with_capacity(n);
                for k in 0..n {
                    let (a, b) = (i * per + k, i * per + k + 1);
                    let dk = deltas[[base + i, k]];
                    let raw_c = [0, 1, 2].map(|ch| (pc[[b, ch]] - pc[[a, ch]]) / dk);
                    let (s, cc) = activate((ps[[b, 0]] - ps[[a, 0]]) / dk, raw_c);
                    sig.push(s);
                    col.push(cc);
                }
                let drow: Vec<f64> = deltas.row(base + i).to_vec();
                colors.push(composite(&sig, &col, &drow).0);
            }
        }
        Ok(AutoIntRender {
            colors,
            integral_evals: evals,
            points_per_ray: per,
            unshared_points_per_ray: 2 * n,
        })
    }

    /// Piecewise rendering from the grad networks: interval means estimated
    /// from `m` stratified samples per interval.
    pub fn render_mc<R: Rng>(
        &self,
        rays: &[Ray],
        deltas: &Array2<f64>,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<[f64; 3]>, RenderError> {
        let n = self.intervals();
        let per = n * m;
        let chunk = (MAX_ROWS / per).max(1);
        let mut colors = Vec::with_capacity(rays.len());
        for (c, rs) in rays.chunks(chunk).enumerate() {
            let base = c * chunk;
            let mut ts = Vec::with_capacity(rs.len() * per);
            for (i, r) in rs.iter().enumerate() {
                let drow: Vec<f64> = deltas.row(base + i).to_vec();
                ts.extend(stratified_samples(r.near, &drow, m, rng));
            }
            let inputs = sample_inputs(rs, &ts, per);
            let ps = self.sigma.eval_grad(&inputs)?;
            let pc = self.color.eval_grad(&inputs)?;
            for i in 0..rs.len() {
                let mut sig = Vec::with_capacity(n);
                let mut col = Vec::with_capacity(n);
                for k in 0..n {
                    let rows = (i * per + k * m)..(i * per + (k + 1) * m);
                    let mean = |col: &Array2<f64>, ch: usize| rows.clone().map(|r| col[[r, ch]]).sum::<f64>() / m as f64;
                    let (s, cc) = activate(mean(&ps, 0), [0, 1, 2].map(|ch| mean(&pc, ch)));
                    sig.push(s);
                    col.push(cc);
                }
                let drow: Vec<f64> = deltas.row(base + i).to_vec();
                colors.push(composite(&sig, &col, &drow).0);
            }
        }
        Ok(colors)
    }

    pub fn checkpoint(&self) -> NvrCheckpoint {
        let base = self.seed.wrapping_mul(4);
        NvrCheckpoint {
            spec: self.spec.clone(),
            seed: self.seed,
            sigma: Checkpoint::new(&sigma_spec(&self.spec), base, &self.sigma.params),
            color: Checkpoint::new(&color_spec(&self.spec), base + 1, &self.color.params),
            sampler: self
                .sampler
                .as_ref()
                .map(|s| Checkpoint::new(&s.spec, base + 2, &s.params)),
        }
    }
}

/// Serialized [`NvrModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvrCheckpoint {
    pub spec: NvrSpec,
    pub seed: u64,
    pub sigma: Checkpoint,
    pub color: Checkpoint,
    pub sampler: Option<Checkpoint>,
}

impl NvrCheckpoint {
    pub fn model(&self) -> Result<NvrModel, RenderError> {
        let pair = |c: &Checkpoint| -> Result<AutoIntPair, RenderError> {
            let (g, p) = c.network()?;
            Ok(AutoIntPair::new(g, "t", p)?)
        };
        let sampler = match &self.sampler {
            Some(c) => Some(SamplingNet::from_params(c.spec.clone(), c.params()?)?),
            None => None,
        };
        if sampler.is_some() != self.spec.sampler_hidden.is_some() {
            return Err(RenderError::Format("sampling network does not match the spec".into()));
        }
        Ok(NvrModel {
            spec: self.spec.clone(),
            seed: self.seed,
            sigma: pair(&self.sigma)?,
            color: pair(&self.color)?,
            sampler,
        })
    }

    pub fn to_json(&self) -> Result<String, RenderError> {
        serde_json::to_string(self).map_err(|e| RenderError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, RenderError> {
        serde_json::from_str(s).map_err(|e| RenderError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RenderError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

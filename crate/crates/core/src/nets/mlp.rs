//! MLP integral networks as graphs, their initialization and checkpoints.
//!
//! Layout: every input block is optionally encoded, the blocks are
//! concatenated, then `hidden.len()` affine + nonlinearity layers, then a final
//! affine layer. Layer `k` of the network is `LayerId(k)` in its own store.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Nonlinearity;
use super::encoding::Encoding;
use super::params::{Layer, LayerId, ParamStore};
use super::NetError;
use crate::graph::{ComputeGraph, InputSlot, NodeId, SlotKind};
use crate::rng::{substream, Stream};

/// Where an input block reads from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSource {
    /// A signature slot, by name.
    Slot { name: String },
    /// The point `o + t d` on a ray, from three slots.
    RayPoint {
        origin: String,
        param: String,
        direction: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBlock {
    pub source: BlockSource,
    /// Encoding frequencies; 0 passes the block through unencoded.
    #[serde(default)]
    pub freqs: usize,
    #[serde(default)]
    pub normalized: bool,
}

impl InputBlock {
    pub fn slot(name: &str, freqs: usize, normalized: bool) -> Self {
        InputBlock {
            source: BlockSource::Slot {
                name: name.to_string(),
            },
            freqs,
            normalized,
        }
    }

    pub fn ray_point(origin: &str, param: &str, direction: &str, freqs: usize, normalized: bool) -> Self {
        InputBlock {
            source: BlockSource::RayPoint {
                origin: origin.to_string(),
                param: param.to_string(),
                direction: direction.to_string(),
            },
            freqs,
            normalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `Siren` for sine networks, `Kaiming` otherwise.
    #[default]
    Auto,
    /// First layer `U(+-1/fan_in)`, later layers `U(+-sqrt(6/fan_in)/omega0)`.
    Siren,
    /// `U(+-sqrt(6/fan_in))`.
    Kaiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub inputs: Vec<InputSlot>,
    pub blocks: Vec<InputBlock>,
    pub hidden: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub out_width: usize,
    /// Bias on the last layer; for an integral network this is the integration constant.
    #[serde(default = "default_true")]
    pub final_bias: bool,
    #[serde(default)]
    pub init: InitScheme,
}

fn default_true() -> bool {
    true
}

impl MlpSpec {
    fn slot(&self, name: &str) -> Result<&InputSlot, NetError> {
        self.inputs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| NetError::Build(format!("block refers to unknown input `{name}`")))
    }

    fn block_width(&self, b: &InputBlock) -> Result<usize, NetError> {
        let raw = match &b.source {
            BlockSource::Slot { name } => self.slot(name)?.width,
            BlockSource::RayPoint {
                origin,
                param,
                direction,
            } => {
                let (o, t, d) = (self.slot(origin)?, self.slot(param)?, self.slot(direction)?);
                if o.width != d.width || t.width != 1 {
                    return Err(NetError::Build(format!(
                        "ray point needs |{origin}| = |{direction}| and scalar `{param}`"
                    )));
                }
                o.width
            }
        };
        Ok(if b.freqs > 0 {
            Encoding::new(b.freqs, b.normalized).out_width(raw)
        } else {
            raw
        })
    }

    /// Width of the concatenated (encoded) input.
    pub fn input_width(&self) -> Result<usize, NetError> {
        self.blocks.iter().map(|b| self.block_width(b)).sum()
    }

    /// `(in, out)` for each layer, last layer included.
    pub fn layer_shapes(&self) -> Result<Vec<(usize, usize)>, NetError> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut w = self.input_width()?;
        for &h in self.hidden.iter().chain(std::iter::once(&self.out_width)) {
            shapes.push((w, h));
            w = h;
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.blocks.is_empty() {
            return Err(NetError::Build("no input blocks".into()));
        }
        if self.hidden.is_empty() {
            return Err(NetError::Build("depth must be at least 1".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) || self.out_width == 0 {
            return Err(NetError::Build("layer widths must be positive".into()));
        }
        for (i, s) in self.inputs.iter().enumerate() {
            if s.width == 0 {
                return Err(NetError::Build(format!("input `{}` has zero width", s.name)));
            }
            if self.inputs[..i].iter().any(|p| p.name == s.name) {
                return Err(NetError::Build(format!("input `{}` declared twice", s.name)));
            }
            if s.kind == SlotKind::Var && s.width != 1 {
                return Err(NetError::Build(format!(
                    "integration variable `{}` must be scalar",
                    s.name
                )));
            }
        }
        self.input_width()?;
        Ok(())
    }

    fn scheme(&self) -> InitScheme {
        match (self.init, self.nonlinearity) {
            (InitScheme::Auto, Nonlinearity::Sine { .. }) => InitScheme::Siren,
            (InitScheme::Auto, _) => InitScheme::Kaiming,
            (s, _) => s,
        }
    }
}

/// Builds `Phi = W_n (phi_{n-1} o ... o phi_0)(x) (+ b_n)` as a graph.
///
/// `params` must hold one layer per entry of [`MlpSpec::layer_shapes`].
pub fn build_integral_network(spec: &MlpSpec, params: &ParamStore) -> Result<ComputeGraph, NetError> {
    spec.validate()?;
    let shapes = spec.layer_shapes()?;
    if params.len() != shapes.len() {
        return Err(NetError::Build(format!(
            "network has {} layers, parameter store {}",
            shapes.len(),
            params.len()
        )));
    }
    for (k, (&(i, o), l)) in shapes.iter().zip(params.layers()).enumerate() {
        if l.in_width() != i || l.out_width() != o {
            return Err(NetError::Build(format!(
                "layer {k} is {}x{}, expected {o}x{i}",
                l.out_width(),
                l.in_width()
            )));
        }
    }

    let mut g = ComputeGraph::new(spec.inputs.clone());
    let mut parts: Vec<NodeId> = Vec::with_capacity(spec.blocks.len());
    for b in &spec.blocks {
        let x = match &b.source {
            BlockSource::Slot { name } => g.input(name)?,
            BlockSource::RayPoint {
                origin,
                param,
                direction,
            } => {
                let (o, t, d) = (g.input(origin)?, g.input(param)?, g.input(direction)?);
                g.affine_point(o, t, d)?
            }
        };
        let x = if b.freqs > 0 {
            g.encode(x, Encoding::new(b.freqs, b.normalized), 0)?
        } else {
            x
        };
        parts.push(x);
    }
    let mut h = if parts.len() == 1 {
        parts[0]
    } else {
        g.concat(&parts)?
    };
    let last = shapes.len() - 1;
    for (k, &(i, o)) in shapes.iter().enumerate() {
        if k < last {
            h = g.affine(h, LayerId(k), i, o, true)?;
            h = g.pointwise(h, spec.nonlinearity, 0)?;
        } else {
            h = g.affine(h, LayerId(k), i, o, spec.final_bias)?;
        }
    }
    g.set_outputs(vec![h])?;
    Ok(g)
}

/// Deterministic initialization from `seed` (the `Init` substream).
///
/// Biases are drawn from `U(+-1/sqrt(fan_in))`, except a zero final bias.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamStore, NetError> {
    spec.validate()?;
    let shapes = spec.layer_shapes()?;
    let mut rng = substream(seed, Stream::Init);
    let scheme = spec.scheme();
    let omega0 = match spec.nonlinearity {
        Nonlinearity::Sine { omega0 } => omega0,
        _ => 1.0,
    };
    let last = shapes.len() - 1;
    let mut store = ParamStore::new();
    for (k, &(fan_in, out)) in shapes.iter().enumerate() {
        let fan = fan_in as f64;
        let bound = match scheme {
            InitScheme::Siren if k == 0 => 1.0 / fan,
            InitScheme::Siren => (6.0 / fan).sqrt() / omega0,
            _ => (6.0 / fan).sqrt(),
        };
        let weight = Array2::from_shape_fn((out, fan_in), |_| rng.gen_range(-bound..=bound));
        let bias = if k == last {
            Array1::zeros(out)
        } else {
            let bb = 1.0 / fan.sqrt();
            Array1::from_shape_fn(out, |_| rng.gen_range(-bb..=bb))
        };
        store.push(Layer { weight, bias })?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Serialized network: spec, seed and every layer. Floats are written in
/// shortest round-trip form, so reading back reproduces the exact bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub seed: u64,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn new(spec: &MlpSpec, seed: u64, params: &ParamStore) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| LayerRecord {
                w: l.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                b: l.bias.to_vec(),
            })
            .collect();
        Checkpoint {
            spec: spec.clone(),
            seed,
            layers,
        }
    }

    pub fn params(&self) -> Result<ParamStore, NetError> {
        let mut store = ParamStore::new();
        for (k, rec) in self.layers.iter().enumerate() {
            let rows = rec.w.len();
            let cols = rec.w.first().map_or(0, |r| r.len());
            if rec.w.iter().any(|r| r.len() != cols) {
                return Err(NetError::Checkpoint(format!("layer {k} has ragged rows")));
            }
            let flat: Vec<f64> = rec.w.iter().flatten().copied().collect();
            let weight = Array2::from_shape_vec((rows, cols), flat)
                .map_err(|e| NetError::Checkpoint(e.to_string()))?;
            store
                .push(Layer {
                    weight,
                    bias: Array1::from(rec.b.clone()),
                })
                .map_err(|e| NetError::Checkpoint(format!("layer {k}: {e}")))?;
        }
        Ok(store)
    }

    /// Parameters plus the integral network they belong to.
    pub fn network(&self) -> Result<(ComputeGraph, ParamStore), NetError> {
        let params = self.params()?;
        let g = build_integral_network(&self.spec, &params)?;
        Ok((g, params))
    }

    pub fn to_json(&self) -> Result<String, NetError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, NetError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::evaluate;
    use ndarray::array;

    fn scalar_spec(hidden: Vec<usize>, nl: Nonlinearity) -> MlpSpec {
        MlpSpec {
            inputs: vec![InputSlot::var("x")],
            blocks: vec![InputBlock::slot("x", 0, false)],
            hidden,
            nonlinearity: nl,
            out_width: 1,
            final_bias: true,
            init: InitScheme::Auto,
        }
    }

    #[test]
    fn depth_one_matches_closed_form() {
        let spec = scalar_spec(vec![1], Nonlinearity::Softplus);
        let mut p = ParamStore::new();
        p.push(Layer {
            weight: array![[0.7]],
            bias: array![-0.2],
        })
        .unwrap();
        p.push(Layer {
            weight: array![[1.5]],
            bias: array![0.25],
        })
        .unwrap();
        let g = build_integral_network(&spec, &p).unwrap();
        let x = 0.9;
        let r = evaluate(&g, &[array![[x]]], &p, true).unwrap();
        let expect = 1.5 * super::super::softplus(0.7 * x - 0.2) + 0.25;
        assert!((r.outputs[0][[0, 0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_store() {
        let spec = scalar_spec(vec![4, 4], Nonlinearity::Relu);
        let other = init_params(&scalar_spec(vec![4], Nonlinearity::Relu), 1).unwrap();
        assert!(matches!(
            build_integral_network(&spec, &other),
            Err(NetError::Build(_))
        ));
        let mut bad = scalar_spec(vec![4], Nonlinearity::Relu);
        bad.blocks = vec![InputBlock::slot("y", 0, false)];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = scalar_spec(vec![32, 32], Nonlinearity::Swish { beta: 1.0 });
        let a = init_params(&spec, 3).unwrap();
        assert_eq!(a, init_params(&spec, 3).unwrap());
        assert_ne!(a, init_params(&spec, 4).unwrap());
        for l in a.layers() {
            let bound = (6.0 / l.in_width() as f64).sqrt();
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
        }
        assert!(a.layers()[2].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn siren_bounds() {
        let spec = scalar_spec(vec![16, 16], Nonlinearity::sine());
        let p = init_params(&spec, 0).unwrap();
        assert!(p.layers()[0].weight.iter().all(|w| w.abs() <= 1.0));
        let b1 = (6.0f64 / 16.0).sqrt() / 30.0;
        assert!(p.layers()[1].weight.iter().all(|w| w.abs() <= b1));
        // Bounds are actually approached, not just respected.
        assert!(p.layers()[1].weight.iter().any(|w| w.abs() > 0.8 * b1));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let spec = scalar_spec(vec![8, 8], Nonlinearity::swish());
        let p = init_params(&spec, 11).unwrap();
        let ck = Checkpoint::new(&spec, 11, &p);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), p);
        let err = Checkpoint::from_json(r#"{"spec":1,"seed":0,"layers":[],"extra":0}"#);
        assert!(err.is_err());
    }

    #[test]
    fn ray_point_and_concat_widths() {
        let spec = MlpSpec {
            inputs: vec![
                InputSlot::constant("o", 3),
                InputSlot::var("t"),
                InputSlot::constant("d", 3),
            ],
            blocks: vec![
                InputBlock::ray_point("o", "t", "d", 3, true),
                InputBlock::slot("d", 2, true),
            ],
            hidden: vec![8],
            nonlinearity: Nonlinearity::Relu,
            out_width: 1,
            final_bias: true,
            init: InitScheme::Auto,
        };
        assert_eq!(spec.input_width().unwrap(), 18 + 12);
        let p = init_params(&spec, 0).unwrap();
        let g = build_integral_network(&spec, &p).unwrap();
        let inputs = [array![[0.1, 0.2, 0.3]], array![[0.5]], array![[0.0, 0.0, 1.0]]];
        let r = evaluate(&g, &inputs, &p, true).unwrap();
        assert!(r.outputs[0][[0, 0]].is_finite());
    }
}

//! The single owner of network weights.
//!
//! Graphs refer to layers by [`LayerId`] only, so an integral network and its
//! grad network evaluated against the same store always see the same numbers.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::graph::GraphError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId(pub usize);

/// One affine layer: `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(in_width: usize, out_width: usize) -> Self {
        Layer {
            weight: Array2::zeros((out_width, in_width)),
            bias: Array1::zeros(out_width),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.nrows()
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    layers: Vec<Layer>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: Layer) -> Result<LayerId, GraphError> {
        if layer.bias.len() != layer.out_width() {
            return Err(GraphError::Parameter(format!(
                "bias length {} does not match {} output rows",
                layer.bias.len(),
                layer.out_width()
            )));
        }
        self.layers.push(layer);
        Ok(LayerId(self.layers.len() - 1))
    }

    pub fn layer(&self, id: LayerId) -> Option<&Layer> {
        self.layers.get(id.0)
    }

    pub fn layer_mut(&mut self, id: LayerId) -> Option<&mut Layer> {
        self.layers.get_mut(id.0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// Flat view used by finite-difference checks: weights row-major, then bias, per layer.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weight.len() {
                return l.weight.as_slice().expect("standard layout")[idx];
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.weight.len() {
                l.weight.as_slice_mut().expect("standard layout")[idx] = value;
                return;
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                l.bias[idx] = value;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("flat parameter index out of range");
    }
}

/// Per-layer gradients, shape-congruent with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParamStore) -> Self {
        GradientSet {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_width(), l.out_width()))
                .collect(),
        }
    }

    pub fn is_congruent(&self, params: &ParamStore) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weight.dim() == p.weight.dim() && g.bias.len() == p.bias.len())
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weight.len() {
                return l.weight.as_slice().expect("standard layout")[idx];
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("flat gradient index out of range");
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for l in &self.layers {
            Zip::from(&l.weight).for_each(|v| m = m.max(v.abs()));
            l.bias.iter().for_each(|v| m = m.max(v.abs()));
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_indexing_round_trips() {
        let mut p = ParamStore::new();
        p.push(Layer::zeros(2, 3)).unwrap();
        p.push(Layer::zeros(3, 1)).unwrap();
        assert_eq!(p.num_scalars(), 6 + 3 + 3 + 1);
        for i in 0..p.num_scalars() {
            p.set_flat(i, i as f64);
        }
        for i in 0..p.num_scalars() {
            assert_eq!(p.get_flat(i), i as f64);
        }
        assert_eq!(p.layers()[0].bias[2], 8.0);
    }

    #[test]
    fn rejects_bias_mismatch() {
        let mut p = ParamStore::new();
        let bad = Layer {
            weight: Array2::zeros((2, 2)),
            bias: Array1::zeros(3),
        };
        assert!(p.push(bad).is_err());
    }
}

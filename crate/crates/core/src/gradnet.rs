//! Grad networks and definite integrals.
//!
//! [`derive`] turns an integral network `Phi` into `Psi = dPhi/dx_i` by
//! forward-mode differentiation over the graph: every node gets a tangent
//! (zero, a constant row, or a new node), following the per-kind chain rule.
//! Where a rule needs a forward value (the argument of `NL'`, the encoded
//! coordinate, the ray direction) it re-creates that forward sub-chain, a
//! "leg". Legs created for deeper layers come later, and the evaluation plan
//! folds their shared prefixes together.
//!
//! Because `Psi` is built from `Phi` and both address layers by id in one
//! [`ParamStore`], `Phi` stays an exact antiderivative of `Psi` for any
//! parameter values, and `int_a^b Psi = Phi(b) - Phi(a)`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, Axis};

use crate::graph::{evaluate, ComputeGraph, EvalReport, GraphError, NodeId, NodeKind, SlotKind};
use crate::nets::activation::MAX_NL_ORDER;
use crate::nets::encoding::MAX_ENCODE_NODE_ORDER;
use crate::nets::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
enum Tangent {
    Zero,
    /// Batch-independent row vector.
    Const(Vec<f64>),
    Node(NodeId),
}

fn all_ones(c: &[f64]) -> bool {
    c.iter().all(|&v| v == 1.0)
}

struct Deriver {
    g: ComputeGraph,
}

impl Deriver {
    /// Fresh copy of the forward chain computing `id`. Leaves are shared.
    fn copy_forward(&mut self, id: NodeId) -> Result<NodeId, GraphError> {
        let node = self.g.node(id).clone();
        if node.kind.is_leaf() {
            return Ok(id);
        }
        let inputs = node
            .inputs
            .iter()
            .map(|&x| self.copy_forward(x))
            .collect::<Result<Vec<_>, _>>()?;
        self.g.add(node.kind, &inputs)
    }

    fn materialize(&mut self, t: &Tangent, width: usize) -> Result<NodeId, GraphError> {
        match t {
            Tangent::Zero => self.g.constant(vec![0.0; width]),
            Tangent::Const(c) => self.g.constant(c.clone()),
            Tangent::Node(n) => Ok(*n),
        }
    }

    /// `d ⊙ t` for a forward-derivative node `d` and an inner tangent `t`.
    fn times(&mut self, d: NodeId, t: &Tangent) -> Result<Tangent, GraphError> {
        Ok(match t {
            Tangent::Zero => Tangent::Zero,
            Tangent::Const(c) if all_ones(c) => Tangent::Node(d),
            Tangent::Const(c) => Tangent::Node(self.g.scale(d, c.clone())?),
            Tangent::Node(n) => Tangent::Node(self.g.hadamard(&[d, *n])?),
        })
    }

    fn sum(&mut self, terms: Vec<Tangent>, width: usize) -> Result<Tangent, GraphError> {
        let mut nodes = Vec::new();
        let mut csum: Option<Vec<f64>> = None;
        for t in terms {
            match t {
                Tangent::Zero => {}
                Tangent::Const(c) => {
                    csum = Some(match csum {
                        None => c,
                        Some(s) => s.iter().zip(&c).map(|(a, b)| a + b).collect(),
                    })
                }
                Tangent::Node(n) => nodes.push(n),
            }
        }
        if nodes.is_empty() {
            return Ok(csum.map_or(Tangent::Zero, Tangent::Const));
        }
        if let Some(c) = csum {
            if c.iter().any(|&v| v != 0.0) {
                nodes.push(self.g.constant(c)?);
            }
        }
        debug_assert!(nodes.iter().all(|&n| self.g.node(n).width == width));
        Ok(if nodes.len() == 1 {
            Tangent::Node(nodes[0])
        } else {
            Tangent::Node(self.g.sum(&nodes)?)
        })
    }

    fn rule(&mut self, id: NodeId, var_slot: usize, tan: &[Tangent]) -> Result<Tangent, GraphError> {
        let node = self.g.node(id).clone();
        let arg = |k: usize| &tan[node.inputs[k].index()];
        Ok(match &node.kind {
            NodeKind::InputVar { slot } if *slot == var_slot => Tangent::Const(vec![1.0]),
            NodeKind::InputVar { .. } | NodeKind::InputConst { .. } | NodeKind::Constant { .. } => {
                Tangent::Zero
            }
            NodeKind::Affine {
                layer,
                in_width,
                out_width,
                ..
            } => {
                let x = match arg(0) {
                    Tangent::Zero => return Ok(Tangent::Zero),
                    t => {
                        let t = t.clone();
                        self.materialize(&t, *in_width)?
                    }
                };
                Tangent::Node(self.g.affine(x, *layer, *in_width, *out_width, false)?)
            }
            NodeKind::Pointwise { nl, order } => {
                let t = arg(0).clone();
                if t == Tangent::Zero {
                    return Ok(Tangent::Zero);
                }
                if *order >= MAX_NL_ORDER {
                    return Err(GraphError::DerivativeDepth(format!(
                        "cannot differentiate {} of order {order}",
                        nl.name()
                    )));
                }
                let x = self.copy_forward(node.inputs[0])?;
                let d = self.g.pointwise(x, *nl, order + 1)?;
                self.times(d, &t)?
            }
            NodeKind::Hadamard => {
                let mut terms = Vec::new();
                for j in 0..node.inputs.len() {
                    let t = arg(j).clone();
                    if t == Tangent::Zero {
                        continue;
                    }
                    let others = node
                        .inputs
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != j)
                        .map(|(_, &x)| self.copy_forward(x))
                        .collect::<Result<Vec<_>, _>>()?;
                    let rest = if others.len() == 1 {
                        others[0]
                    } else {
                        self.g.hadamard(&others)?
                    };
                    terms.push(self.times(rest, &t)?);
                }
                self.sum(terms, node.width)?
            }
            NodeKind::Sum => {
                let terms = (0..node.inputs.len()).map(|k| arg(k).clone()).collect();
                self.sum(terms, node.width)?
            }
            NodeKind::ScaleConst { factor } => match arg(0).clone() {
                Tangent::Zero => Tangent::Zero,
                Tangent::Const(c) => Tangent::Const(if factor.len() == 1 {
                    c.iter().map(|v| v * factor[0]).collect()
                } else {
                    c.iter().zip(factor).map(|(a, b)| a * b).collect()
                }),
                Tangent::Node(n) => Tangent::Node(self.g.scale(n, factor.clone())?),
            },
            NodeKind::Encode { encoding, order } => {
                let t = arg(0).clone();
                if t == Tangent::Zero {
                    return Ok(Tangent::Zero);
                }
                if *order >= MAX_ENCODE_NODE_ORDER {
                    return Err(GraphError::DerivativeDepth(format!(
                        "cannot differentiate an encoding of order {order}"
                    )));
                }
                let per = 2 * encoding.freqs;
                let x = self.copy_forward(node.inputs[0])?;
                let d = self.g.encode(x, *encoding, order + 1)?;
                match t {
                    Tangent::Const(c) => {
                        let rep: Vec<f64> = c
                            .iter()
                            .flat_map(|&v| std::iter::repeat(v).take(per))
                            .collect();
                        self.times(d, &Tangent::Const(rep))?
                    }
                    Tangent::Node(n) => {
                        let r = self.g.repeat(n, per)?;
                        Tangent::Node(self.g.hadamard(&[d, r])?)
                    }
                    Tangent::Zero => unreachable!(),
                }
            }
            NodeKind::Repeat { times } => match arg(0).clone() {
                Tangent::Zero => Tangent::Zero,
                Tangent::Const(c) => Tangent::Const(
                    c.iter()
                        .flat_map(|&v| std::iter::repeat(v).take(*times))
                        .collect(),
                ),
                Tangent::Node(n) => Tangent::Node(self.g.repeat(n, *times)?),
            },
            NodeKind::Concat => {
                let parts: Vec<Tangent> = (0..node.inputs.len()).map(|k| arg(k).clone()).collect();
                if parts.iter().all(|t| *t == Tangent::Zero) {
                    Tangent::Zero
                } else if parts.iter().all(|t| !matches!(t, Tangent::Node(_))) {
                    let mut c = Vec::with_capacity(node.width);
                    for (k, t) in parts.iter().enumerate() {
                        match t {
                            Tangent::Const(v) => c.extend_from_slice(v),
                            _ => c.extend(std::iter::repeat(0.0).take(self.g.node(node.inputs[k]).width)),
                        }
                    }
                    Tangent::Const(c)
                } else {
                    let mut ids = Vec::with_capacity(parts.len());
                    for (k, t) in parts.iter().enumerate() {
                        let w = self.g.node(node.inputs[k]).width;
                        ids.push(self.materialize(t, w)?);
                    }
                    Tangent::Node(self.g.concat(&ids)?)
                }
            }
            NodeKind::AffinePoint => {
                if *arg(0) != Tangent::Zero || *arg(2) != Tangent::Zero {
                    return Err(GraphError::Unsupported(
                        "ray origin and direction must not depend on the integration variable".into(),
                    ));
                }
                let t = arg(1).clone();
                if t == Tangent::Zero {
                    return Ok(Tangent::Zero);
                }
                let d = self.copy_forward(node.inputs[2])?;
                match t {
                    Tangent::Const(c) if c[0] == 1.0 => Tangent::Node(d),
                    Tangent::Const(c) => Tangent::Node(self.g.scale(d, c)?),
                    Tangent::Node(n) => {
                        let r = self.g.repeat(n, node.width)?;
                        Tangent::Node(self.g.hadamard(&[r, d])?)
                    }
                    Tangent::Zero => unreachable!(),
                }
            }
        })
    }
}

/// Builds the grad network `dPhi/d var` of `integral`.
///
/// The result has the same input signature and refers to the same layer ids.
/// Nodes that do not depend on `var` are dropped; an output that does not
/// depend on it becomes a zero constant.
pub fn derive(integral: &ComputeGraph, var: &str) -> Result<ComputeGraph, GraphError> {
    let var_slot = integral
        .slot_index(var)
        .ok_or_else(|| GraphError::UnknownInput(var.to_string()))?;
    if integral.signature()[var_slot].kind != SlotKind::Var {
        return Err(GraphError::NotAVariable(var.to_string()));
    }
    let src = integral.pruned();
    let live = src.live();
    let n = src.len();
    let mut d = Deriver { g: src.clone() };
    let mut tan = vec![Tangent::Zero; n];
    for i in 0..n {
        if live[i] {
            tan[i] = d.rule(NodeId(i as u32), var_slot, &tan)?;
        }
    }
    let mut outs = Vec::with_capacity(src.outputs().len());
    for &o in src.outputs() {
        let w = src.node(o).width;
        outs.push(d.materialize(&tan[o.index()].clone(), w)?);
    }
    d.g.set_outputs(outs)?;
    Ok(d.g.pruned())
}

/// Fixed inputs and per-row bounds of a batch of definite integrals.
#[derive(Debug, Clone)]
pub struct IntegralBounds {
    /// Every non-integration input, in signature order; one row per integral
    /// (or a single row shared by all).
    pub fixed: Vec<Array2<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// An integral network, its grad network and their shared parameters.
#[derive(Debug)]
pub struct AutoIntPair {
    pub integral: ComputeGraph,
    pub grad: ComputeGraph,
    pub var: String,
    pub params: ParamStore,
    integral_evals: AtomicU64,
}

impl Clone for AutoIntPair {
    fn clone(&self) -> Self {
        AutoIntPair {
            integral: self.integral.clone(),
            grad: self.grad.clone(),
            var: self.var.clone(),
            params: self.params.clone(),
            integral_evals: AtomicU64::new(self.integral_evals()),
        }
    }
}

impl AutoIntPair {
    pub fn new(integral: ComputeGraph, var: &str, params: ParamStore) -> Result<Self, GraphError> {
        let grad = derive(&integral, var)?;
        Ok(AutoIntPair {
            integral,
            grad,
            var: var.to_string(),
            params,
            integral_evals: AtomicU64::new(0),
        })
    }

    pub fn var_slot(&self) -> usize {
        self.integral.slot_index(&self.var).expect("checked at derivation")
    }

    /// Points at which the integral network has been evaluated so far.
    pub fn integral_evals(&self) -> u64 {
        self.integral_evals.load(Ordering::Relaxed)
    }

    pub fn reset_integral_evals(&self) {
        self.integral_evals.store(0, Ordering::Relaxed);
    }

    /// Evaluates `Phi`, counting every row as one integral-network evaluation.
    pub fn eval_integral(&self, inputs: &[Array2<f64>]) -> Result<EvalReport, GraphError> {
        let r = evaluate(&self.integral, inputs, &self.params, true)?;
        self.integral_evals
            .fetch_add(r.batch_rows as u64, Ordering::Relaxed);
        Ok(r)
    }

    /// `Phi` at the given inputs (first output).
    pub fn eval_antiderivative(&self, inputs: &[Array2<f64>]) -> Result<Array2<f64>, GraphError> {
        Ok(self.eval_integral(inputs)?.outputs.swap_remove(0))
    }

    /// `Psi` at the given inputs (first output).
    pub fn eval_grad(&self, inputs: &[Array2<f64>]) -> Result<Array2<f64>, GraphError> {
        Ok(evaluate(&self.grad, inputs, &self.params, true)?
            .outputs
            .swap_remove(0))
    }

    /// Full input list with the integration variable set to `values`.
    ///
    /// `fixed` holds the other inputs in signature order, each with one row
    /// (broadcast) or `values.len()` rows.
    pub fn inputs_at(&self, fixed: &[Array2<f64>], values: &[f64]) -> Result<Vec<Array2<f64>>, GraphError> {
        let sig = self.integral.signature();
        let vs = self.var_slot();
        if fixed.len() + 1 != sig.len() {
            return Err(GraphError::InputArity(format!(
                "expected {} fixed inputs, got {}",
                sig.len() - 1,
                fixed.len()
            )));
        }
        let rows = values.len();
        let mut out = Vec::with_capacity(sig.len());
        let mut it = fixed.iter();
        for (i, slot) in sig.iter().enumerate() {
            if i == vs {
                out.push(Array1::from(values.to_vec()).insert_axis(Axis(1)));
                continue;
            }
            let a = it.next().expect("length checked");
            if a.ncols() != slot.width || (a.nrows() != 1 && a.nrows() != rows) {
                return Err(GraphError::InputArity(format!(
                    "fixed input `{}` has shape {:?}",
                    slot.name,
                    a.dim()
                )));
            }
            out.push(if a.nrows() == rows {
                a.clone()
            } else {
                a.broadcast((rows, slot.width)).expect("single row").to_owned()
            });
        }
        Ok(out)
    }

    /// `Phi(upper) - Phi(lower)` row by row, with the two evaluation reports.
    pub fn definite_integral_with_reports(
        &self,
        bounds: &IntegralBounds,
    ) -> Result<(Array2<f64>, [EvalReport; 2]), GraphError> {
        if bounds.lower.len() != bounds.upper.len() {
            return Err(GraphError::InputArity(format!(
                "{} lower bounds, {} upper bounds",
                bounds.lower.len(),
                bounds.upper.len()
            )));
        }
        let hi = self.eval_integral(&self.inputs_at(&bounds.fixed, &bounds.upper)?)?;
        let lo = self.eval_integral(&self.inputs_at(&bounds.fixed, &bounds.lower)?)?;
        let value = &hi.outputs[0] - &lo.outputs[0];
        Ok((value, [hi, lo]))
    }

    /// Newton-Leibniz: `int_lower^upper Psi = Phi(upper) - Phi(lower)`, one row per integral.
    pub fn definite_integral(&self, bounds: &IntegralBounds) -> Result<Array2<f64>, GraphError> {
        Ok(self.definite_integral_with_reports(bounds)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InputSlot;
    use crate::nets::activation::Nonlinearity;
    use crate::nets::mlp::{build_integral_network, init_params, InitScheme, InputBlock, MlpSpec};
    use crate::nets::params::{Layer, LayerId};
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

    fn pair(hidden: Vec<usize>, nl: Nonlinearity, seed: u64) -> AutoIntPair {
        let spec = scalar_spec(hidden, nl);
        let p = init_params(&spec, seed).unwrap();
        let g = build_integral_network(&spec, &p).unwrap();
        AutoIntPair::new(g, "x", p).unwrap()
    }

    fn kinds(g: &ComputeGraph) -> Vec<&'static str> {
        g.nodes().iter().map(|n| n.kind.name()).collect()
    }

    #[test]
    fn one_hidden_layer_structure() {
        // Phi = W1 NL(W0 x + b0) + b1  =>  Psi = W1 (NL'(W0 x + b0) ⊙ W0 e_x)
        let p = pair(vec![4], Nonlinearity::Softplus, 0);
        let g = &p.grad;
        let out = g.node(g.outputs()[0]);
        assert!(matches!(
            out.kind,
            NodeKind::Affine {
                layer: LayerId(1),
                bias: false,
                ..
            }
        ));
        let had = g.node(out.inputs[0]);
        assert_eq!(had.kind, NodeKind::Hadamard);
        let (d, w0) = (g.node(had.inputs[0]), g.node(had.inputs[1]));
        assert_eq!(
            d.kind,
            NodeKind::Pointwise {
                nl: Nonlinearity::Softplus,
                order: 1
            }
        );
        assert!(matches!(
            g.node(d.inputs[0]).kind,
            NodeKind::Affine { layer: LayerId(0), bias: true, .. }
        ));
        assert!(matches!(
            w0.kind,
            NodeKind::Affine { layer: LayerId(0), bias: false, .. }
        ));
        assert_eq!(g.node(w0.inputs[0]).kind, NodeKind::Constant { value: vec![1.0] });
    }

    #[test]
    fn final_bias_is_annihilated() {
        let p = pair(vec![3, 3], Nonlinearity::swish(), 1);
        let last = LayerId(2);
        let uses_bias = p.grad.nodes().iter().any(|n| {
            matches!(n.kind, NodeKind::Affine { layer, bias: true, .. } if layer == last)
        });
        assert!(!uses_bias);
        let mut refs_i: Vec<LayerId> = p.integral.nodes().iter().filter_map(|n| n.param_ref()).collect();
        let mut refs_g: Vec<LayerId> = p.grad.nodes().iter().filter_map(|n| n.param_ref()).collect();
        refs_i.sort();
        refs_i.dedup();
        refs_g.sort();
        refs_g.dedup();
        assert_eq!(refs_i, refs_g);
    }

    #[test]
    fn same_signature() {
        let p = pair(vec![2], Nonlinearity::Relu, 0);
        assert_eq!(p.integral.signature(), p.grad.signature());
    }

    #[test]
    fn errors() {
        let mut g = ComputeGraph::new(vec![InputSlot::var("x"), InputSlot::constant("c", 1)]);
        let x = g.input("x").unwrap();
        let y = g.pointwise(x, Nonlinearity::Softplus, 2).unwrap();
        g.set_outputs(vec![y]).unwrap();
        assert!(matches!(derive(&g, "x"), Err(GraphError::DerivativeDepth(_))));
        assert!(matches!(derive(&g, "c"), Err(GraphError::NotAVariable(_))));
        assert!(matches!(derive(&g, "z"), Err(GraphError::UnknownInput(_))));
    }

    #[test]
    fn independent_output_is_zero() {
        let mut g = ComputeGraph::new(vec![InputSlot::var("x"), InputSlot::constant("c", 2)]);
        let c = g.input("c").unwrap();
        let y = g.pointwise(c, Nonlinearity::Softplus, 0).unwrap();
        g.set_outputs(vec![y]).unwrap();
        let d = derive(&g, "x").unwrap();
        let r = evaluate(&d, &[array![[1.0], [2.0]], array![[0.1, 0.2], [0.3, 0.4]]], &ParamStore::new(), true)
            .unwrap();
        assert_eq!(r.outputs[0], Array2::<f64>::zeros((2, 2)));
        // Only the input leaves and the zero constant remain.
        assert_eq!(kinds(&d), vec!["InputVar", "InputConst", "Constant"]);
    }

    #[test]
    fn single_affine_integral_is_linear() {
        let mut g = ComputeGraph::new(vec![InputSlot::var("x")]);
        let x = g.input("x").unwrap();
        let a = g.affine(x, LayerId(0), 1, 2, true).unwrap();
        g.set_outputs(vec![a]).unwrap();
        let mut params = ParamStore::new();
        params
            .push(Layer {
                weight: array![[1.5], [-2.0]],
                bias: array![0.3, 0.7],
            })
            .unwrap();
        let p = AutoIntPair::new(g, "x", params).unwrap();
        let bounds = IntegralBounds {
            fixed: vec![],
            lower: vec![-0.5, 2.0],
            upper: vec![1.5, 2.0],
        };
        let v = p.definite_integral(&bounds).unwrap();
        assert_eq!(v, array![[3.0, -4.0], [0.0, 0.0]]);
        assert_eq!(p.integral_evals(), 4);
    }

    #[test]
    fn bias_shift_moves_antiderivative_only() {
        let mut p = pair(vec![4, 4], Nonlinearity::Softplus, 2);
        let inp = [array![[0.2], [0.9]]];
        let phi0 = p.eval_antiderivative(&inp).unwrap();
        let psi0 = p.eval_grad(&inp).unwrap();
        p.params.layer_mut(LayerId(2)).unwrap().bias[0] += 1.25;
        let phi1 = p.eval_antiderivative(&inp).unwrap();
        let psi1 = p.eval_grad(&inp).unwrap();
        for (a, b) in phi0.iter().zip(phi1.iter()) {
            assert!((b - a - 1.25).abs() < 1e-12);
        }
        assert_eq!(psi0, psi1);
    }

    #[test]
    fn mutation_probe_reaches_both_graphs() {
        let mut p = pair(vec![4, 4], Nonlinearity::swish(), 3);
        let inp = [array![[0.4]]];
        let (phi0, psi0) = (p.eval_antiderivative(&inp).unwrap(), p.eval_grad(&inp).unwrap());
        p.params.layer_mut(LayerId(0)).unwrap().weight[[1, 0]] += 0.5;
        let (phi1, psi1) = (p.eval_antiderivative(&inp).unwrap(), p.eval_grad(&inp).unwrap());
        assert_ne!(phi0, phi1);
        assert_ne!(psi0, psi1);
    }

    #[test]
    fn empty_interval_and_additivity() {
        let p = pair(vec![8, 8], Nonlinearity::swish(), 4);
        let at = |a: f64, b: f64| {
            p.definite_integral(&IntegralBounds {
                fixed: vec![],
                lower: vec![a],
                upper: vec![b],
            })
            .unwrap()[[0, 0]]
        };
        assert_eq!(at(0.37, 0.37), 0.0);
        let (a, b, c) = (-0.8, 0.1, 1.3);
        let whole = at(a, c);
        let parts = at(a, b) + at(b, c);
        assert!((whole - parts).abs() <= 4.0 * f64::EPSILON * (1.0 + whole.abs()));
    }
}

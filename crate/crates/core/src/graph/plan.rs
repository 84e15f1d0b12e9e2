//! Compiled evaluation schedules and the forward tape.
//!
//! A plan walks the live graph in lexicographic-topological order. With reuse
//! enabled, a node whose kind, parameters and (already canonicalized) inputs
//! match an earlier node is mapped onto that node's slot instead of being
//! recomputed. Grad networks built by derivation duplicate the forward chain
//! once per leg, so this is where the leg computations are shared.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;

use super::ops;
use super::{lex_topo_order, ComputeGraph, GraphError, NodeId, NodeKind};
use crate::nets::params::ParamStore;

#[derive(Debug, Clone)]
pub(crate) struct PlanOp {
    pub kind: NodeKind,
    pub inputs: Vec<usize>,
    pub width: usize,
}

#[derive(Debug)]
pub(crate) struct Plan {
    pub ops: Vec<PlanOp>,
    pub node_slot: Vec<Option<usize>>,
    pub outputs: Vec<usize>,
    pub total_node_refs: usize,
}

impl Plan {
    pub(crate) fn compile(graph: &ComputeGraph, reuse: bool) -> Plan {
        let order = lex_topo_order(graph);
        let mut node_slot = vec![None; graph.len()];
        let mut ops: Vec<PlanOp> = Vec::with_capacity(order.len());
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for id in &order {
            let node = graph.node(*id);
            let inputs: Vec<usize> = node
                .inputs
                .iter()
                .map(|x| node_slot[x.index()].expect("scheduled after its inputs"))
                .collect();
            if reuse {
                let key = structural_key(&node.kind, &inputs);
                if let Some(&slot) = seen.get(&key) {
                    node_slot[id.index()] = Some(slot);
                    continue;
                }
                seen.insert(key, ops.len());
            }
            node_slot[id.index()] = Some(ops.len());
            ops.push(PlanOp {
                kind: node.kind.clone(),
                inputs,
                width: node.width,
            });
        }
        let outputs = graph
            .outputs()
            .iter()
            .map(|o| node_slot[o.index()].expect("outputs are live"))
            .collect();
        Plan {
            ops,
            node_slot,
            outputs,
            total_node_refs: order.len(),
        }
    }

    fn check_params(&self, params: &ParamStore) -> Result<(), GraphError> {
        for op in &self.ops {
            if let NodeKind::Affine {
                layer,
                in_width,
                out_width,
                ..
            } = op.kind
            {
                let l = params.layer(layer).ok_or_else(|| {
                    GraphError::Parameter(format!("layer {} is not in the parameter store", layer.0))
                })?;
                if l.in_width() != in_width || l.out_width() != out_width {
                    return Err(GraphError::Parameter(format!(
                        "layer {} has shape {}x{}, graph expects {}x{}",
                        layer.0,
                        l.out_width(),
                        l.in_width(),
                        out_width,
                        in_width
                    )));
                }
            }
        }
        Ok(())
    }

    fn forward(&self, inputs: &[Array2<f64>], params: &ParamStore) -> Vec<Array2<f64>> {
        let mut values: Vec<Array2<f64>> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let args: Vec<&Array2<f64>> = op.inputs.iter().map(|&s| &values[s]).collect();
            let v = ops::forward(op, &args, inputs, params);
            values.push(v);
        }
        values
    }
}

fn structural_key(kind: &NodeKind, inputs: &[usize]) -> Vec<u64> {
    let mut k: Vec<u64> = Vec::with_capacity(6 + inputs.len());
    match kind {
        NodeKind::InputVar { slot } => k.extend([0, *slot as u64]),
        NodeKind::InputConst { slot } => k.extend([1, *slot as u64]),
        NodeKind::Constant { value } => {
            k.extend([2, value.len() as u64]);
            k.extend(value.iter().map(|v| v.to_bits()));
        }
        NodeKind::Affine {
            layer,
            in_width,
            out_width,
            bias,
        } => k.extend([
            3,
            layer.0 as u64,
            *in_width as u64,
            *out_width as u64,
            *bias as u64,
        ]),
        NodeKind::Pointwise { nl, order } => {
            k.push(4);
            k.extend(nl.key_words());
            k.push(*order as u64);
        }
        NodeKind::Hadamard => k.push(5),
        NodeKind::Sum => k.push(6),
        NodeKind::ScaleConst { factor } => {
            k.extend([7, factor.len() as u64]);
            k.extend(factor.iter().map(|v| v.to_bits()));
        }
        NodeKind::Encode { encoding, order } => k.extend([
            8,
            encoding.freqs as u64,
            encoding.normalized as u64,
            *order as u64,
        ]),
        NodeKind::Repeat { times } => k.extend([9, *times as u64]),
        NodeKind::Concat => k.push(10),
        NodeKind::AffinePoint => k.push(11),
    }
    k.push(u64::MAX);
    k.extend(inputs.iter().map(|&s| s as u64));
    k
}

/// Outputs plus evaluation counters for one forward pass.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub outputs: Vec<Array2<f64>>,
    /// Node computations actually performed.
    pub unique_node_evals: usize,
    /// Live node references in the graph; what a schedule without reuse computes.
    pub total_node_refs: usize,
    /// Rows in the batch, i.e. points at which the graph was evaluated.
    pub batch_rows: usize,
}

/// Per-slot forward values, sufficient for [`super::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    pub(crate) plan: Arc<Plan>,
    pub(crate) values: Vec<Array2<f64>>,
    pub(crate) batch: usize,
}

impl Tape {
    /// Number of stored node values (unique computations).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn batch_rows(&self) -> usize {
        self.batch
    }

    /// Value of a graph node, broadcast to the batch.
    pub fn value(&self, id: NodeId) -> Option<Array2<f64>> {
        let slot = (*self.plan.node_slot.get(id.index())?)?;
        Some(broadcast_rows(&self.values[slot], self.batch))
    }

    pub fn outputs(&self) -> Vec<Array2<f64>> {
        self.plan
            .outputs
            .iter()
            .map(|&s| broadcast_rows(&self.values[s], self.batch))
            .collect()
    }
}

pub(crate) fn broadcast_rows(v: &Array2<f64>, rows: usize) -> Array2<f64> {
    if v.nrows() == rows {
        v.clone()
    } else {
        v.broadcast((rows, v.ncols()))
            .expect("row vector broadcasts")
            .to_owned()
    }
}

fn check_inputs(graph: &ComputeGraph, inputs: &[Array2<f64>]) -> Result<usize, GraphError> {
    let sig = graph.signature();
    if inputs.len() != sig.len() {
        return Err(GraphError::InputArity(format!(
            "expected {} inputs, got {}",
            sig.len(),
            inputs.len()
        )));
    }
    let rows = inputs.first().map(|a| a.nrows()).unwrap_or(1);
    for (slot, a) in sig.iter().zip(inputs) {
        if a.ncols() != slot.width {
            return Err(GraphError::InputArity(format!(
                "input `{}` expects width {}, got {}",
                slot.name,
                slot.width,
                a.ncols()
            )));
        }
        if a.nrows() != rows {
            return Err(GraphError::InputArity(format!(
                "input `{}` has {} rows, expected {rows}",
                slot.name,
                a.nrows()
            )));
        }
    }
    Ok(rows)
}

/// Evaluates every output of `graph` at a batch of inputs given in signature order.
pub fn evaluate(
    graph: &ComputeGraph,
    inputs: &[Array2<f64>],
    params: &ParamStore,
    reuse: bool,
) -> Result<EvalReport, GraphError> {
    let rows = check_inputs(graph, inputs)?;
    let plan = graph.plan(reuse);
    plan.check_params(params)?;
    let values = plan.forward(inputs, params);
    Ok(EvalReport {
        outputs: plan
            .outputs
            .iter()
            .map(|&s| broadcast_rows(&values[s], rows))
            .collect(),
        unique_node_evals: plan.ops.len(),
        total_node_refs: plan.total_node_refs,
        batch_rows: rows,
    })
}

/// Forward pass with leg reuse, keeping every unique node value for backprop.
pub fn record_tape(
    graph: &ComputeGraph,
    inputs: &[Array2<f64>],
    params: &ParamStore,
) -> Result<Tape, GraphError> {
    let rows = check_inputs(graph, inputs)?;
    let plan = graph.plan(true);
    plan.check_params(params)?;
    let values = plan.forward(inputs, params);
    Ok(Tape {
        plan,
        values,
        batch: rows,
    })
}

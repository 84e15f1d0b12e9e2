//! Reverse-mode pass over a recorded tape.

use std::sync::Arc;

use ndarray::Array2;

use super::ops;
use super::plan::broadcast_rows;
use super::{ComputeGraph, GraphError, NodeKind, Tape};
use crate::nets::params::{GradientSet, ParamStore};

#[derive(Debug, Clone)]
pub struct Backward {
    pub params: GradientSet,
    /// Cotangent per input slot (signature order), when requested.
    pub inputs: Vec<Option<Array2<f64>>>,
}

/// Gradient of `sum(outputs . upstream)` with respect to all parameters, and
/// optionally with respect to the graph inputs.
///
/// Walks the tape's unique-node schedule in reverse, so contributions through
/// shared legs accumulate in one slot.
pub fn backward(
    graph: &ComputeGraph,
    tape: &Tape,
    upstream: &[Array2<f64>],
    params: &ParamStore,
    want_inputs: bool,
) -> Result<Backward, GraphError> {
    let plan = &tape.plan;
    if !Arc::ptr_eq(plan, &graph.plan(true)) {
        return Err(GraphError::Internal(
            "tape was not recorded on this graph".into(),
        ));
    }
    if upstream.len() != plan.outputs.len() {
        return Err(GraphError::InputArity(format!(
            "expected {} upstream cotangents, got {}",
            plan.outputs.len(),
            upstream.len()
        )));
    }
    let n = plan.ops.len();
    if tape.values.len() != n {
        return Err(GraphError::Internal("tape is missing entries".into()));
    }

    let mut need = vec![false; n];
    for (s, op) in plan.ops.iter().enumerate() {
        need[s] = match op.kind {
            NodeKind::Affine { .. } => true,
            NodeKind::InputVar { .. } | NodeKind::InputConst { .. } => want_inputs,
            NodeKind::Constant { .. } => false,
            _ => op.inputs.iter().any(|&i| need[i]),
        };
    }

    let mut cot: Vec<Option<Array2<f64>>> = vec![None; n];
    for (&slot, up) in plan.outputs.iter().zip(upstream) {
        let v = &tape.values[slot];
        if up.ncols() != v.ncols() || up.nrows() != tape.batch {
            return Err(GraphError::InputArity(format!(
                "upstream cotangent has shape {:?}, output is {}x{}",
                up.dim(),
                tape.batch,
                v.ncols()
            )));
        }
        ops::accumulate(&mut cot[slot], up.clone(), v.nrows());
    }

    let mut grads = GradientSet::zeros_like(params);
    for s in (0..n).rev() {
        let Some(c) = cot[s].take() else { continue };
        let op = &plan.ops[s];
        if op.kind.is_input() {
            cot[s] = Some(c);
            continue;
        }
        if !need[s] {
            continue;
        }
        let args: Vec<&Array2<f64>> = op.inputs.iter().map(|&i| &tape.values[i]).collect();
        let arg_need: Vec<bool> = op.inputs.iter().map(|&i| need[i]).collect();
        let contribs = ops::vjp(op, &args, &c, &arg_need, params, &mut grads)?;
        for (&i, contrib) in op.inputs.iter().zip(contribs) {
            if let Some(contrib) = contrib {
                let rows = tape.values[i].nrows();
                ops::accumulate(&mut cot[i], contrib, rows);
            }
        }
    }

    let mut inputs = vec![None; graph.signature().len()];
    if want_inputs {
        for (s, op) in plan.ops.iter().enumerate() {
            if let NodeKind::InputVar { slot } | NodeKind::InputConst { slot } = op.kind {
                inputs[slot] = Some(match cot[s].take() {
                    Some(c) => broadcast_rows(&c, tape.batch),
                    None => Array2::zeros((tape.batch, op.width)),
                });
            }
        }
    }
    Ok(Backward {
        params: grads,
        inputs,
    })
}

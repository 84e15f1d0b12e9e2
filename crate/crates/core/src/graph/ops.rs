//! Forward kernels and vector-Jacobian products for each node kind.
//!
//! Values carry either the full batch or a single broadcast row; results take
//! the larger row count of their arguments.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::plan::PlanOp;
use super::{GraphError, NodeKind};
use crate::nets::activation::MAX_NL_ORDER;
use crate::nets::params::{GradientSet, ParamStore};

fn max_rows(args: &[&Array2<f64>]) -> usize {
    args.iter().map(|a| a.nrows()).max().unwrap_or(1)
}

fn row_factor(factor: &[f64], width: usize) -> Array1<f64> {
    if factor.len() == 1 {
        Array1::from_elem(width, factor[0])
    } else {
        Array1::from(factor.to_vec())
    }
}

pub(super) fn forward(
    op: &PlanOp,
    args: &[&Array2<f64>],
    leaves: &[Array2<f64>],
    params: &ParamStore,
) -> Array2<f64> {
    match &op.kind {
        NodeKind::InputVar { slot } | NodeKind::InputConst { slot } => leaves[*slot].clone(),
        NodeKind::Constant { value } => {
            Array2::from_shape_vec((1, value.len()), value.clone()).expect("row vector")
        }
        NodeKind::Affine { layer, bias, .. } => {
            let l = params.layer(*layer).expect("checked before evaluation");
            let mut y = args[0].dot(&l.weight.t());
            if *bias {
                y += &l.bias;
            }
            y
        }
        NodeKind::Pointwise { nl, order } => {
            let (nl, order) = (*nl, *order);
            args[0].mapv(|v| nl.eval(order, v))
        }
        NodeKind::Hadamard => {
            let mut out = Array2::ones((max_rows(args), op.width));
            for a in args {
                out *= *a;
            }
            out
        }
        NodeKind::Sum => {
            let mut out = Array2::zeros((max_rows(args), op.width));
            for a in args {
                out += *a;
            }
            out
        }
        NodeKind::ScaleConst { factor } => args[0] * &row_factor(factor, op.width),
        NodeKind::Encode { encoding, order } => {
            let x = args[0];
            let per = 2 * encoding.freqs;
            let mut out = Array2::zeros((x.nrows(), op.width));
            for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
                let orow = or.as_slice_mut().expect("standard layout");
                for (j, &p) in xr.iter().enumerate() {
                    encoding.write(p, *order, &mut orow[j * per..(j + 1) * per]);
                }
            }
            out
        }
        NodeKind::Repeat { times } => {
            let x = args[0];
            let mut out = Array2::zeros((x.nrows(), op.width));
            for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
                for (j, &v) in xr.iter().enumerate() {
                    or.slice_mut(s![j * times..(j + 1) * times]).fill(v);
                }
            }
            out
        }
        NodeKind::Concat => {
            let rows = max_rows(args);
            let views: Vec<ArrayView2<f64>> = args
                .iter()
                .map(|a| a.broadcast((rows, a.ncols())).expect("row broadcast"))
                .collect();
            concatenate(Axis(1), &views).expect("equal rows")
        }
        NodeKind::AffinePoint => {
            let (o, t, d) = (args[0], args[1], args[2]);
            let td = t * d;
            &td + o
        }
    }
}

/// Cotangents for each argument of `op`; `None` where `need` is false.
pub(super) fn vjp(
    op: &PlanOp,
    args: &[&Array2<f64>],
    cot: &Array2<f64>,
    need: &[bool],
    params: &ParamStore,
    grads: &mut GradientSet,
) -> Result<Vec<Option<Array2<f64>>>, GraphError> {
    let mut out: Vec<Option<Array2<f64>>> = vec![None; args.len()];
    match &op.kind {
        NodeKind::InputVar { .. } | NodeKind::InputConst { .. } | NodeKind::Constant { .. } => {}
        NodeKind::Affine { layer, bias, .. } => {
            let l = params.layer(*layer).expect("checked before evaluation");
            let g = &mut grads.layers[layer.0];
            let x = args[0];
            if x.nrows() == cot.nrows() {
                g.weight += &cot.t().dot(x);
            } else {
                // Broadcast input row: sum the cotangent over the batch first.
                let c = cot.sum_axis(Axis(0)).insert_axis(Axis(0));
                g.weight += &c.t().dot(x);
            }
            if *bias {
                g.bias += &cot.sum_axis(Axis(0));
            }
            if need[0] {
                out[0] = Some(cot.dot(&l.weight));
            }
        }
        NodeKind::Pointwise { nl, order } => {
            if need[0] {
                let next = order + 1;
                if next > MAX_NL_ORDER {
                    return Err(GraphError::DerivativeDepth(format!(
                        "backpropagating through a pointwise node of order {order} needs order {next}"
                    )));
                }
                let nl = *nl;
                let d = args[0].mapv(|v| nl.eval(next, v));
                out[0] = Some(cot * &d);
            }
        }
        NodeKind::Hadamard => {
            for j in 0..args.len() {
                if !need[j] {
                    continue;
                }
                let mut p = cot.clone();
                for (i, a) in args.iter().enumerate() {
                    if i != j {
                        p *= *a;
                    }
                }
                out[j] = Some(p);
            }
        }
        NodeKind::Sum => {
            for j in 0..args.len() {
                if need[j] {
                    out[j] = Some(cot.clone());
                }
            }
        }
        NodeKind::ScaleConst { factor } => {
            if need[0] {
                out[0] = Some(cot * &row_factor(factor, op.width));
            }
        }
        NodeKind::Encode { encoding, order } => {
            if need[0] {
                let x = args[0];
                let per = 2 * encoding.freqs;
                let mut dx = Array2::zeros(x.dim());
                for ((xr, cr), mut dr) in x.rows().into_iter().zip(cot.rows()).zip(dx.rows_mut()) {
                    for (j, &p) in xr.iter().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..encoding.freqs {
                            let (ds, dc) = encoding.pair(i, p, order + 1);
                            acc += cr[j * per + 2 * i] * ds + cr[j * per + 2 * i + 1] * dc;
                        }
                        dr[j] = acc;
                    }
                }
                out[0] = Some(dx);
            }
        }
        NodeKind::Repeat { times } => {
            if need[0] {
                let x = args[0];
                let mut dx = Array2::zeros((cot.nrows(), x.ncols()));
                for (cr, mut dr) in cot.rows().into_iter().zip(dx.rows_mut()) {
                    for j in 0..dr.len() {
                        dr[j] = cr.slice(s![j * times..(j + 1) * times]).sum();
                    }
                }
                out[0] = Some(dx);
            }
        }
        NodeKind::Concat => {
            let mut off = 0;
            for (j, a) in args.iter().enumerate() {
                let w = a.ncols();
                if need[j] {
                    out[j] = Some(cot.slice(s![.., off..off + w]).to_owned());
                }
                off += w;
            }
        }
        NodeKind::AffinePoint => {
            let (t, d) = (args[1], args[2]);
            if need[0] {
                out[0] = Some(cot.clone());
            }
            if need[1] {
                let prod = cot * d;
                out[1] = Some(prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            if need[2] {
                out[2] = Some(cot * t);
            }
        }
    }
    Ok(out)
}

/// Adds `contrib` into `slot`, summing over the batch when the slot holds a broadcast row.
pub(super) fn accumulate(slot: &mut Option<Array2<f64>>, contrib: Array2<f64>, rows: usize) {
    let contrib = if rows == 1 && contrib.nrows() > 1 {
        contrib.sum_axis(Axis(0)).insert_axis(Axis(0))
    } else {
        contrib
    };
    match slot {
        Some(acc) => *acc += &contrib,
        None => *slot = Some(contrib),
    }
}

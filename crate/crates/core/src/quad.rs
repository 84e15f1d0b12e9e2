//! Adaptive Simpson quadrature for vector-valued integrands.
//!
//! Intervals are refined level by level so that every level issues one batched
//! call to the integrand; that keeps graph-backed integrands cheap. The local
//! tolerance halves with every split, and an interval is accepted when the
//! Richardson error estimate `|S_left + S_right - S| / 15` is within it.
//! At the maximum depth an interval is still accepted if its error estimate
//! fits the overall tolerance, which lets isolated jumps through while real
//! singularities are reported.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("adaptive quadrature did not converge on [{a}, {b}] after {depth} refinements")]
    NonConvergence { a: f64, b: f64, depth: u32 },
    #[error("integrand returned {got} values for {points} points of dimension {dim}")]
    Shape { got: usize, points: usize, dim: usize },
    #[error("integrand is not finite near t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub tol: f64,
    /// Levels refined unconditionally, to avoid accepting a lucky coarse estimate.
    pub min_depth: u32,
    pub max_depth: u32,
}

impl QuadOptions {
    pub fn new(tol: f64) -> Self {
        QuadOptions {
            tol,
            min_depth: 3,
            max_depth: 40,
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: Vec<f64>,
    fm: Vec<f64>,
    fb: Vec<f64>,
    whole: Vec<f64>,
    tol: f64,
    depth: u32,
}

fn simpson(h: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((a, m), b)| h / 6.0 * (a + 4.0 * m + b))
        .collect()
}

fn call<F: FnMut(&[f64]) -> Vec<f64>>(
    f: &mut F,
    ts: &[f64],
    dim: usize,
) -> Result<Vec<Vec<f64>>, QuadError> {
    let out = f(ts);
    if out.len() != ts.len() * dim {
        return Err(QuadError::Shape {
            got: out.len(),
            points: ts.len(),
            dim,
        });
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(QuadError::NonFinite(ts[i / dim]));
    }
    Ok(out.chunks(dim).map(|c| c.to_vec()).collect())
}

/// Integrates `f` over `[a, b]` (signed; `a > b` gives the negated integral).
///
/// `f` maps a batch of abscissae to their values, flattened point-major with
/// `dim` values per point. The tolerance is absolute and per component.
pub fn integrate<F: FnMut(&[f64]) -> Vec<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    dim: usize,
    opts: QuadOptions,
) -> Result<Vec<f64>, QuadError> {
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let m = 0.5 * (a + b);
    let mut v = call(&mut f, &[a, m, b], dim)?.into_iter();
    let (fa, fm, fb) = (v.next().unwrap(), v.next().unwrap(), v.next().unwrap());
    let whole = simpson(b - a, &fa, &fm, &fb);
    let mut level = vec![Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol: opts.tol,
        depth: 0,
    }];
    let mut total = vec![0.0; dim];
    while !level.is_empty() {
        let ts: Vec<f64> = level
            .iter()
            .flat_map(|p| {
                let m = 0.5 * (p.a + p.b);
                [0.5 * (p.a + m), 0.5 * (m + p.b)]
            })
            .collect();
        let vals = call(&mut f, &ts, dim)?;
        let mut next = Vec::with_capacity(2 * level.len());
        for (p, lr) in level.into_iter().zip(vals.chunks(2)) {
            let m = 0.5 * (p.a + p.b);
            let h = 0.5 * (p.b - p.a);
            let left = simpson(h, &p.fa, &lr[0], &p.fm);
            let right = simpson(h, &p.fm, &lr[1], &p.fb);
            let err = left
                .iter()
                .zip(&right)
                .zip(&p.whole)
                .map(|((l, r), w)| (l + r - w).abs())
                .fold(0.0, f64::max);
            let depth = p.depth + 1;
            if depth >= opts.min_depth && err <= 15.0 * p.tol {
                for k in 0..dim {
                    let s = left[k] + right[k];
                    total[k] += s + (s - p.whole[k]) / 15.0;
                }
            } else if depth >= opts.max_depth && err <= 15.0 * opts.tol {
                // A jump (e.g. a ReLU grad network) never meets the halved
                // local tolerance, but at this width it is within budget.
                for k in 0..dim {
                    total[k] += left[k] + right[k];
                }
            } else if depth >= opts.max_depth {
                return Err(QuadError::NonConvergence {
                    a: p.a,
                    b: p.b,
                    depth,
                });
            } else {
                let tol = 0.5 * p.tol;
                next.push(Panel {
                    a: p.a,
                    b: m,
                    fa: p.fa,
                    fm: lr[0].clone(),
                    fb: p.fm.clone(),
                    whole: left,
                    tol,
                    depth,
                });
                next.push(Panel {
                    a: m,
                    b: p.b,
                    fa: p.fm,
                    fm: lr[1].clone(),
                    fb: p.fb,
                    whole: right,
                    tol,
                    depth,
                });
            }
        }
        level = next;
    }
    Ok(total)
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    opts: QuadOptions,
) -> Result<f64, QuadError> {
    integrate(|ts| ts.iter().map(|&t| f(t)).collect(), a, b, 1, opts).map(|v| v[0])
}

/// Integrates over `[a, b]` split at `breaks` (kinks or discontinuities of the
/// integrand). Each piece gets a share of the tolerance proportional to its length.
pub fn integrate_pieces<F: FnMut(&[f64]) -> Vec<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    dim: usize,
    opts: QuadOptions,
) -> Result<Vec<f64>, QuadError> {
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&t| t > lo && t < hi)
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.insert(0, lo);
    pts.push(hi);
    let len = hi - lo;
    let mut total = vec![0.0; dim];
    for w in pts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let piece_opts = QuadOptions {
            tol: opts.tol * (w[1] - w[0]) / len,
            ..opts
        };
        let part = integrate(&mut f, w[0], w[1], dim, piece_opts)?;
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total.into_iter().map(|v| sign * v).collect())
}

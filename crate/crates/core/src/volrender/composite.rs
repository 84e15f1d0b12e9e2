//! Piecewise compositing with per-interval constant density and color:
//! `C = sum_i T_i (1 - exp(-s_i d_i)) c_i`, `T_i = exp(-sum_{k<i} s_k d_k)`.

/// Returns the composited color and the weights `T_i (1 - exp(-s_i d_i))`.
pub fn composite(sigma: &[f64], color: &[[f64; 3]], delta: &[f64]) -> ([f64; 3], Vec<f64>) {
    debug_assert!(sigma.len() == color.len() && sigma.len() == delta.len());
    let mut out = [0.0; 3];
    let mut weights = Vec::with_capacity(sigma.len());
    let mut depth = 0.0f64;
    for i in 0..sigma.len() {
        let x = sigma[i] * delta[i];
        // T_i - T_{i+1}, written to keep precision when x is small.
        let w = (-depth).exp() * -(-x).exp_m1();
        depth += x;
        for c in 0..3 {
            out[c] += w * color[i][c];
        }
        weights.push(w);
    }
    (out, weights)
}

/// Cotangents of [`composite`] given `g = dL/dC`.
pub struct CompositeGrad {
    pub sigma: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub delta: Vec<f64>,
}

pub fn composite_backward(sigma: &[f64], color: &[[f64; 3]], delta: &[f64], g: [f64; 3]) -> CompositeGrad {
    let n = sigma.len();
    let (_, w) = composite(sigma, color, delta);
    // With x_k = s_k d_k: dC.g/dx_k = s_k T_{k+1} - sum_{i>k} s_i w_i, s_i = g . c_i.
    let s: Vec<f64> = color.iter().map(|c| g[0] * c[0] + g[1] * c[1] + g[2] * c[2]).collect();
    let mut t_next = Vec::with_capacity(n);
    let mut depth = 0.0f64;
    for i in 0..n {
        depth += sigma[i] * delta[i];
        t_next.push((-depth).exp());
    }
    let mut dx = vec![0.0; n];
    let mut tail = 0.0;
    for k in (0..n).rev() {
        dx[k] = s[k] * t_next[k] - tail;
        tail += s[k] * w[k];
    }
    CompositeGrad {
        sigma: (0..n).map(|k| dx[k] * delta[k]).collect(),
        color: w.iter().map(|&wk| [wk * g[0], wk * g[1], wk * g[2]]).collect(),
        delta: (0..n).map(|k| dx[k] * sigma[k]).collect(),
    }
}

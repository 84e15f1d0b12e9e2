//! Sinusoidal positional encoding and its derivatives.
//!
//! Each scalar `p` expands to `2L` components laid out as
//! `(sin w_0 p, cos w_0 p, ..., sin w_{L-1} p, cos w_{L-1} p)` with `w_i = 2^i pi`.
//! The normalized variant divides every component by `w_i`, which keeps the
//! derivative (the form that appears in a grad network) at unit amplitude.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Highest encoding derivative order that may appear as a graph node.
pub const MAX_ENCODE_NODE_ORDER: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    /// Number of frequencies `L`.
    pub freqs: usize,
    pub normalized: bool,
}

impl Encoding {
    pub fn new(freqs: usize, normalized: bool) -> Self {
        Encoding { freqs, normalized }
    }

    /// Output width for an input of `in_width` scalars.
    pub fn out_width(&self, in_width: usize) -> usize {
        2 * self.freqs * in_width
    }

    /// `w_i = 2^i pi`.
    #[inline]
    pub fn omega(i: usize) -> f64 {
        (1u64 << i) as f64 * PI
    }

    /// The `(sin, cos)` pair of frequency `i` differentiated `order` times.
    ///
    /// Any order is accepted here; backpropagating through an order-1 node needs order 2.
    #[inline]
    pub fn pair(&self, i: usize, p: f64, order: u8) -> (f64, f64) {
        let w = Self::omega(i);
        let (s, c) = (w * p).sin_cos();
        let (ds, dc) = match order % 4 {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        };
        let amp = match (order, self.normalized) {
            (0, false) => 1.0,
            (0, true) => 1.0 / w,
            (k, false) => w.powi(k as i32),
            (k, true) => w.powi(k as i32 - 1),
        };
        (amp * ds, amp * dc)
    }

    /// Writes the encoding of `p` (or its `order`-th derivative) into `out[..2L]`.
    #[inline]
    pub fn write(&self, p: f64, order: u8, out: &mut [f64]) {
        for i in 0..self.freqs {
            let (a, b) = self.pair(i, p, order);
            out[2 * i] = a;
            out[2 * i + 1] = b;
        }
    }
}

/// `gamma(p)` (order 0) or `d gamma / dp` (order 1) for a single scalar.
pub fn encode(p: f64, cfg: Encoding, order: u8) -> Vec<f64> {
    let mut out = vec![0.0; 2 * cfg.freqs];
    cfg.write(p, order, &mut out);
    out
}

//! One-dimensional fitting targets with closed-form antiderivatives.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, Stream};
use crate::train::{Batch, Sampler, Target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    /// `sum_k coeffs[k] x^k`
    Poly { coeffs: [f64; 4] },
    /// `cos(freq x)`
    Cos { freq: f64 },
    /// `exp(-(x - mu)^2 / (2 s^2))`
    Gaussian { mu: f64, sigma: f64 },
}

impl Signal {
    pub fn name(&self) -> &'static str {
        match self {
            Signal::Poly { .. } => "poly",
            Signal::Cos { .. } => "cos",
            Signal::Gaussian { .. } => "gaussian",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Signal::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            Signal::Cos { freq } => (freq * x).cos(),
            Signal::Gaussian { mu, sigma } => (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// An antiderivative (the constant is arbitrary).
    pub fn antiderivative(&self, x: f64) -> f64 {
        match *self {
            Signal::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * x.powi(k as i32 + 1) / (k + 1) as f64)
                .sum(),
            Signal::Cos { freq } => (freq * x).sin() / freq,
            Signal::Gaussian { mu, sigma } => {
                let s = sigma * std::f64::consts::SQRT_2;
                0.5 * s * std::f64::consts::PI.sqrt() * libm::erf((x - mu) / s)
            }
        }
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}

/// Uniform draws of `x` on `[lo, hi]` with targets `signal(x)`.
pub struct UniformSampler {
    pub signal: Signal,
    pub lo: f64,
    pub hi: f64,
    pub batch: usize,
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(signal: Signal, lo: f64, hi: f64, batch: usize, seed: u64) -> Self {
        UniformSampler {
            signal,
            lo,
            hi,
            batch,
            rng: substream(seed, Stream::Batching),
        }
    }
}

impl Sampler for UniformSampler {
    fn next_batch(&mut self, _iter: usize) -> Batch {
        let xs: Vec<f64> = (0..self.batch).map(|_| self.rng.gen_range(self.lo..=self.hi)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| self.signal.eval(x)).collect();
        Batch {
            inputs: vec![Array2::from_shape_vec((self.batch, 1), xs).unwrap()],
            target: Target::Values(Array2::from_shape_vec((self.batch, 1), ys).unwrap()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate_scalar, QuadOptions};

    #[test]
    fn antiderivatives_match_quadrature() {
        let signals = [
            Signal::Poly { coeffs: [1.0, -2.0, 0.5, 3.0] },
            Signal::Cos { freq: 2.0 },
            Signal::Gaussian { mu: 0.3, sigma: 0.2 },
        ];
        for s in signals {
            for &(a, b) in &[(-1.0, 1.0), (0.2, 0.9), (-3.0, 2.5)] {
                let q = integrate_scalar(|x| s.eval(x), a, b, QuadOptions::new(1e-12)).unwrap();
                assert!((q - s.integral(a, b)).abs() < 1e-10, "{} on [{a}, {b}]", s.name());
            }
        }
    }

    #[test]
    fn sampler_stays_in_range() {
        let mut s = UniformSampler::new(Signal::Cos { freq: 1.0 }, -2.0, 1.0, 64, 3);
        let b = s.next_batch(0);
        assert!(b.inputs[0].iter().all(|&x| (-2.0..=1.0).contains(&x)));
        match b.target {
            Target::Values(t) => {
                for (x, y) in b.inputs[0].iter().zip(t.iter()) {
                    assert_eq!(*y, x.cos());
                }
            }
            _ => panic!("expected values"),
        }
    }
}

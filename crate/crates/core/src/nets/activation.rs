//! Pointwise nonlinearities with closed-form first and second derivatives.
//!
//! Training a grad network backpropagates through nodes that already hold
//! `NL'`, so every kind must also expose `NL''`.

use serde::{Deserialize, Serialize};

/// Highest derivative order a nonlinearity provides.
pub const MAX_NL_ORDER: u8 = 2;

/// Default Swish slope.
pub const DEFAULT_SWISH_BETA: f64 = 1.0;
/// Default first-layer frequency scale for sine networks.
pub const DEFAULT_SINE_OMEGA0: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    Relu,
    Softplus,
    Swish {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Sine {
        #[serde(default = "default_omega0")]
        omega0: f64,
    },
}

fn default_beta() -> f64 {
    DEFAULT_SWISH_BETA
}

fn default_omega0() -> f64 {
    DEFAULT_SINE_OMEGA0
}

impl Nonlinearity {
    pub fn swish() -> Self {
        Nonlinearity::Swish {
            beta: DEFAULT_SWISH_BETA,
        }
    }

    pub fn sine() -> Self {
        Nonlinearity::Sine {
            omega0: DEFAULT_SINE_OMEGA0,
        }
    }

    /// Short lowercase name, used in file names and CSV rows.
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Softplus => "softplus",
            Nonlinearity::Swish { .. } => "swish",
            Nonlinearity::Sine { .. } => "sine",
        }
    }

    /// Parses the short name produced by [`Nonlinearity::name`], with default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Nonlinearity::Relu),
            "softplus" => Some(Nonlinearity::Softplus),
            "swish" => Some(Nonlinearity::swish()),
            "sine" | "siren" => Some(Nonlinearity::sine()),
            _ => None,
        }
    }

    /// Evaluates the `order`-th derivative at `x`.
    ///
    /// Panics if `order > MAX_NL_ORDER`; graph construction rejects such nodes
    /// before evaluation can reach this point.
    #[inline]
    pub fn eval(&self, order: u8, x: f64) -> f64 {
        assert!(order <= MAX_NL_ORDER, "nonlinearity order {order} unsupported");
        match *self {
            Nonlinearity::Relu => match order {
                0 => x.max(0.0),
                1 => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                // The kink is measure-zero; treat the second derivative as 0 everywhere.
                _ => 0.0,
            },
            Nonlinearity::Softplus => match order {
                0 => softplus(x),
                1 => sigmoid(x),
                _ => {
                    let s = sigmoid(x);
                    s * (1.0 - s)
                }
            },
            Nonlinearity::Swish { beta } => {
                let s = sigmoid(beta * x);
                match order {
                    0 => x * s,
                    1 => s + beta * x * s * (1.0 - s),
                    _ => beta * s * (1.0 - s) * (2.0 + beta * x * (1.0 - 2.0 * s)),
                }
            }
            Nonlinearity::Sine { omega0 } => match order {
                0 => (omega0 * x).sin(),
                1 => omega0 * (omega0 * x).cos(),
                _ => -omega0 * omega0 * (omega0 * x).sin(),
            },
        }
    }

    /// Words used as a structural hash key in evaluation plans.
    pub(crate) fn key_words(&self) -> [u64; 2] {
        match *self {
            Nonlinearity::Relu => [0, 0],
            Nonlinearity::Softplus => [1, 0],
            Nonlinearity::Swish { beta } => [2, beta.to_bits()],
            Nonlinearity::Sine { omega0 } => [3, omega0.to_bits()],
        }
    }
}

/// `NL^(order)(x)`; thin functional wrapper over [`Nonlinearity::eval`].
pub fn nl_eval(kind: Nonlinearity, order: u8, x: f64) -> f64 {
    kind.eval(order, x)
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [Nonlinearity; 4] = [
        Nonlinearity::Relu,
        Nonlinearity::Softplus,
        Nonlinearity::Swish { beta: 1.0 },
        Nonlinearity::Sine { omega0: 30.0 },
    ];

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn relu_step_derivative() {
        assert_eq!(nl_eval(Nonlinearity::Relu, 1, -1.0), 0.0);
        assert_eq!(nl_eval(Nonlinearity::Relu, 1, 2.0), 1.0);
        assert_eq!(nl_eval(Nonlinearity::Relu, 2, 2.0), 0.0);
    }

    #[test]
    fn swish_at_zero() {
        assert_eq!(nl_eval(Nonlinearity::swish(), 0, 0.0), 0.0);
    }

    #[test]
    fn softplus_derivative_matches_fd() {
        let fd = central(|x| softplus(x), 0.3, 1e-5);
        assert!((nl_eval(Nonlinearity::Softplus, 1, 0.3) - fd).abs() < 1e-8);
    }

    #[test]
    fn sine_uses_omega0() {
        let nl = Nonlinearity::sine();
        assert_eq!(nl.eval(0, 0.1), (3.0f64).sin());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // Deterministic sweep; relative to max(|value|, 1) so zero crossings are not ill-posed.
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for kind in KINDS {
            let h = match kind {
                Nonlinearity::Sine { .. } => 1e-6,
                _ => 1e-5,
            };
            for _ in 0..1000 {
                let x = -4.0 + 8.0 * next();
                if matches!(kind, Nonlinearity::Relu) && x.abs() < 1e-3 {
                    continue;
                }
                for order in 1..=2u8 {
                    let exact = kind.eval(order, x);
                    let fd = central(|y| kind.eval(order - 1, y), x, h);
                    let scale = exact.abs().max(fd.abs()).max(1.0);
                    assert!(
                        (exact - fd).abs() <= 1e-6 * scale,
                        "{kind:?} order {order} at {x}: {exact} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn stable_sigmoid_and_softplus_tails() {
        assert!(softplus(800.0).is_finite());
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}

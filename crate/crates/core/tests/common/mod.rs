#![allow(dead_code)]

use autoint::graph::InputSlot;
use autoint::nets::{InitScheme, InputBlock, MlpSpec, Nonlinearity};

pub const KINDS: [&str; 4] = ["relu", "softplus", "swish", "sine"];

pub fn nl(name: &str) -> Nonlinearity {
    Nonlinearity::from_name(name).unwrap()
}

/// Scalar-input network `x -> R`, optionally encoded.
pub fn scalar_spec(hidden: Vec<usize>, nl: Nonlinearity, freqs: usize, normalized: bool) -> MlpSpec {
    MlpSpec {
        inputs: vec![InputSlot::var("x")],
        blocks: vec![InputBlock::slot("x", freqs, normalized)],
        hidden,
        nonlinearity: nl,
        out_width: 1,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

/// Network over `(x, c)` with a 2-wide conditioning input concatenated after `x`.
pub fn conditioned_spec(hidden: Vec<usize>, nl: Nonlinearity, freqs: usize, normalized: bool) -> MlpSpec {
    MlpSpec {
        inputs: vec![InputSlot::var("x"), InputSlot::constant("c", 2)],
        blocks: vec![
            InputBlock::slot("x", freqs, normalized),
            InputBlock::slot("c", 0, false),
        ],
        hidden,
        nonlinearity: nl,
        out_width: 1,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

/// Ray network over `(o, t, d)`: the point `o + t d` is encoded, as is `d`.
pub fn ray_spec(hidden: Vec<usize>, nl: Nonlinearity, freqs: usize) -> MlpSpec {
    MlpSpec {
        inputs: vec![
            InputSlot::constant("o", 3),
            InputSlot::var("t"),
            InputSlot::constant("d", 3),
        ],
        blocks: vec![
            InputBlock::ray_point("o", "t", "d", freqs, true),
            InputBlock::slot("d", 1, true),
        ],
        hidden,
        nonlinearity: nl,
        out_width: 2,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

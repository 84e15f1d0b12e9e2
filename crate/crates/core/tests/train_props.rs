mod common;

use autoint::fit1d::{Signal, UniformSampler};
use autoint::gradnet::{AutoIntPair, IntegralBounds};
use autoint::nets::{build_integral_network, init_params, MlpSpec};
use autoint::train::{batch_loss, fit_grad_network, loss_and_grad, Batch, Sampler, Target, TrainConfig};
use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_for(spec: &MlpSpec, var: &str, seed: u64) -> AutoIntPair {
    let p = init_params(spec, seed).unwrap();
    let g = build_integral_network(spec, &p).unwrap();
    AutoIntPair::new(g, var, p).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(lo..hi))
}

/// Largest `|g - fd| / max(|g|, |fd|, floor)` over every scalar parameter.
/// The floor keeps exactly-zero gradients (dead ReLU units) from dividing by
/// round-off.
fn max_param_fd_error(pair: &AutoIntPair, batch: &Batch) -> f64 {
    let (_, grads) = loss_and_grad(pair, batch).unwrap();
    let mut probe = pair.clone();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..pair.params.num_scalars() {
        let w = pair.params.get_flat(i);
        probe.params.set_flat(i, w + h);
        let lp = batch_loss(&probe, batch).unwrap();
        probe.params.set_flat(i, w - h);
        let lm = batch_loss(&probe, batch).unwrap();
        probe.params.set_flat(i, w);
        let fd = (lp - lm) / (2.0 * h);
        let g = grads.get_flat(i);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn backprop_matches_differences_for_every_nonlinearity() {
    for kind in KINDS {
        let spec = scalar_spec(vec![16, 16], nl(kind), 0, false);
        let pair = pair_for(&spec, "x", 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = Batch {
            inputs: vec![uniform(&mut rng, 32, 1, -1.0, 1.0)],
            target: Target::Values(uniform(&mut rng, 32, 1, -1.0, 1.0)),
        };
        let err = max_param_fd_error(&pair, &batch);
        assert!(err <= 1e-4, "{kind}: {err:e}");
    }
}

#[test]
fn backprop_matches_differences_through_encoding_and_rays() {
    for kind in KINDS {
        let spec = ray_spec(vec![16, 16], nl(kind), 2);
        let pair = pair_for(&spec, "t", 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rays, per_ray) = (6, 5);
        let o = uniform(&mut rng, rays * per_ray, 3, -0.5, 0.5);
        let mut d = uniform(&mut rng, rays * per_ray, 3, -1.0, 1.0);
        for mut r in d.rows_mut() {
            let n = r.dot(&r).sqrt();
            r.mapv_inplace(|v| v / n);
        }
        let batch = Batch {
            inputs: vec![o, uniform(&mut rng, rays * per_ray, 1, 0.0, 1.0), d],
            target: Target::RayAverage {
                samples_per_ray: per_ray,
                scale: 1.0,
                values: uniform(&mut rng, rays, 2, 0.0, 1.0),
            },
        };
        let err = max_param_fd_error(&pair, &batch);
        assert!(err <= 1e-4, "{kind}: {err:e}");

        let spec = conditioned_spec(vec![16, 16], nl(kind), 3, true);
        let pair = pair_for(&spec, "x", 4);
        let batch = Batch {
            inputs: vec![uniform(&mut rng, 24, 1, -1.0, 1.0), uniform(&mut rng, 24, 2, -1.0, 1.0)],
            target: Target::Values(uniform(&mut rng, 24, 1, -1.0, 1.0)),
        };
        let err = max_param_fd_error(&pair, &batch);
        assert!(err <= 1e-4, "conditioned {kind}: {err:e}");
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn fits_a_linear_signal() {
    let spec = scalar_spec(vec![32, 32], nl("swish"), 0, false);
    let mut pair = pair_for(&spec, "x", 1);
    let signal = Signal::Poly { coeffs: [0.0, 2.0, 0.0, 0.0] };
    let mut sampler = UniformSampler::new(signal, -1.0, 1.0, 128, 1);
    let log = fit_grad_network(&mut pair, &mut sampler, &TrainConfig::new(2000, 1)).unwrap();
    let mut check = UniformSampler::new(signal, -1.0, 1.0, 1000, 99);
    let mse = batch_loss(&pair, &check.next_batch(0)).unwrap();
    assert!(mse < 1e-4, "held-out mse {mse:e}");
    assert!(median(&log.losses[..100]) > median(&log.losses[log.losses.len() - 100..]));
}

#[test]
fn cosine_fit_integrates_to_sine() {
    let spec = scalar_spec(vec![32, 32], nl("swish"), 0, false);
    let mut pair = pair_for(&spec, "x", 2);
    let signal = Signal::Cos { freq: 1.0 };
    let pi = std::f64::consts::PI;
    let mut sampler = UniformSampler::new(signal, -pi, pi, 128, 2);
    let cfg = TrainConfig::new(5000, 2);
    let log = fit_grad_network(&mut pair, &mut sampler, &cfg).unwrap();
    assert!(median(&log.losses[..100]) > median(&log.losses[log.losses.len() - 100..]));
    let v = pair
        .definite_integral(&IntegralBounds {
            fixed: vec![],
            lower: vec![0.0],
            upper: vec![pi / 2.0],
        })
        .unwrap()[[0, 0]];
    assert!((v - 1.0).abs() <= 0.02, "integral {v}");
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let spec = scalar_spec(vec![8, 8], nl("softplus"), 2, true);
        let mut pair = pair_for(&spec, "x", 7);
        let mut s = UniformSampler::new(Signal::Gaussian { mu: 0.0, sigma: 0.3 }, -1.0, 1.0, 32, 7);
        let log = fit_grad_network(&mut pair, &mut s, &TrainConfig::new(200, 7)).unwrap();
        (log, pair.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(pa, pb);
}

#[test]
fn decayed_rate_is_logged() {
    let spec = scalar_spec(vec![4], nl("swish"), 0, false);
    let mut pair = pair_for(&spec, "x", 0);
    let mut s = UniformSampler::new(Signal::Cos { freq: 1.0 }, -1.0, 1.0, 8, 0);
    let mut cfg = TrainConfig::new(25, 0);
    cfg.decay_every = 10;
    let log = fit_grad_network(&mut pair, &mut s, &cfg).unwrap();
    assert_eq!(log.lrs[9], 5e-4);
    assert_eq!(log.lrs[10], 5e-4 * 0.2);
    assert!((log.lrs[20] - 2e-5).abs() < 1e-20);
}

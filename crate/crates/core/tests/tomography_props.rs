use autoint::gradnet::AutoIntPair;
use autoint::nets::{build_integral_network, init_params, Nonlinearity};
use autoint::quad::{integrate_scalar, QuadOptions};
use autoint::tomography::*;
use autoint::train::{fit_grad_network, Sampler, Target, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn fresh_pair(nl: Nonlinearity, seed: u64) -> AutoIntPair {
    let spec = ct_spec(vec![16, 16], nl, [1, 1, 2]);
    let p = init_params(&spec, seed).unwrap();
    AutoIntPair::new(build_integral_network(&spec, &p).unwrap(), "t", p).unwrap()
}

fn psi_along(pair: &AutoIntPair, rho: f64, alpha: f64, ts: &[f64]) -> Vec<f64> {
    let n = ts.len();
    let inputs = vec![
        Array2::from_elem((n, 1), rho),
        Array2::from_elem((n, 1), alpha),
        Array2::from_shape_vec((n, 1), ts.to_vec()).unwrap(),
    ];
    pair.eval_grad(&inputs).unwrap().column(0).to_vec()
}

fn quadrature(pair: &AutoIntPair, rho: f64, alpha: f64) -> f64 {
    integrate_scalar(
        |t| psi_along(pair, rho, alpha, &[t])[0],
        T_NEAR,
        T_FAR,
        QuadOptions::new(1e-11),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn ray_points_lie_on_their_line(rho in -1.0f64..1.0, alpha in 0.0f64..3.2, t in -1.0f64..1.0) {
        let (x, y) = ray_point(rho, alpha, t);
        prop_assert!((x * alpha.cos() + y * alpha.sin() - rho).abs() <= 1e-12);
    }
}

#[test]
fn single_ray_sinogram_is_the_oracle() {
    let ph = Phantom::shepp_logan();
    let s = make_sinogram(&ph, 1, 1, 1e-9).unwrap();
    assert_eq!(s.values[[0, 0]], radon_oracle(&ph, rho_at(0, 1), alpha_at(0, 1), 1e-9).unwrap());
}

#[test]
fn centered_disk_columns_agree() {
    let s = make_sinogram(&Phantom::disk([0.0, 0.0], 0.5, 1.0), 16, 12, 1e-10).unwrap();
    for j in 1..12 {
        for i in 0..16 {
            assert!((s.values[[i, j]] - s.values[[i, 0]]).abs() <= 1e-8);
        }
    }
}

#[test]
fn column_maxima_trace_the_center_sinusoid() {
    let (cx, cy) = (0.3, -0.2);
    let ph = Phantom {
        ellipses: vec![Ellipse {
            center: [cx, cy],
            axes: [0.25, 0.12],
            rotation: 0.6,
            intensity: 1.0,
        }],
    };
    let (r, a) = (64, 48);
    let s = make_sinogram(&ph, r, a, 1e-9).unwrap();
    for j in 0..a {
        let col = s.values.column(j);
        let best = (0..r).max_by(|&p, &q| col[p].total_cmp(&col[q])).unwrap();
        let alpha = alpha_at(j, a);
        let center = cx * alpha.cos() + cy * alpha.sin();
        assert!(
            (rho_at(best, r) - center).abs() <= 1.0 / r as f64 + 1e-12,
            "column {j}: peak at {} vs {center}",
            rho_at(best, r)
        );
    }
}

#[test]
fn masked_columns_never_reach_a_batch() {
    let (r, a) = (8, 96);
    let full = make_sinogram(&Phantom::shepp_logan(), r, a, 1e-7).unwrap();
    let sub = subsample_angles(&full, 8).unwrap();
    assert_eq!(sub.supervised().len(), 12);
    let allowed: Vec<u64> = sub.supervised().iter().map(|&j| alpha_at(j, a).to_bits()).collect();
    let opts = CtTrainOptions {
        samples_per_ray: 2,
        rays_per_batch: 16,
    };
    let mut sampler = CtSampler::new(&sub, opts, 5).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for it in 0..1000 {
        let batch = sampler.next_batch(it);
        for &al in batch.inputs[1].iter() {
            assert!(allowed.contains(&al.to_bits()), "masked angle {al} drawn");
            seen.insert(al.to_bits());
        }
    }
    assert_eq!(seen.len(), 12);
}

/// Mean of the training estimator over many resamples matches quadrature.
#[test]
fn monte_carlo_estimate_is_unbiased() {
    let pair = fresh_pair(Nonlinearity::swish(), 3);
    let one_ray = Sinogram {
        values: Array2::zeros((1, 1)),
        mask: vec![true],
    };
    let (rays, t) = (10_000, 8);
    let opts = CtTrainOptions {
        samples_per_ray: t,
        rays_per_batch: rays,
    };
    let batch = CtSampler::new(&one_ray, opts, 11).unwrap().next_batch(0);
    let Target::RayAverage { scale, .. } = batch.target else { panic!("ray target expected") };
    let psi = pair.eval_grad(&batch.inputs).unwrap();
    let est: Vec<f64> = psi
        .column(0)
        .to_vec()
        .chunks(t)
        .map(|c| scale * c.iter().sum::<f64>() / t as f64)
        .collect();
    let mean = est.iter().sum::<f64>() / rays as f64;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (rays - 1) as f64;
    let se = (var / rays as f64).sqrt();
    let exact = quadrature(&pair, rho_at(0, 1), alpha_at(0, 1));
    assert!((mean - exact).abs() <= 2.0 * se, "mean {mean} vs {exact} (se {se:e})");
}

#[test]
fn inpainting_costs_two_evaluations_per_ray() {
    let pair = fresh_pair(Nonlinearity::Relu, 1);
    pair.reset_integral_evals();
    let out = inpaint_sinogram(&pair, 12, 8).unwrap();
    assert_eq!(out.integral_evals, 2 * 12 * 8);
    assert_eq!(pair.integral_evals(), 2 * 12 * 8);
    assert_eq!(out.sinogram.values.dim(), (12, 8));
}

fn disk_run(iters: usize) -> (Sinogram, AutoIntPair, f64) {
    let sino = make_sinogram(&Phantom::disk([0.0, 0.0], 0.5, 1.0), 32, 24, 1e-9).unwrap();
    let spec = ct_spec(vec![32, 32], Nonlinearity::swish(), [1, 1, 2]);
    let mut cfg = TrainConfig::new(iters, 0);
    cfg.learning_rate = 1e-2;
    cfg.decay_factor = 0.5;
    cfg.decay_every = 1000;
    let opts = CtTrainOptions {
        samples_per_ray: 64,
        rays_per_batch: 32,
    };
    let (pair, log) = train_ct(&sino, &spec, &cfg, opts).unwrap();
    let tail = &log.losses[log.losses.len() - 100..];
    (sino, pair, tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Dense supervision on a disk: the two-evaluation integrals fit every ray, and
/// agree with quadrature of the trained grad network.
#[test]
fn dense_disk_training_fits_and_stays_consistent() {
    let (sino, pair, mc_loss) = disk_run(5000);
    let inp = inpaint_sinogram(&pair, 32, 24).unwrap();
    let mse = (&inp.sinogram.values - &sino.values).mapv(|e| e * e).mean().unwrap();
    assert!(mse < 1e-3, "integral mse {mse:e}");
    assert!(mse.sqrt() <= 3.0 * mc_loss.sqrt(), "rmse {} vs training {}", mse.sqrt(), mc_loss.sqrt());

    for k in 0..10 {
        let (i, j) = ((7 * k + 3) % 32, (5 * k + 1) % 24);
        let (rho, alpha) = (rho_at(i, 32), alpha_at(j, 24));
        let q = quadrature(&pair, rho, alpha);
        let s = inp.sinogram.values[[i, j]];
        assert!((s - q).abs() <= 1e-6, "ray ({i}, {j}): {s} vs {q}");
    }
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

/// More supervised angles never hurt the masked columns: 3-seed medians,
/// every nonlinearity, reduced grid.
#[test]
fn dense_supervision_beats_subsampled() {
    let (r, a) = (32, 24);
    let full = make_sinogram(&Phantom::shepp_logan(), r, a, 1e-8).unwrap();
    let sparse = subsample_angles(&full, 8).unwrap();
    let peak = full.values.iter().cloned().fold(0.0, f64::max);
    let held_out = sparse.unsupervised();
    let opts = CtTrainOptions {
        samples_per_ray: 16,
        rays_per_batch: 32,
    };
    for name in ["relu", "softplus", "swish", "sine"] {
        let nl = Nonlinearity::from_name(name).unwrap();
        let (freqs, lr) = if name == "sine" { ([0, 0, 0], 1e-4) } else { ([2, 2, 4], 1e-3) };
        let spec = ct_spec(vec![32, 32], nl, freqs);
        let score = |data: &Sinogram, seed: u64| {
            let mut cfg = TrainConfig::new(1500, seed);
            cfg.learning_rate = lr;
            let (pair, _) = train_ct(data, &spec, &cfg, opts).unwrap();
            let inp = inpaint_sinogram(&pair, r, a).unwrap();
            psnr_columns(&full.values, &inp.sinogram.values, &held_out, peak)
        };
        let dense = median3([0, 1, 2].map(|s| score(&full, s)));
        let sub = median3([0, 1, 2].map(|s| score(&sparse, s)));
        assert!(dense >= sub, "{name}: dense {dense:.2} dB < 8x {sub:.2} dB");
    }
}

#[test]
fn fitting_any_batch_keeps_the_sampler_deterministic() {
    let sino = make_sinogram(&Phantom::disk([0.1, 0.0], 0.3, 1.0), 4, 4, 1e-8).unwrap();
    let opts = CtTrainOptions {
        samples_per_ray: 3,
        rays_per_batch: 5,
    };
    let run = || {
        let mut pair = fresh_pair(Nonlinearity::Softplus, 2);
        let mut s = CtSampler::new(&sino, opts, 9).unwrap();
        fit_grad_network(&mut pair, &mut s, &TrainConfig::new(30, 9)).unwrap();
        pair.params
    };
    assert_eq!(run(), run());
}

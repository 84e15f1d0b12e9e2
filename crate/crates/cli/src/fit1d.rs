//! `fit1d`: fit a grad network to a named signal and tabulate integrals.

use std::fmt::Write as _;

use autoint::fit1d::UniformSampler;
use autoint::gradnet::{AutoIntPair, IntegralBounds};
use autoint::graph::InputSlot;
use autoint::nets::{build_integral_network, init_params, Checkpoint, InitScheme, InputBlock, MlpSpec};
use autoint::rng::{substream, Stream};
use autoint::train::fit_grad_network;
use ndarray::Array2;
use rand::Rng;

use crate::config::{load_config, ExperimentConfig, Fit1dConfig, ScalarNetwork};
use crate::report::RunReport;
use crate::{write, CliError, RunArgs};

pub(crate) fn scalar_spec(net: &ScalarNetwork) -> MlpSpec {
    let mut blocks = vec![InputBlock::slot("x", 0, false)];
    if net.freqs > 0 {
        blocks.push(InputBlock::slot("x", net.freqs, net.normalized));
    }
    MlpSpec {
        inputs: vec![InputSlot::var("x")],
        blocks,
        hidden: net.hidden.clone(),
        nonlinearity: net.nonlinearity,
        out_width: 1,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

pub fn run(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::start("fit1d");
    let (cfg, dir) = load_config(args, "fit1d")?;
    let ExperimentConfig::Fit1d(cfg) = cfg else { unreachable!("task checked") };
    let Fit1dConfig {
        seed,
        signal,
        domain: [lo, hi],
        ..
    } = cfg;
    let spec = scalar_spec(&cfg.network);
    spec.validate()?;
    let params = init_params(&spec, seed)?;
    let mut pair = AutoIntPair::new(build_integral_network(&spec, &params)?, "x", params)?;
    report.mark("setup");

    let mut sampler = UniformSampler::new(signal, lo, hi, cfg.batch_size, seed);
    let log = fit_grad_network(&mut pair, &mut sampler, &cfg.train.to_config(seed))?;
    report.mark("train");

    let n = 1000;
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect();
    let psi = pair.eval_grad(&[Array2::from_shape_vec((n, 1), xs.clone()).expect("n rows")])?;
    let mse = xs
        .iter()
        .zip(psi.column(0))
        .map(|(&x, &p)| (p - signal.eval(x)).powi(2))
        .sum::<f64>()
        / n as f64;

    let mut rng = substream(seed, Stream::Data);
    let mut lower = Vec::with_capacity(cfg.eval_intervals);
    let mut upper = Vec::with_capacity(cfg.eval_intervals);
    for _ in 0..cfg.eval_intervals {
        let (u, v) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        lower.push(u.min(v));
        upper.push(u.max(v));
    }
    pair.reset_integral_evals();
    let values = pair.definite_integral(&IntegralBounds {
        fixed: vec![],
        lower: lower.clone(),
        upper: upper.clone(),
    })?;
    report.integral_evals = pair.integral_evals();
    let mut table = String::from("a,b,autoint,analytic,abs_err\n");
    let mut worst_rel = 0.0f64;
    for (k, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
        let got = values[[k, 0]];
        let exact = signal.integral(a, b);
        let err = (got - exact).abs();
        worst_rel = worst_rel.max(err / exact.abs().max(1e-12));
        let _ = writeln!(table, "{a},{b},{got},{exact},{err}");
    }
    report.mark("evaluate");

    report.add_reuse(&pair)?;
    report.metric("final_loss", log.final_loss().unwrap_or(f64::NAN));
    report.metric("heldout_mse", mse);
    report.metric("max_rel_integral_error", worst_rel);
    write(&dir.join("loss.csv"), log.to_csv())?;
    write(&dir.join("integrals.csv"), table)?;
    write(&dir.join("checkpoint.json"), Checkpoint::new(&spec, seed, &pair.params).to_json()?)?;
    write(&dir.join("metrics.json"), report.metrics_json())?;
    report.mark("write");
    Ok(report.finish())
}

//! `ct train` and `ct inpaint`.

use std::path::{Path, PathBuf};

use autoint::gradnet::AutoIntPair;
use autoint::nets::Checkpoint;
use autoint::tomography::{
    alpha_at, ct_spec, inpaint_sinogram, psnr, psnr_columns, radon_oracle, rho_at, subsample_angles, train_ct,
    write_pgm16, CtTrainOptions, Sinogram,
};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{load_config, CtConfig, CtRun, ExperimentConfig};
use crate::report::RunReport;
use crate::{pool, write, CliError, RunArgs};

const PSNR_HEADER: &str = "run,nonlinearity,psnr_masked,psnr_supervised,psnr_all,integral_evals\n";

fn load(args: &RunArgs) -> Result<(CtConfig, PathBuf), CliError> {
    let (cfg, dir) = load_config(args, "ct")?;
    let ExperimentConfig::Ct(cfg) = cfg else { unreachable!("task checked") };
    Ok((cfg, dir))
}

/// Ground-truth sinogram, one oracle call per ray, split over `threads`.
fn ground_truth(cfg: &CtConfig, threads: usize) -> Result<Sinogram, CliError> {
    let phantom = cfg.phantom.build();
    let (r, a) = (cfg.rows, cfg.angles);
    let values: Vec<f64> = pool(threads)?.install(|| {
        (0..r * a)
            .into_par_iter()
            .map(|k| radon_oracle(&phantom, rho_at(k / a, r), alpha_at(k % a, a), cfg.oracle_tol))
            .collect::<Result<_, _>>()
    })?;
    Ok(Sinogram {
        values: Array2::from_shape_vec((r, a), values).expect("r * a values"),
        mask: vec![true; a],
    })
}

fn peak(s: &Sinogram) -> f64 {
    s.values.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE)
}

fn checkpoint_path(dir: &Path, run: &CtRun) -> PathBuf {
    dir.join(format!("checkpoint_{}.json", run.name))
}

/// Inpaints with `pair`, writes its images and returns the PSNR CSV row and eval count.
fn inpaint_run(
    pair: &AutoIntPair,
    run: &CtRun,
    full: &Sinogram,
    sub: &Sinogram,
    dir: &Path,
    report: &mut RunReport,
) -> Result<String, CliError> {
    let inp = inpaint_sinogram(pair, full.rows(), full.angles())?;
    let est = &inp.sinogram.values;
    let pk = peak(full);
    let masked = psnr_columns(&full.values, est, &sub.unsupervised(), pk);
    let supervised = psnr_columns(&full.values, est, &sub.supervised(), pk);
    let all = psnr(&full.values, est, pk);
    write_pgm16(&dir.join(format!("inpainted_{}.pgm", run.name)), est, pk)?;
    write(&dir.join(format!("inpainted_{}.csv", run.name)), inp.sinogram.to_csv())?;
    report.integral_evals += inp.integral_evals as u64;
    report.metric(&format!("psnr_masked_{}", run.name), masked);
    report.metric(&format!("psnr_supervised_{}", run.name), supervised);
    log::info!("{}: masked {masked:.2} dB, supervised {supervised:.2} dB", run.name);
    Ok(format!(
        "{},{},{masked},{supervised},{all},{}\n",
        run.name,
        run.nonlinearity.name(),
        inp.integral_evals
    ))
}

pub fn train(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::start("ct train");
    let (cfg, dir) = load(args)?;
    let full = ground_truth(&cfg, args.threads)?;
    let sub = subsample_angles(&full, cfg.factor)?;
    let pk = peak(&full);
    let mut masked = full.values.clone();
    for j in sub.unsupervised() {
        masked.column_mut(j).fill(0.0);
    }
    write_pgm16(&dir.join("sinogram_gt.pgm"), &full.values, pk)?;
    write_pgm16(&dir.join("sinogram_masked.pgm"), &masked, pk)?;
    write(&dir.join("sinogram_gt.csv"), full.to_csv())?;
    write(&dir.join("mask.csv"), sub.mask_csv())?;
    report.mark("sinogram");

    let opts = CtTrainOptions {
        samples_per_ray: cfg.samples_per_ray,
        rays_per_batch: cfg.rays_per_batch,
    };
    let mut table = String::from(PSNR_HEADER);
    for run in &cfg.runs {
        let spec = ct_spec(cfg.network.hidden.clone(), run.nonlinearity, run.freqs.unwrap_or(cfg.network.freqs));
        spec.validate()?;
        let mut tcfg = cfg.train.to_config(cfg.seed);
        if let Some(lr) = run.learning_rate {
            tcfg.learning_rate = lr;
        }
        let (pair, log) = train_ct(&sub, &spec, &tcfg, opts)?;
        report.mark(&format!("train_{}", run.name));
        Checkpoint::new(&spec, cfg.seed, &pair.params).save(&checkpoint_path(&dir, run))?;
        write(&dir.join(format!("loss_{}.csv", run.name)), log.to_csv())?;
        if report.total_node_refs == 0 {
            report.add_reuse(&pair)?;
        }
        table.push_str(&inpaint_run(&pair, run, &full, &sub, &dir, &mut report)?);
        report.mark(&format!("inpaint_{}", run.name));
    }
    write(&dir.join("psnr.csv"), table)?;
    write(&dir.join("metrics.json"), report.metrics_json())?;
    report.mark("write");
    Ok(report.finish())
}

pub fn inpaint(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::start("ct inpaint");
    let (cfg, dir) = load(args)?;
    let mut checkpoints = Vec::with_capacity(cfg.runs.len());
    for run in &cfg.runs {
        let path = checkpoint_path(&dir, run);
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path));
        }
        checkpoints.push(Checkpoint::load(&path)?);
    }
    let full = ground_truth(&cfg, args.threads)?;
    let sub = subsample_angles(&full, cfg.factor)?;
    report.mark("sinogram");

    let mut table = String::from(PSNR_HEADER);
    for (run, ck) in cfg.runs.iter().zip(&checkpoints) {
        let (graph, params) = ck.network()?;
        let pair = AutoIntPair::new(graph, "t", params)?;
        if report.total_node_refs == 0 {
            report.add_reuse(&pair)?;
        }
        table.push_str(&inpaint_run(&pair, run, &full, &sub, &dir, &mut report)?);
    }
    report.mark("inpaint");
    write(&dir.join("inpaint_psnr.csv"), table)?;
    report.mark("write");
    Ok(report.finish())
}

//! `nvr train`, `nvr render` and `nvr bench`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use autoint::volrender::{
    reference_render, train_nvr, AnalyticScene, Camera, Image, NvrCheckpoint, NvrModel, NvrTrainOptions, Ray,
    RayDataset,
};
use rayon::prelude::*;

use crate::config::{load_config, ExperimentConfig, NvrConfig};
use crate::report::RunReport;
use crate::{pool, write, CliError, RunArgs};

const CHECKPOINT: &str = "nvr_checkpoint.json";

fn load(args: &RunArgs) -> Result<(NvrConfig, AnalyticScene, PathBuf), CliError> {
    let (cfg, dir) = load_config(args, "nvr")?;
    let ExperimentConfig::Nvr(cfg) = cfg else { unreachable!("task checked") };
    let scene = cfg.scene().map_err(CliError::Config)?;
    Ok((cfg, scene, dir))
}

fn train_cameras(cfg: &NvrConfig) -> Vec<Camera> {
    Camera::orbit(cfg.views.train_views, cfg.views.radius, cfg.views.fov_deg, 0.0)
}

/// Test poses sit between the training poses on the same orbit.
fn test_cameras(cfg: &NvrConfig) -> Vec<Camera> {
    Camera::orbit(cfg.views.test_views, cfg.views.radius, cfg.views.fov_deg, 0.5)
}

fn reference_colors(
    scene: &AnalyticScene,
    rays: &[Ray],
    tol: f64,
    threads: usize,
) -> Result<Vec<[f64; 3]>, CliError> {
    let colors = pool(threads)?.install(|| {
        rays.par_iter()
            .map(|r| reference_render(scene, r, tol))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(colors)
}

fn view_rays(cfg: &NvrConfig, scene: &AnalyticScene, cam: &Camera) -> Result<Vec<Ray>, CliError> {
    Ok(cam.rays(cfg.views.width, cfg.views.height, scene.bound)?)
}

fn write_image(dir: &Path, stem: &str, img: &Image) -> Result<(), CliError> {
    write(&dir.join(format!("{stem}.ppm")), img.to_ppm())?;
    write(&dir.join(format!("{stem}.raw")), img.to_raw())
}

/// Renders every test pose, writes images and `metrics.csv`, returns the median PSNR.
fn render_views(
    model: &NvrModel,
    cfg: &NvrConfig,
    scene: &AnalyticScene,
    dir: &Path,
    threads: usize,
    report: &mut RunReport,
) -> Result<f64, CliError> {
    let (w, h) = (cfg.views.width, cfg.views.height);
    let mut table = String::from("view,psnr,integral_evals\n");
    let mut psnrs = Vec::new();
    for (k, cam) in test_cameras(cfg).iter().enumerate() {
        let rays = view_rays(cfg, scene, cam)?;
        let reference = Image::new(w, h, reference_colors(scene, &rays, cfg.reference_tol, threads)?)?;
        let out = model.autoint_render(&rays)?;
        let img = Image::new(w, h, out.colors)?;
        let p = img.psnr(&reference);
        write_image(dir, &format!("test_{k:02}"), &img)?;
        write_image(dir, &format!("reference_{k:02}"), &reference)?;
        let _ = writeln!(table, "{k},{p},{}", out.integral_evals);
        report.integral_evals += out.integral_evals as u64;
        psnrs.push(p);
    }
    write(&dir.join("metrics.csv"), table)?;
    psnrs.sort_by(f64::total_cmp);
    let median = psnrs[psnrs.len() / 2];
    report.metric("test_psnr_median", median);
    report.add_reuse(&model.sigma)?;
    report.add_reuse(&model.color)?;
    Ok(median)
}

pub fn train(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::start("nvr train");
    let (cfg, scene, dir) = load(args)?;
    let mut data = RayDataset::default();
    for cam in train_cameras(&cfg) {
        data.rays.extend(view_rays(&cfg, &scene, &cam)?);
    }
    data.colors = reference_colors(&scene, &data.rays, cfg.reference_tol, args.threads)?;
    report.mark("dataset");

    let mut model = NvrModel::new(&cfg.model, cfg.seed)?;
    let n = cfg.model.intervals;
    let opts = NvrTrainOptions {
        samples_per_interval: cfg.samples_per_interval.unwrap_or((128 / n).max(1)),
        rays_per_batch: cfg.rays_per_batch,
    };
    let log = train_nvr(&mut model, &data, &cfg.train.to_config(cfg.seed), opts)?;
    report.metric("final_loss", log.final_loss().unwrap_or(f64::NAN));
    model.checkpoint().save(&dir.join(CHECKPOINT))?;
    write(&dir.join("loss.csv"), log.to_csv())?;
    report.mark("train");

    render_views(&model, &cfg, &scene, &dir, args.threads, &mut report)?;
    write(&dir.join("metrics.json"), report.metrics_json())?;
    report.mark("render");
    Ok(report.finish())
}

pub fn render(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::start("nvr render");
    let (cfg, scene, dir) = load(args)?;
    let path = dir.join(CHECKPOINT);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path));
    }
    let model = NvrCheckpoint::load(&path)?.model()?;
    report.mark("load");
    render_views(&model, &cfg, &scene, &dir, args.threads, &mut report)?;
    report.mark("render");
    Ok(report.finish())
}

/// Renders the first test pose with fresh networks at every interval count in
/// `bench_intervals`. Counts do not depend on the weights.
pub fn bench(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut report = RunReport::start("nvr bench");
    let (cfg, scene, dir) = load(args)?;
    let rays = view_rays(&cfg, &scene, &test_cameras(&cfg)[0])?;
    report.mark("setup");
    let mut table = String::from("intervals,rays,integral_evals,evals_per_ray,expected_evals\n");
    for &n in &cfg.bench_intervals {
        let mut spec = cfg.model.clone();
        spec.intervals = n;
        let model = NvrModel::new(&spec, cfg.seed)?;
        let out = model.autoint_render(&rays)?;
        report.mark(&format!("frame_n{n}"));
        let expected = (n + 1) * rays.len() * 2;
        let _ = writeln!(
            table,
            "{n},{},{},{},{expected}",
            rays.len(),
            out.integral_evals,
            out.integral_evals as f64 / rays.len() as f64
        );
        report.metric(&format!("evals_per_frame_n{n}"), out.integral_evals as f64);
        report.integral_evals += out.integral_evals as u64;
    }
    write(&dir.join("bench.csv"), table)?;
    report.mark("write");
    Ok(report.finish())
}

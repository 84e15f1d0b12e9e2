//! Versioned JSON experiment configs. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use autoint::fit1d::Signal;
use autoint::nets::Nonlinearity;
use autoint::tomography::Phantom;
use autoint::train::TrainConfig;
use autoint::volrender::{AnalyticScene, NvrSpec};
use serde::{Deserialize, Serialize};

use crate::{CliError, RunArgs};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Fit1d(Fit1dConfig),
    Ct(CtConfig),
    Nvr(NvrConfig),
}

impl ExperimentConfig {
    pub fn task(&self) -> &'static str {
        match self {
            ExperimentConfig::Fit1d(_) => "fit1d",
            ExperimentConfig::Ct(_) => "ct",
            ExperimentConfig::Nvr(_) => "nvr",
        }
    }

    fn common_mut(&mut self) -> (&mut u32, &mut u64, &mut Option<PathBuf>) {
        match self {
            ExperimentConfig::Fit1d(c) => (&mut c.schema_version, &mut c.seed, &mut c.output_dir),
            ExperimentConfig::Ct(c) => (&mut c.schema_version, &mut c.seed, &mut c.output_dir),
            ExperimentConfig::Nvr(c) => (&mut c.schema_version, &mut c.seed, &mut c.output_dir),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ExperimentConfig::Fit1d(c) => c.validate(),
            ExperimentConfig::Ct(c) => c.validate(),
            ExperimentConfig::Nvr(c) => c.validate(),
        }
    }
}

/// Optimizer settings; the run seed is supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iters: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub decay_factor: Option<f64>,
    #[serde(default)]
    pub decay_every: Option<usize>,
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.iters, seed);
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(f) = self.decay_factor {
            cfg.decay_factor = f;
        }
        if let Some(k) = self.decay_every {
            cfg.decay_every = k;
        }
        cfg
    }

    fn validate(&self) -> Result<(), String> {
        if self.iters == 0 {
            return Err("train.iters must be positive".into());
        }
        self.to_config(0).validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fit1dConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub signal: Signal,
    pub domain: [f64; 2],
    pub network: ScalarNetwork,
    pub train: TrainSection,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Random `[a, b]` pairs in the integral table.
    #[serde(default = "default_intervals")]
    pub eval_intervals: usize,
}

fn default_batch() -> usize {
    128
}

fn default_intervals() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarNetwork {
    pub hidden: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub freqs: usize,
    #[serde(default = "yes")]
    pub normalized: bool,
}

fn yes() -> bool {
    true
}

impl Fit1dConfig {
    fn validate(&self) -> Result<(), String> {
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(format!("domain [{lo}, {hi}] is empty or not finite"));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomId {
    SheppLogan,
    /// Centered disk of radius 0.5 and unit intensity.
    Disk,
}

impl PhantomId {
    pub fn build(self) -> Phantom {
        match self {
            PhantomId::SheppLogan => Phantom::shepp_logan(),
            PhantomId::Disk => Phantom::disk([0.0, 0.0], 0.5, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub phantom: PhantomId,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_angles")]
    pub angles: usize,
    /// Keep every `factor`-th angle for training.
    pub factor: usize,
    #[serde(default = "default_oracle_tol")]
    pub oracle_tol: f64,
    pub network: CtNetwork,
    /// One trained network per entry; several entries form a sweep.
    pub runs: Vec<CtRun>,
    pub train: TrainSection,
    #[serde(default = "default_samples_per_ray")]
    pub samples_per_ray: usize,
    #[serde(default = "default_rays_per_batch")]
    pub rays_per_batch: usize,
}

fn default_rows() -> usize {
    128
}

fn default_angles() -> usize {
    96
}

fn default_oracle_tol() -> f64 {
    1e-9
}

fn default_samples_per_ray() -> usize {
    16
}

fn default_rays_per_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtNetwork {
    pub hidden: Vec<usize>,
    /// Encoding frequencies for `(rho, alpha, t)`.
    pub freqs: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtRun {
    /// Used in artifact names.
    pub name: String,
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Overrides `network.freqs`.
    #[serde(default)]
    pub freqs: Option<[usize; 3]>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl CtConfig {
    fn validate(&self) -> Result<(), String> {
        if self.rows == 0 || self.angles == 0 {
            return Err("rows and angles must be positive".into());
        }
        if self.factor == 0 || self.angles % self.factor != 0 {
            return Err(format!(
                "subsampling factor {} does not divide {} angles",
                self.factor, self.angles
            ));
        }
        if self.runs.is_empty() {
            return Err("runs must list at least one network".into());
        }
        for (k, r) in self.runs.iter().enumerate() {
            if !valid_name(&r.name) {
                return Err(format!("run name `{}` must be [A-Za-z0-9_-]+", r.name));
            }
            if self.runs[..k].iter().any(|o| o.name == r.name) {
                return Err(format!("duplicate run name `{}`", r.name));
            }
        }
        if self.samples_per_ray == 0 || self.rays_per_batch == 0 {
            return Err("samples_per_ray and rays_per_batch must be positive".into());
        }
        if !(self.oracle_tol > 0.0) {
            return Err("oracle_tol must be positive".into());
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Views {
    pub width: usize,
    pub height: usize,
    pub train_views: usize,
    pub test_views: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
}

fn default_radius() -> f64 {
    3.0
}

fn default_fov() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvrConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// `single_blob`, `concentrated` or `uniform`.
    pub scene: String,
    pub model: NvrSpec,
    pub train: TrainSection,
    #[serde(default = "default_nvr_rays")]
    pub rays_per_batch: usize,
    /// Stratified samples per interval; `128 / N` when absent.
    #[serde(default)]
    pub samples_per_interval: Option<usize>,
    pub views: Views,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    #[serde(default = "default_bench")]
    pub bench_intervals: Vec<usize>,
}

fn default_nvr_rays() -> usize {
    64
}

fn default_reference_tol() -> f64 {
    1e-6
}

fn default_bench() -> Vec<usize> {
    vec![8, 16, 32]
}

impl NvrConfig {
    pub fn scene(&self) -> Result<AnalyticScene, String> {
        AnalyticScene::by_name(&self.scene).ok_or_else(|| format!("unknown scene `{}`", self.scene))
    }

    fn validate(&self) -> Result<(), String> {
        self.scene()?;
        let v = &self.views;
        if v.width == 0 || v.height == 0 || v.train_views == 0 || v.test_views == 0 {
            return Err("views need positive sizes and counts".into());
        }
        if !(v.fov_deg > 0.0 && v.fov_deg < 180.0) {
            return Err("views.fov_deg must be in (0, 180)".into());
        }
        if self.model.intervals == 0 || self.bench_intervals.contains(&0) {
            return Err("interval counts must be positive".into());
        }
        if self.rays_per_batch == 0 || self.samples_per_interval == Some(0) {
            return Err("rays_per_batch and samples_per_interval must be positive".into());
        }
        if !(self.reference_tol > 0.0) {
            return Err("reference_tol must be positive".into());
        }
        self.train.validate()
    }
}

/// Reads, validates and applies the CLI overrides. `task` must match the config.
pub fn load_config(args: &RunArgs, task: &str) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if cfg.task() != task {
        return Err(CliError::Config(format!(
            "config is for task `{}`, command expects `{task}`",
            cfg.task()
        )));
    }
    let (_, seed, out) = cfg.common_mut();
    if let Some(s) = args.seed {
        *seed = s;
    }
    if let Some(o) = &args.out {
        *out = Some(o.clone());
    }
    let dir = out.clone().unwrap_or_else(|| Path::new("runs").join(task));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    Ok((cfg, dir))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let (version, _, _) = cfg.common_mut();
    if *version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "schema_version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIT: &str = r#"{
        "task": "fit1d", "schema_version": 1, "seed": 3,
        "signal": {"kind": "cos", "freq": 1.0}, "domain": [-1.0, 1.0],
        "network": {"hidden": [8], "nonlinearity": {"kind": "swish"}},
        "train": {"iters": 10}
    }"#;

    #[test]
    fn parses_a_minimal_config() {
        let cfg = parse_config(FIT).unwrap();
        let ExperimentConfig::Fit1d(c) = cfg else { panic!("wrong task") };
        assert_eq!(c.seed, 3);
        assert_eq!(c.batch_size, 128);
        assert!(c.network.normalized);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let typo = FIT.replace("\"seed\"", "\"sede\": 1, \"seed\"");
        assert!(matches!(parse_config(&typo), Err(CliError::Config(_))));
        let nested = FIT.replace("\"iters\": 10", "\"iters\": 10, \"lr\": 1.0");
        assert!(matches!(parse_config(&nested), Err(CliError::Config(_))));
        let v2 = FIT.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(parse_config(&v2), Err(CliError::Config(_))));
        let noseed = FIT.replace("\"seed\": 3,", "");
        assert!(matches!(parse_config(&noseed), Err(CliError::Config(_))));
    }

    #[test]
    fn ct_factor_must_divide_angles() {
        let ct = r#"{
            "task": "ct", "schema_version": 1, "seed": 0, "phantom": "disk",
            "rows": 8, "angles": 12, "factor": 5,
            "network": {"hidden": [8], "freqs": [0, 0, 0]},
            "runs": [{"name": "a", "nonlinearity": {"kind": "relu"}}],
            "train": {"iters": 1}
        }"#;
        let err = parse_config(ct).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(parse_config(&ct.replace("\"factor\": 5", "\"factor\": 4")).is_ok());
    }
}

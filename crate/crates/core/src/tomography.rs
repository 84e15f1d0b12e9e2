//! Sparse-view CT: an analytic ellipse phantom, its Radon transform, training a
//! grad network on Monte-Carlo line integrals, and two-evaluation inpainting of
//! the full sinogram.
//!
//! A ray is `(rho, alpha)`; its points are
//! `(rho cos a - t sin a, rho sin a + t cos a)` for `t` in `[-1, 1]`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradnet::{AutoIntPair, IntegralBounds};
use crate::graph::{GraphError, InputSlot};
use crate::nets::{build_integral_network, init_params, InitScheme, InputBlock, MlpSpec, NetError, Nonlinearity};
use crate::quad::{integrate_pieces, QuadError, QuadOptions};
use crate::rng::{substream, Stream};
use crate::train::{fit_grad_network, Batch, Sampler, Target, TrainConfig, TrainError, TrainLog};

pub const T_NEAR: f64 = -1.0;
pub const T_FAR: f64 = 1.0;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("radon oracle failed: {0}")]
    Oracle(#[from] QuadError),
    #[error("subsampling factor {factor} does not divide {angles} angles")]
    Divisibility { factor: usize, angles: usize },
    #[error("invalid sinogram: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes along the rotated x and y directions.
    pub axes: [f64; 2],
    /// Counter-clockwise, radians.
    pub rotation: f64,
    /// Added to the density inside the ellipse.
    pub intensity: f64,
}

impl Ellipse {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) <= 1.0
    }

    /// Ray parameters where the ray enters and leaves the ellipse, if it hits.
    pub fn crossings(&self, rho: f64, alpha: f64) -> Option<(f64, f64)> {
        // p(t) = p0 + t e, with both mapped into the ellipse frame and scaled
        // to the unit circle: |q0 + t q1|^2 = 1.
        let (p0x, p0y) = ray_point(rho, alpha, 0.0);
        let (u0, v0) = self.local(p0x, p0y);
        let (e1x, e1y) = ray_point(rho, alpha, 1.0);
        let (u1, v1) = self.local(e1x, e1y);
        let (q0, r0) = (u0 / self.axes[0], v0 / self.axes[1]);
        let (q1, r1) = ((u1 - u0) / self.axes[0], (v1 - v0) / self.axes[1]);
        let a = q1 * q1 + r1 * r1;
        let b = 2.0 * (q0 * q1 + r0 * r1);
        let c = q0 * q0 + r0 * r0 - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        Some(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
    }
}

/// Sum of ellipses on `[-1, 1]^2`, clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
}

impl Phantom {
    pub fn disk(center: [f64; 2], radius: f64, intensity: f64) -> Self {
        Phantom {
            ellipses: vec![Ellipse {
                center,
                axes: [radius, radius],
                rotation: 0.0,
                intensity,
            }],
        }
    }

    /// The modified Shepp-Logan head phantom (higher-contrast variant).
    pub fn shepp_logan() -> Self {
        // (intensity, a, b, x0, y0, rotation in degrees)
        const TABLE: [[f64; 6]; 10] = [
            [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
            [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
            [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
            [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
            [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
            [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
            [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
            [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
            [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
            [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
        ];
        Phantom {
            ellipses: TABLE
                .iter()
                .map(|r| Ellipse {
                    center: [r[3], r[4]],
                    axes: [r[1], r[2]],
                    rotation: r[5].to_radians(),
                    intensity: r[0],
                })
                .collect(),
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        s.max(0.0)
    }

    /// Density on an `n x n` pixel grid over `[-1, 1]^2`, row 0 at the top.
    pub fn raster(&self, n: usize) -> Array2<f64> {
        let c = |k: usize| -1.0 + (2 * k + 1) as f64 / n as f64;
        Array2::from_shape_fn((n, n), |(i, j)| self.density(c(j), -c(i)))
    }
}

pub fn ray_point(rho: f64, alpha: f64, t: f64) -> (f64, f64) {
    let (s, c) = alpha.sin_cos();
    (rho * c - t * s, rho * s + t * c)
}

/// Line integral of the phantom along `(rho, alpha)` over `t` in `[-1, 1]`, by
/// adaptive quadrature split at every ellipse boundary.
pub fn radon_oracle(phantom: &Phantom, rho: f64, alpha: f64, tol: f64) -> Result<f64, TomoError> {
    let breaks: Vec<f64> = phantom
        .ellipses
        .iter()
        .filter_map(|e| e.crossings(rho, alpha))
        .flat_map(|(a, b)| [a, b])
        .collect();
    let f = |ts: &[f64]| {
        ts.iter()
            .map(|&t| {
                let (x, y) = ray_point(rho, alpha, t);
                phantom.density(x, y)
            })
            .collect::<Vec<_>>()
    };
    Ok(integrate_pieces(f, T_NEAR, T_FAR, &breaks, 1, QuadOptions::new(tol))?[0])
}

/// Measurements on an `R x A` grid: rows are eccentricities, columns angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub values: Array2<f64>,
    /// Supervised columns.
    pub mask: Vec<bool>,
}

/// Center of eccentricity bin `i` of `r`.
pub fn rho_at(i: usize, r: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / r as f64
}

/// Angle of column `j` of `a`, covering `[0, pi)`.
pub fn alpha_at(j: usize, a: usize) -> f64 {
    j as f64 * PI / a as f64
}

impl Sinogram {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn angles(&self) -> usize {
        self.values.ncols()
    }

    pub fn rho(&self, i: usize) -> f64 {
        rho_at(i, self.rows())
    }

    pub fn alpha(&self, j: usize) -> f64 {
        alpha_at(j, self.angles())
    }

    pub fn supervised(&self) -> Vec<usize> {
        (0..self.angles()).filter(|&j| self.mask[j]).collect()
    }

    pub fn unsupervised(&self) -> Vec<usize> {
        (0..self.angles()).filter(|&j| !self.mask[j]).collect()
    }

    /// `rho,alpha,value` rows in row-major order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rho,alpha,value\n");
        for i in 0..self.rows() {
            for j in 0..self.angles() {
                let _ = writeln!(s, "{},{},{:e}", self.rho(i), self.alpha(j), self.values[[i, j]]);
            }
        }
        s
    }

    /// Supervised column indices, one per line.
    pub fn mask_csv(&self) -> String {
        let mut s = String::from("column\n");
        for j in self.supervised() {
            let _ = writeln!(s, "{j}");
        }
        s
    }
}

pub fn make_sinogram(phantom: &Phantom, r: usize, a: usize, tol: f64) -> Result<Sinogram, TomoError> {
    if r == 0 || a == 0 {
        return Err(TomoError::Shape(format!("{r} x {a} grid")));
    }
    let mut values = Array2::zeros((r, a));
    for i in 0..r {
        for j in 0..a {
            values[[i, j]] = radon_oracle(phantom, rho_at(i, r), alpha_at(j, a), tol)?;
        }
    }
    Ok(Sinogram {
        values,
        mask: vec![true; a],
    })
}

/// Keeps every `factor`-th angle (starting with column 0) as supervised.
pub fn subsample_angles(sino: &Sinogram, factor: usize) -> Result<Sinogram, TomoError> {
    let a = sino.angles();
    if factor == 0 || a % factor != 0 {
        return Err(TomoError::Divisibility { factor, angles: a });
    }
    Ok(Sinogram {
        values: sino.values.clone(),
        mask: (0..a).map(|j| j % factor == 0).collect(),
    })
}

/// Integral network over `(rho, alpha, t)`: the raw coordinates followed by
/// normalized encodings of `freqs = (L_rho, L_alpha, L_t)` frequencies.
///
/// The raw `t` is required: every encoded component has a period dividing 2,
/// so without it `Phi(t = -1) == Phi(t = 1)` and every line integral is zero.
pub fn ct_spec(hidden: Vec<usize>, nonlinearity: Nonlinearity, freqs: [usize; 3]) -> MlpSpec {
    MlpSpec {
        inputs: vec![
            InputSlot::constant("rho", 1),
            InputSlot::constant("alpha", 1),
            InputSlot::var("t"),
        ],
        blocks: vec![
            InputBlock::slot("rho", 0, false),
            InputBlock::slot("alpha", 0, false),
            InputBlock::slot("t", 0, false),
            InputBlock::slot("rho", freqs[0], true),
            InputBlock::slot("alpha", freqs[1], true),
            InputBlock::slot("t", freqs[2], true),
        ],
        hidden,
        nonlinearity,
        out_width: 1,
        final_bias: true,
        init: InitScheme::Auto,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtTrainOptions {
    /// Monte-Carlo samples `T` per ray.
    pub samples_per_ray: usize,
    pub rays_per_batch: usize,
}

impl Default for CtTrainOptions {
    fn default() -> Self {
        CtTrainOptions {
            samples_per_ray: 64,
            rays_per_batch: 1024,
        }
    }
}

/// Draws supervised rays and uniform `t` samples along them. The training
/// estimate of a ray is `(t_f - t_n) / T * sum_j Psi(rho, alpha, t_j)`.
pub struct CtSampler {
    sino: Sinogram,
    columns: Vec<usize>,
    opts: CtTrainOptions,
    rays: ChaCha8Rng,
    ts: ChaCha8Rng,
}

impl CtSampler {
    pub fn new(sino: &Sinogram, opts: CtTrainOptions, seed: u64) -> Result<Self, TomoError> {
        let columns = sino.supervised();
        if columns.is_empty() || opts.samples_per_ray == 0 || opts.rays_per_batch == 0 {
            return Err(TomoError::Shape("nothing to train on".into()));
        }
        Ok(CtSampler {
            sino: sino.clone(),
            columns,
            opts,
            rays: substream(seed, Stream::Batching),
            ts: substream(seed, Stream::Sampling),
        })
    }
}

impl Sampler for CtSampler {
    fn next_batch(&mut self, _iter: usize) -> Batch {
        let (n, t) = (self.opts.rays_per_batch, self.opts.samples_per_ray);
        let mut rho = Array2::zeros((n * t, 1));
        let mut alpha = Array2::zeros((n * t, 1));
        let mut tt = Array2::zeros((n * t, 1));
        let mut values = Array2::zeros((n, 1));
        for k in 0..n {
            let i = self.rays.gen_range(0..self.sino.rows());
            let j = self.columns[self.rays.gen_range(0..self.columns.len())];
            values[[k, 0]] = self.sino.values[[i, j]];
            for s in 0..t {
                rho[[k * t + s, 0]] = self.sino.rho(i);
                alpha[[k * t + s, 0]] = self.sino.alpha(j);
                tt[[k * t + s, 0]] = self.ts.gen_range(T_NEAR..T_FAR);
            }
        }
        Batch {
            inputs: vec![rho, alpha, tt],
            target: Target::RayAverage {
                samples_per_ray: t,
                scale: T_FAR - T_NEAR,
                values,
            },
        }
    }
}

/// Trains a fresh network (initialized from `cfg.seed`) on the supervised columns.
pub fn train_ct(
    sino: &Sinogram,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    opts: CtTrainOptions,
) -> Result<(AutoIntPair, TrainLog), TomoError> {
    let params = init_params(spec, cfg.seed)?;
    let graph = build_integral_network(spec, &params)?;
    let mut pair = AutoIntPair::new(graph, "t", params)?;
    let mut sampler = CtSampler::new(sino, opts, cfg.seed)?;
    let log = fit_grad_network(&mut pair, &mut sampler, cfg)?;
    Ok((pair, log))
}

#[derive(Debug, Clone)]
pub struct Inpainting {
    pub sinogram: Sinogram,
    /// Integral-network row evaluations issued, summed over both bounds.
    pub integral_evals: usize,
}

/// `s(rho, alpha) = Phi(rho, alpha, t_f) - Phi(rho, alpha, t_n)` on the full grid.
pub fn inpaint_sinogram(pair: &AutoIntPair, r: usize, a: usize) -> Result<Inpainting, TomoError> {
    let n = r * a;
    let mut rho = Array2::zeros((n, 1));
    let mut alpha = Array2::zeros((n, 1));
    for i in 0..r {
        for j in 0..a {
            rho[[i * a + j, 0]] = rho_at(i, r);
            alpha[[i * a + j, 0]] = alpha_at(j, a);
        }
    }
    let bounds = IntegralBounds {
        fixed: vec![rho, alpha],
        lower: vec![T_NEAR; n],
        upper: vec![T_FAR; n],
    };
    let (s, reports) = pair.definite_integral_with_reports(&bounds)?;
    let values = Array2::from_shape_vec((r, a), s.column(0).to_vec()).expect("r * a rows");
    Ok(Inpainting {
        sinogram: Sinogram {
            values,
            mask: vec![true; a],
        },
        integral_evals: reports.iter().map(|rep| rep.batch_rows).sum(),
    })
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> f64 {
    assert_eq!(a.dim(), b.dim(), "psnr of differently shaped grids");
    let mse = (a - b).mapv(|v| v * v).mean().unwrap_or(0.0);
    psnr_from_mse(mse, peak)
}

/// PSNR over the listed columns only.
pub fn psnr_columns(a: &Array2<f64>, b: &Array2<f64>, columns: &[usize], peak: f64) -> f64 {
    assert_eq!(a.dim(), b.dim(), "psnr of differently shaped grids");
    let mut sum = 0.0;
    for &j in columns {
        sum += a.column(j).iter().zip(b.column(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    psnr_from_mse(sum / (columns.len() * a.nrows()) as f64, peak)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// Binary 16-bit PGM, values mapped linearly from `[0, peak]` and clamped.
pub fn write_pgm16(path: &Path, img: &Array2<f64>, peak: f64) -> Result<(), TomoError> {
    let mut buf = format!("P5\n{} {}\n65535\n", img.ncols(), img.nrows()).into_bytes();
    for &v in img.iter() {
        let q = (v / peak * 65535.0).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_point_examples() {
        assert_eq!(ray_point(0.0, 0.0, 0.3), (0.0, 0.3));
        let (x, y) = ray_point(0.5, PI / 2.0, 0.0);
        assert!(x.abs() < 1e-16 && (y - 0.5).abs() < 1e-16);
    }

    #[test]
    fn chords_of_a_centered_disk() {
        let disk = Phantom::disk([0.0, 0.0], 0.5, 1.0);
        assert!((radon_oracle(&disk, 0.0, 0.7, 1e-10).unwrap() - 1.0).abs() < 1e-9);
        assert!((radon_oracle(&disk, 0.3, 2.1, 1e-10).unwrap() - 0.8).abs() < 1e-9);
        assert_eq!(radon_oracle(&disk, 0.6, 0.0, 1e-10).unwrap(), 0.0);
        let empty = Phantom::disk([0.0, 0.0], 0.5, 0.0);
        assert_eq!(radon_oracle(&empty, 0.1, 0.2, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn shepp_logan_is_nonnegative_and_inside_unit_disk() {
        let p = Phantom::shepp_logan();
        let img = p.raster(64);
        assert!(img.iter().all(|&v| v >= 0.0));
        for i in 0..64 {
            for j in 0..64 {
                let (x, y) = (rho_at(j, 64), -rho_at(i, 64));
                if x * x + y * y > 1.0 {
                    assert_eq!(img[[i, j]], 0.0);
                }
            }
        }
        assert!(img.iter().cloned().fold(0.0, f64::max) > 0.9);
    }

    #[test]
    fn subsampling() {
        let s = Sinogram {
            values: Array2::zeros((2, 96)),
            mask: vec![true; 96],
        };
        assert_eq!(subsample_angles(&s, 1).unwrap().supervised().len(), 96);
        assert_eq!(subsample_angles(&s, 8).unwrap().supervised().len(), 12);
        assert!(matches!(subsample_angles(&s, 7), Err(TomoError::Divisibility { .. })));
    }

    #[test]
    fn psnr_examples() {
        let a = Array2::from_elem((2, 3), 0.5);
        assert_eq!(psnr(&a, &a, 1.0), PSNR_CAP);
        let b = a.mapv(|v| v + 2.0);
        assert!(psnr(&a, &b, 2.0).abs() < 1e-12);
        assert!((psnr_columns(&a, &b, &[1], 2.0)).abs() < 1e-12);
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = std::env::temp_dir().join(format!("autoint-pgm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.pgm");
        let img = Array2::from_shape_vec((2, 3), vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25]).unwrap();
        write_pgm16(&path, &img, 1.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 12);
        assert_eq!(&bytes[header.len() + 2..header.len() + 4], &32768u16.to_be_bytes());
        assert_eq!(&bytes[header.len() + 6..header.len() + 8], &65535u16.to_be_bytes());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

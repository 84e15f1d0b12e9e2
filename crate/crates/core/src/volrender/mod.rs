//! Piecewise neural volume rendering with per-interval integrals.
//!
//! A ray is split into `N` intervals whose lengths come from a small sampling
//! network. Density and color are constant per interval: in training they are
//! Monte-Carlo means of the grad networks over stratified samples, at inference
//! they are `(Phi(t_i) - Phi(t_{i-1})) / delta_i` from the integral networks.
//! Both paths apply the same activations (softplus for density, sigmoid for
//! color) to the interval mean, so they estimate the same quantity.

mod composite;
mod model;
mod scene;
mod train;

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;
use crate::nets::NetError;
use crate::quad::QuadError;
use crate::train::TrainError;

pub use composite::{composite, composite_backward, CompositeGrad};
pub use model::{
    color_spec, deltas_from_logits, sigma_spec, AutoIntRender, NvrCheckpoint, NvrModel, NvrSpec, SamplingNet,
    DELTA_FLOOR,
};
pub use scene::{interval_means, piecewise_render_exact, reference_render, AnalyticScene, Blob};
pub use train::{nvr_loss_and_grads, train_nvr, NvrGrads, NvrTrainOptions, RayDataset, StepNoise};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid ray: {0}")]
    Ray(String),
    #[error("quadrature failed: {0}")]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("bad image data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub o: [f64; 3],
    /// Unit length.
    pub d: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    /// Normalizes `d`; fails on a zero direction or an empty interval.
    pub fn new(o: [f64; 3], d: [f64; 3], near: f64, far: f64) -> Result<Self, RenderError> {
        let n = norm(d);
        if !(n > 0.0) || !n.is_finite() {
            return Err(RenderError::Ray(format!("direction {d:?}")));
        }
        if !(near < far) {
            return Err(RenderError::Ray(format!("bounds [{near}, {far}]")));
        }
        Ok(Ray {
            o,
            d: d.map(|v| v / n),
            near,
            far,
        })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.o[0] + t * self.d[0],
            self.o[1] + t * self.d[1],
            self.o[2] + t * self.d[2],
        ]
    }

    pub fn length(&self) -> f64 {
        self.far - self.near
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    v.map(|x| x / n)
}

/// Ideal pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view.
    pub fov_deg: f64,
}

impl Camera {
    /// One ray per pixel center, row-major from the top-left. Rays span the
    /// chord of a sphere of radius `bound` around `look_at` at the camera's distance.
    pub fn rays(&self, width: usize, height: usize, bound: f64) -> Result<Vec<Ray>, RenderError> {
        let fwd = unit(sub(self.look_at, self.position));
        let right = unit(cross(fwd, self.up));
        let up = cross(right, fwd);
        let dist = norm(sub(self.look_at, self.position));
        let (near, far) = ((dist - bound).max(1e-3), dist + bound);
        let half = (0.5 * self.fov_deg).to_radians().tan();
        let aspect = width as f64 / height as f64;
        let mut rays = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                let x = (2.0 * (c as f64 + 0.5) / width as f64 - 1.0) * half * aspect;
                let y = (1.0 - 2.0 * (r as f64 + 0.5) / height as f64) * half;
                let d = [0, 1, 2].map(|k| fwd[k] + x * right[k] + y * up[k]);
                rays.push(Ray::new(self.position, d, near, far)?);
            }
        }
        Ok(rays)
    }

    /// `count` cameras on a sphere of `radius` looking at the origin, spread by
    /// golden-angle steps in azimuth and even steps in `sin(elevation)`.
    /// `phase` in `[0, 1)` shifts the azimuths, giving a disjoint set of views.
    pub fn orbit(count: usize, radius: f64, fov_deg: f64, phase: f64) -> Vec<Camera> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..count)
            .map(|k| {
                let z = -0.8 + 1.6 * (k as f64 + 0.5) / count as f64;
                let el = z.asin();
                let az = (k as f64 + phase) * golden;
                Camera {
                    position: [radius * el.cos() * az.cos(), radius * el.cos() * az.sin(), radius * z],
                    look_at: [0.0; 3],
                    up: [0.0, 0.0, 1.0],
                    fov_deg,
                }
            })
            .collect()
    }
}

/// `N * M` positions: interval `i` is split into `M` equal bins and one
/// uniform draw is taken in each. Sorted, and each within its bin.
pub fn stratified_samples<R: Rng>(near: f64, delta: &[f64], m: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(delta.len() * m);
    let mut lo = near;
    for &d in delta {
        for j in 0..m {
            let u: f64 = rng.gen();
            out.push(lo + (j as f64 + u) / m as f64 * d);
        }
        lo += d;
    }
    out
}

/// RGB image, row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

const RAW_MAGIC: &[u8; 4] = b"AINT";

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self, RenderError> {
        if pixels.len() != width * height {
            return Err(RenderError::Format(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    /// PSNR against `other` with peak 1, after clamping both to `[0, 1]`.
    pub fn psnr(&self, other: &Image) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut sum = 0.0;
        for (a, b) in self.pixels.iter().zip(&other.pixels) {
            for c in 0..3 {
                sum += (a[c].clamp(0.0, 1.0) - b[c].clamp(0.0, 1.0)).powi(2);
            }
        }
        let mse = sum / (3 * self.pixels.len()) as f64;
        if mse <= 0.0 {
            crate::tomography::PSNR_CAP
        } else {
            (-10.0 * mse.log10()).min(crate::tomography::PSNR_CAP)
        }
    }

    /// Binary PPM (P6), 8 bits per channel, clamped to `[0, 1]`.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            for &v in p {
                buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        buf
    }

    /// 16-byte header (`AINT`, width, height, channels as little-endian u32)
    /// followed by little-endian f32 samples.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 12 * self.pixels.len());
        buf.extend_from_slice(RAW_MAGIC);
        for v in [self.width as u32, self.height as u32, 3u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.pixels {
            for &v in p {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self, RenderError> {
        if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
            return Err(RenderError::Format("missing AINT header".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        let (w, h, ch) = (word(1), word(2), word(3));
        if ch != 3 || bytes.len() != 16 + 4 * w * h * ch {
            return Err(RenderError::Format(format!("{w}x{h}x{ch} with {} bytes", bytes.len())));
        }
        let f = |i: usize| f32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap()) as f64;
        let pixels = (0..w * h).map(|p| [f(3 * p), f(3 * p + 1), f(3 * p + 2)]).collect();
        Image::new(w, h, pixels)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::File::create(path)?.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn write_raw(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::File::create(path)?.write_all(&self.to_raw())?;
        Ok(())
    }
}

/// Reference image of the analytic scene.
pub fn reference_image(
    scene: &AnalyticScene,
    camera: &Camera,
    width: usize,
    height: usize,
    tol: f64,
) -> Result<Image, RenderError> {
    let rays = camera.rays(width, height, scene.bound)?;
    let pixels = rays
        .iter()
        .map(|r| reference_render(scene, r, tol))
        .collect::<Result<Vec<_>, _>>()?;
    Image::new(width, height, pixels)
}

/// Image rendered with the integral networks.
pub fn render_image(
    model: &NvrModel,
    camera: &Camera,
    width: usize,
    height: usize,
    bound: f64,
) -> Result<(Image, AutoIntRender), RenderError> {
    let rays = camera.rays(width, height, bound)?;
    let out = model.autoint_render(&rays)?;
    Ok((Image::new(width, height, out.colors.clone())?, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ray_normalizes_and_validates() {
        let r = Ray::new([0.0; 3], [0.0, 3.0, 4.0], 0.0, 1.0).unwrap();
        assert!((norm(r.d) - 1.0).abs() < 1e-15);
        assert!(Ray::new([0.0; 3], [0.0; 3], 0.0, 1.0).is_err());
        assert!(Ray::new([0.0; 3], [1.0, 0.0, 0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn camera_rays_point_at_target() {
        let cam = Camera {
            position: [0.0, -3.0, 0.0],
            look_at: [0.0; 3],
            up: [0.0, 0.0, 1.0],
            fov_deg: 40.0,
        };
        let rays = cam.rays(2, 2, 1.5).unwrap();
        assert_eq!(rays.len(), 4);
        // Top-left pixel looks up and to the left of the target.
        assert!(rays[0].d[0] < 0.0 && rays[0].d[2] > 0.0);
        assert!(rays[3].d[0] > 0.0 && rays[3].d[2] < 0.0);
        assert_eq!((rays[0].near, rays[0].far), (1.5, 4.5));
        let center = cam.rays(1, 1, 1.5).unwrap()[0];
        assert!((center.d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orbit_cameras_are_distinct() {
        let a = Camera::orbit(20, 3.0, 40.0, 0.0);
        let b = Camera::orbit(4, 3.0, 40.0, 0.5);
        for c in a.iter().chain(&b) {
            assert!((norm(c.position) - 3.0).abs() < 1e-12);
        }
        for c in &b {
            assert!(a.iter().all(|x| norm(sub(x.position, c.position)) > 1e-3));
        }
    }

    #[test]
    fn stratified_samples_stay_in_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = stratified_samples(2.0, &[3.0], 1, &mut rng);
        assert!(one.len() == 1 && (2.0..5.0).contains(&one[0]));
        let delta = [0.5, 0.1, 1.4];
        let m = 5;
        let mut means = vec![0.0; 15];
        let draws = 100_000;
        for _ in 0..draws {
            let t = stratified_samples(1.0, &delta, m, &mut rng);
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            let mut lo = 1.0;
            for (i, &d) in delta.iter().enumerate() {
                for j in 0..m {
                    let v = t[i * m + j];
                    let a = lo + j as f64 / m as f64 * d;
                    assert!(v >= a && v <= a + d / m as f64);
                    means[i * m + j] += v / draws as f64;
                }
                lo += d;
            }
        }
        // Uniform on a bin of width w: standard error w / sqrt(12 draws).
        let mut lo = 1.0;
        for (i, &d) in delta.iter().enumerate() {
            let w = d / m as f64;
            for j in 0..m {
                let center = lo + (j as f64 + 0.5) * w;
                let se = w / (12.0 * draws as f64).sqrt();
                assert!((means[i * m + j] - center).abs() < 3.0 * se);
            }
            lo += d;
        }
    }

    #[test]
    fn image_formats() {
        let img = Image::new(2, 1, vec![[0.0, 0.5, 1.0], [2.0, -1.0, 0.25]]).unwrap();
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&ppm[ppm.len() - 6..], &[0, 128, 255, 255, 0, 64]);
        let back = Image::from_raw(&img.to_raw()).unwrap();
        assert_eq!(back, img);
        assert_eq!(img.to_raw().len(), 16 + 24);
        assert!(Image::from_raw(b"nope").is_err());
        assert_eq!(img.psnr(&img), crate::tomography::PSNR_CAP);
    }
}

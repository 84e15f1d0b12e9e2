//! Closed-form scenes made of Gaussian density blobs, and the quadrature
//! renderers used as ground truth.

use serde::{Deserialize, Serialize};

use super::composite::composite;
use super::{Ray, RenderError};
use crate::quad::{integrate, integrate_scalar, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: [f64; 3],
    /// Standard deviation of the Gaussian.
    pub radius: f64,
    /// Density at the center.
    pub density: f64,
    pub color: [f64; 3],
}

impl Blob {
    fn sigma(&self, x: [f64; 3]) -> f64 {
        let r2: f64 = (0..3).map(|k| (x[k] - self.center[k]).powi(2)).sum();
        self.density * (-0.5 * r2 / (self.radius * self.radius)).exp()
    }
}

/// `sigma(x) = ambient + sum_k blob_k(x)`; the color is the density-weighted
/// mix of blob colors, each tinted toward the view direction's `z` by `tint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub ambient_density: f64,
    #[serde(default)]
    pub ambient_color: [f64; 3],
    /// View dependence in `[0, 1]`.
    #[serde(default)]
    pub tint: f64,
    /// Radius of a sphere around the origin that holds all the density.
    pub bound: f64,
}

impl AnalyticScene {
    pub fn single_blob() -> Self {
        AnalyticScene {
            blobs: vec![Blob {
                center: [0.0, 0.0, 0.0],
                radius: 0.35,
                density: 6.0,
                color: [0.9, 0.4, 0.2],
            }],
            ambient_density: 0.0,
            ambient_color: [0.0; 3],
            tint: 0.3,
            bound: 1.5,
        }
    }

    /// Two overlapping blobs of different colors along the `y` axis, so the
    /// color changes along rays viewed from `-y`.
    pub fn blob_pair() -> Self {
        let blob = |y, color| Blob {
            center: [0.0, y, 0.0],
            radius: 0.3,
            density: 5.0,
            color,
        };
        AnalyticScene {
            blobs: vec![blob(-0.3, [0.9, 0.3, 0.2]), blob(0.3, [0.2, 0.4, 0.9])],
            ambient_density: 0.0,
            ambient_color: [0.0; 3],
            tint: 0.3,
            bound: 1.5,
        }
    }

    /// Small, dense, well-separated blobs: most of each ray is empty.
    pub fn concentrated() -> Self {
        let blob = |center, color| Blob {
            center,
            radius: 0.12,
            density: 40.0,
            color,
        };
        AnalyticScene {
            blobs: vec![
                blob([0.45, 0.0, 0.1], [0.9, 0.2, 0.2]),
                blob([-0.35, 0.35, -0.1], [0.2, 0.8, 0.3]),
                blob([-0.1, -0.45, 0.2], [0.2, 0.3, 0.9]),
            ],
            ambient_density: 0.0,
            ambient_color: [0.0; 3],
            tint: 0.2,
            bound: 1.5,
        }
    }

    /// Constant density and color everywhere.
    pub fn uniform(density: f64, color: [f64; 3]) -> Self {
        AnalyticScene {
            blobs: vec![],
            ambient_density: density,
            ambient_color: color,
            tint: 0.0,
            bound: 1.5,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "single_blob" => Some(Self::single_blob()),
            "blob_pair" => Some(Self::blob_pair()),
            "concentrated" => Some(Self::concentrated()),
            _ => None,
        }
    }

    pub fn sigma(&self, x: [f64; 3]) -> f64 {
        self.ambient_density + self.blobs.iter().map(|b| b.sigma(x)).sum::<f64>()
    }

    pub fn color(&self, x: [f64; 3], d: [f64; 3]) -> [f64; 3] {
        let view = 0.5 + 0.5 * d[2];
        let mut acc = [0.0; 3];
        let mut total = self.ambient_density;
        for c in 0..3 {
            acc[c] = self.ambient_density * self.ambient_color[c];
        }
        for b in &self.blobs {
            let w = b.sigma(x);
            total += w;
            for c in 0..3 {
                acc[c] += w * ((1.0 - self.tint) * b.color[c] + self.tint * view);
            }
        }
        if total <= 0.0 {
            return [0.0; 3];
        }
        acc.map(|v| v / total)
    }
}

/// Panels on which the optical depth is tabulated.
const DEPTH_PANELS: usize = 64;

/// `C = int T(t) sigma(t) c(t) dt` with `T(t) = exp(-int_{t_n}^t sigma)`.
///
/// The optical depth is tabulated at panel boundaries and completed by an
/// inner quadrature from the nearest boundary below; the outer integral is
/// adaptive Simpson on the three color channels.
pub fn reference_render(scene: &AnalyticScene, ray: &Ray, tol: f64) -> Result<[f64; 3], RenderError> {
    let (a, b) = (ray.near, ray.far);
    let h = (b - a) / DEPTH_PANELS as f64;
    let inner = QuadOptions::new(tol * 1e-2 / DEPTH_PANELS as f64);
    let sig = |t: f64| scene.sigma(ray.at(t));
    let mut table = vec![0.0; DEPTH_PANELS + 1];
    for k in 0..DEPTH_PANELS {
        let lo = a + k as f64 * h;
        table[k + 1] = table[k] + integrate_scalar(sig, lo, lo + h, inner)?;
    }
    let mut err = None;
    let f = |ts: &[f64]| {
        let mut out = Vec::with_capacity(3 * ts.len());
        for &t in ts {
            let k = (((t - a) / h).floor() as usize).min(DEPTH_PANELS - 1);
            let lo = a + k as f64 * h;
            let depth = match integrate_scalar(sig, lo, t, inner) {
                Ok(v) => table[k] + v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            };
            let x = ray.at(t);
            let w = (-depth).exp() * scene.sigma(x);
            let c = scene.color(x, ray.d);
            out.extend_from_slice(&[w * c[0], w * c[1], w * c[2]]);
        }
        out
    };
    let c = integrate(f, a, b, 3, QuadOptions::new(tol))?;
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok([c[0], c[1], c[2]])
}

/// Interval averages of density and color along `ray`, by quadrature.
pub fn interval_means(
    scene: &AnalyticScene,
    ray: &Ray,
    delta: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<[f64; 3]>), RenderError> {
    let mut sigma = Vec::with_capacity(delta.len());
    let mut color = Vec::with_capacity(delta.len());
    let mut lo = ray.near;
    for &d in delta {
        let f = |ts: &[f64]| {
            let mut out = Vec::with_capacity(4 * ts.len());
            for &t in ts {
                let x = ray.at(t);
                let c = scene.color(x, ray.d);
                out.extend_from_slice(&[scene.sigma(x), c[0], c[1], c[2]]);
            }
            out
        };
        let v = integrate(f, lo, lo + d, 4, QuadOptions::new(tol * d))?;
        sigma.push(v[0] / d);
        color.push([v[1] / d, v[2] / d, v[3] / d]);
        lo += d;
    }
    Ok((sigma, color))
}

/// Piecewise rendering of the analytic scene with exact interval averages.
pub fn piecewise_render_exact(
    scene: &AnalyticScene,
    ray: &Ray,
    delta: &[f64],
    tol: f64,
) -> Result<[f64; 3], RenderError> {
    let (s, c) = interval_means(scene, ray, delta, tol)?;
    Ok(composite(&s, &c, delta).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ray() -> Ray {
        Ray::new([0.0, 0.0, -3.0], [0.1, 0.05, 1.0], 1.5, 4.5).unwrap()
    }

    #[test]
    fn empty_and_constant_fields() {
        let empty = AnalyticScene::uniform(0.0, [1.0; 3]);
        assert_eq!(reference_render(&empty, &ray(), 1e-8).unwrap(), [0.0; 3]);
        let c0 = [0.3, 0.6, 0.9];
        let s = AnalyticScene::uniform(0.8, c0);
        let got = reference_render(&s, &ray(), 1e-10).unwrap();
        let a = 1.0 - (-0.8f64 * 3.0).exp();
        for k in 0..3 {
            assert!((got[k] - c0[k] * a).abs() < 1e-9, "{got:?}");
        }
        let one = piecewise_render_exact(&s, &ray(), &[3.0], 1e-10).unwrap();
        for k in 0..3 {
            assert!((one[k] - c0[k] * a).abs() < 1e-12);
        }
    }

    #[test]
    fn colors_stay_in_unit_cube() {
        let s = AnalyticScene::concentrated();
        for i in 0..50 {
            let x = [(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.02 * i as f64 - 0.5];
            let c = s.color(x, [0.0, 0.6, -0.8]);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.sigma(x) >= 0.0);
        }
    }

    #[test]
    fn reference_converges_with_tolerance() {
        let s = AnalyticScene::single_blob();
        let r = ray();
        let coarse = reference_render(&s, &r, 1e-5).unwrap();
        let fine = reference_render(&s, &r, 1e-6).unwrap();
        let finest = reference_render(&s, &r, 1e-9).unwrap();
        for k in 0..3 {
            assert!((coarse[k] - fine[k]).abs() < 1e-5);
            assert!((fine[k] - finest[k]).abs() < 1e-6);
        }
        assert!(finest.iter().all(|&v| v > 0.05));
    }
}

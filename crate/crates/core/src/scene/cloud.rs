use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SceneError, UavShape};
use crate::EPS0;

/// Default per-axis standard deviation of the reconstruction region, m.
pub const DEFAULT_REGION_STD: [f64; 3] = [0.85, 0.85, 0.85];

/// One normalized point: region-relative coordinates plus the real and
/// imaginary parts of the contrast function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmPoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub ep_re: f64,
    pub ep_im: f64,
}

impl EmPoint {
    pub fn from_array(a: [f64; 5]) -> Self {
        EmPoint {
            u: a[0],
            v: a[1],
            w: a[2],
            ep_re: a[3],
            ep_im: a[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.u, self.v, self.w, self.ep_re, self.ep_im]
    }

    pub fn position(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmPointCloud {
    pub points: Vec<EmPoint>,
    /// Generation-side rotor labels; `None` for reconstructed clouds.
    pub rotor_mask: Option<Vec<bool>>,
}

impl EmPointCloud {
    pub fn unlabeled(points: Vec<EmPoint>) -> Self {
        EmPointCloud {
            points,
            rotor_mask: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(EmPoint::is_finite)
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(EmPoint::position).collect()
    }

    pub fn arrays(&self) -> Vec<[f64; 5]> {
        self.points.iter().map(|p| p.to_array()).collect()
    }

    /// Mean of the normalized coordinates.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for (ci, x) in c.iter_mut().zip(p.position()) {
                *ci += x;
            }
        }
        Some(c.map(|x| x / n))
    }
}

/// Predicted region center `q_pre` and per-axis scales `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub q_pre: [f64; 3],
    pub s: [f64; 3],
}

impl RegionSpec {
    pub fn new(q_pre: [f64; 3], s: [f64; 3]) -> Result<Self, SceneError> {
        if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(SceneError::InvalidRegion(format!("scales must be > 0, got {s:?}")));
        }
        Ok(RegionSpec { q_pre, s })
    }

    pub fn normalize(&self, p: &Vector3<f64>) -> [f64; 3] {
        std::array::from_fn(|i| (p[i] - self.q_pre[i]) / self.s[i])
    }

    pub fn denormalize(&self, uvw: [f64; 3]) -> Vector3<f64> {
        Vector3::from_fn(|i, _| uvw[i] * self.s[i] + self.q_pre[i])
    }
}

/// Simulates the coarse position estimate: `q_pre = q_true + e`, `e` uniform
/// in the cube `[-err_radius, err_radius]^3`.
pub fn make_region<R: Rng + ?Sized>(
    q_true: [f64; 3],
    err_radius: f64,
    s: [f64; 3],
    rng: &mut R,
) -> Result<RegionSpec, SceneError> {
    if !(err_radius >= 0.0) {
        return Err(SceneError::InvalidRegion(format!(
            "error radius must be >= 0, got {err_radius}"
        )));
    }
    let q_pre = std::array::from_fn(|i| {
        let e = if err_radius > 0.0 {
            rng.random_range(-err_radius..=err_radius)
        } else {
            0.0
        };
        q_true[i] + e
    });
    RegionSpec::new(q_pre, s)
}

/// Contrast `χ = (ε_r − 1) + j σ / (2π f_c ε₀)`.
pub fn contrast(eps_rel: f64, sigma_cond: f64, f_c: f64) -> Complex64 {
    Complex64::new(
        eps_rel - 1.0,
        sigma_cond / (2.0 * std::f64::consts::PI * f_c * EPS0),
    )
}

/// Builds the normalized 5D cloud from world-frame points of `shape`.
pub fn normalize_cloud(
    world_points: &[Vector3<f64>],
    shape: &UavShape,
    region: &RegionSpec,
    f_c: f64,
) -> EmPointCloud {
    let chi = contrast(shape.material.eps_rel, shape.material.sigma_cond, f_c);
    let points = world_points
        .iter()
        .map(|p| {
            let [u, v, w] = region.normalize(p);
            EmPoint {
                u,
                v,
                w,
                ep_re: chi.re,
                ep_im: chi.im,
            }
        })
        .collect();
    EmPointCloud {
        points,
        rotor_mask: Some(shape.rotor_mask.clone()),
    }
}

/// Inverse of the coordinate map of [`normalize_cloud`]; also returns each
/// point's contrast value.
pub fn denormalize_cloud(
    cloud: &EmPointCloud,
    region: &RegionSpec,
) -> (Vec<Vector3<f64>>, Vec<Complex64>) {
    cloud
        .points
        .iter()
        .map(|p| {
            (
                region.denormalize(p.position()),
                Complex64::new(p.ep_re, p.ep_im),
            )
        })
        .unzip()
}

//! Free-space dyadic Green's function.
//!
//! ```text
//! G(p1, p2) = [g(r) r̂ r̂ᵀ − h(r) I] · e^{j k r} / (4π r)
//! g(r) = 3/(k r)² − 3j/(k r) − 1
//! h(r) = 1/(k r)² − j/(k r) − 1
//! ```
//!
//! with `r = ‖p1 − p2‖`, `r̂ = (p1 − p2)/r`. The far field is transverse
//! (`g − h → 0`), the near field reduces to the static dipole kernel
//! `(3 r̂r̂ᵀ − I)/(4π k² r³)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use super::EmError;

/// Separations below this are treated as coincident.
const MIN_SEPARATION: f64 = 1e-12;

pub fn greens_dyadic(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    k: f64,
) -> Result<Matrix3<Complex64>, EmError> {
    let d = p1 - p2;
    let r = d.norm();
    if r < MIN_SEPARATION {
        return Err(EmError::Singular { separation: r });
    }
    let rhat = d / r;
    let kr = k * r;
    let inv = 1.0 / kr;
    let inv2 = inv * inv;
    let g = Complex64::new(3.0 * inv2 - 1.0, -3.0 * inv);
    let h = Complex64::new(inv2 - 1.0, -inv);
    let phase = Complex64::from_polar(1.0 / (4.0 * PI * r), kr);

    let gp = g * phase;
    let hp = h * phase;
    Ok(Matrix3::from_fn(|i, j| {
        let dyad = gp * (rhat[i] * rhat[j]);
        if i == j {
            dyad - hp
        } else {
            dyad
        }
    }))
}

/// `G(p1, p2) · v` without materialising the dyad.
pub(crate) fn greens_apply(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    k: f64,
    v: &Vector3<Complex64>,
) -> Result<Vector3<Complex64>, EmError> {
    let d = p1 - p2;
    let r = d.norm();
    if r < MIN_SEPARATION {
        return Err(EmError::Singular { separation: r });
    }
    let rhat = d / r;
    let kr = k * r;
    let inv = 1.0 / kr;
    let inv2 = inv * inv;
    let phase = Complex64::from_polar(1.0 / (4.0 * PI * r), kr);
    let g = Complex64::new(3.0 * inv2 - 1.0, -3.0 * inv) * phase;
    let h = Complex64::new(inv2 - 1.0, -inv) * phase;
    let proj = rhat[0] * v[0] + rhat[1] * v[1] + rhat[2] * v[2];
    Ok(Vector3::from_fn(|i, _| g * proj * rhat[i] - h * v[i]))
}

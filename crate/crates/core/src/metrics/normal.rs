//! Rotor-plane selection and plane-normal estimation.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::scene::EmPointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacOptions {
    pub hypotheses: usize,
    /// Inlier slab half-width in normalized units.
    pub half_width: f64,
    /// Minimum inlier fraction for an acceptable plane.
    pub min_inlier_frac: f64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            hypotheses: 500,
            half_width: 0.03,
            min_inlier_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotorSelect {
    Labeled,
    Ransac,
    /// Labeled when the cloud carries a rotor mask, RANSAC otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inliers: Vec<usize>,
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Unit normal of the triangle `(a, b, c)`, or `None` for a (near-)collinear
/// triple.
pub fn triple_normal(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> Option<Vector3<f64>> {
    let (e1, e2) = (v3(b) - v3(a), v3(c) - v3(a));
    let n = e1.cross(&e2);
    let norm = n.norm();
    if !(norm > 1e-10 * e1.norm() * e2.norm()) {
        return None;
    }
    Some(n / norm)
}

fn distinct_triple<R: Rng + ?Sized>(n: usize, rng: &mut R) -> [usize; 3] {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut c = rng.random_range(0..n - 2);
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    [a, b, c]
}

/// Dominant plane by randomized three-point hypotheses; ties keep the
/// earliest hypothesis.
pub fn ransac_plane<R: Rng + ?Sized>(
    points: &[[f64; 3]],
    opts: &RansacOptions,
    rng: &mut R,
) -> Result<PlaneFit, MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints { have: points.len(), need: 3 });
    }
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..opts.hypotheses {
        let [i, j, k] = distinct_triple(points.len(), rng);
        let Some(n) = triple_normal(&points[i], &points[j], &points[k]) else {
            continue;
        };
        let d = n.dot(&v3(&points[i]));
        let count = points
            .iter()
            .filter(|p| (n.dot(&v3(p)) - d).abs() <= opts.half_width)
            .count();
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, n, d));
        }
    }
    let need = (opts.min_inlier_frac * points.len() as f64).ceil() as usize;
    match best {
        Some((count, n, d)) if count >= need.max(3) => Ok(PlaneFit {
            normal: [n.x, n.y, n.z],
            offset: d,
            inliers: points
                .iter()
                .enumerate()
                .filter(|(_, p)| (n.dot(&v3(p)) - d).abs() <= opts.half_width)
                .map(|(i, _)| i)
                .collect(),
        }),
        Some((count, ..)) => Err(MetricsError::RansacFailed(format!(
            "best plane has {count} inliers, need {need}"
        ))),
        None => Err(MetricsError::RansacFailed("every hypothesis was degenerate".into())),
    }
}

/// Normalized positions of the rotor-plane points.
pub fn select_rotor_points<R: Rng + ?Sized>(
    cloud: &EmPointCloud,
    mode: RotorSelect,
    opts: &RansacOptions,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>, MetricsError> {
    if cloud.is_empty() {
        return Err(MetricsError::Empty);
    }
    let positions = cloud.positions();
    let labeled = |mask: &Vec<bool>| -> Vec<[f64; 3]> {
        positions
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect()
    };
    match (mode, &cloud.rotor_mask) {
        (RotorSelect::Labeled | RotorSelect::Auto, Some(mask)) => Ok(labeled(mask)),
        (RotorSelect::Labeled, None) => Err(MetricsError::MissingLabels),
        (RotorSelect::Ransac | RotorSelect::Auto, _) => {
            let fit = ransac_plane(&positions, opts, rng)?;
            Ok(fit.inliers.iter().map(|&i| positions[i]).collect())
        }
    }
}

/// Averages `j` random triple normals, each sign-aligned with the running
/// sum, and renormalizes.
pub fn estimate_normal<R: Rng + ?Sized>(
    points: &[[f64; 3]],
    j: usize,
    rng: &mut R,
) -> Result<[f64; 3], MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints { have: points.len(), need: 3 });
    }
    if j == 0 {
        return Err(MetricsError::InvalidInput("need at least one triple".into()));
    }
    let mut sum = Vector3::zeros();
    let mut degenerate = 0;
    for _ in 0..j {
        let [a, b, c] = distinct_triple(points.len(), rng);
        match triple_normal(&points[a], &points[b], &points[c]) {
            Some(n) => sum += if sum.dot(&n) < 0.0 { -n } else { n },
            None => degenerate += 1,
        }
    }
    let norm = sum.norm();
    if 2 * degenerate > j || !(norm > 0.0) {
        return Err(MetricsError::Degenerate { degenerate, total: j });
    }
    let n = sum / norm;
    Ok([n.x, n.y, n.z])
}

/// Flips the normal so its z-component is non-negative.
pub fn canonicalize(n: [f64; 3]) -> [f64; 3] {
    if n[2] < 0.0 {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

/// `1 − ϖᵀϖ_est` after sign canonicalization; in `[0, 2]`.
pub fn mde(truth: [f64; 3], est: [f64; 3]) -> Result<f64, MetricsError> {
    for n in [truth, est] {
        let len = v3(&n).norm();
        if !((len - 1.0).abs() <= 1e-6) {
            return Err(MetricsError::InvalidInput(format!("normal of length {len} is not unit")));
        }
    }
    let (a, b) = (v3(&canonicalize(truth)), v3(&canonicalize(est)));
    Ok((1.0 - a.dot(&b)).clamp(0.0, 2.0))
}

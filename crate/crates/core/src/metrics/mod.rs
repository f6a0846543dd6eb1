//! Reconstruction quality: Chamfer/weighted distance, positioning error and
//! rotor-plane directional error.

mod chamfer;
mod normal;

pub use chamfer::{chamfer_sq, chamfer_sq_brute, KdTree};
pub use normal::{
    canonicalize, estimate_normal, mde, ransac_plane, select_rotor_points, triple_normal,
    PlaneFit, RansacOptions, RotorSelect,
};

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{EmPointCloud, RegionSpec};

/// Reported in place of `−∞` when the averaged WD argument is zero.
pub const WD_FLOOR_DB: f64 = -100.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty point set")]
    Empty,
    #[error("need at least {need} points, have {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("RANSAC found no acceptable plane: {0}")]
    RansacFailed(String),
    #[error("{degenerate} of {total} triples were degenerate")]
    Degenerate { degenerate: usize, total: usize },
    #[error("cloud has no rotor labels")]
    MissingLabels,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn mean3(points: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    c.map(|v| v / points.len() as f64)
}

/// `q_est = q_pre + s ⊙ centroid(u, v, w)`.
pub fn estimate_position(cloud: &EmPointCloud, region: &RegionSpec) -> Result<[f64; 3], MetricsError> {
    let c = cloud.centroid().ok_or(MetricsError::Empty)?;
    Ok(std::array::from_fn(|i| region.q_pre[i] + region.s[i] * c[i]))
}

/// Positions shifted so their centroid is the origin.
pub fn centered(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    if points.is_empty() {
        return Vec::new();
    }
    let c = mean3(points);
    points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect()
}

fn centered5(cloud: &EmPointCloud) -> Vec<[f64; 5]> {
    let pos = centered(&cloud.positions());
    pos.iter()
        .zip(&cloud.points)
        .map(|(p, e)| [p[0], p[1], p[2], e.ep_re, e.ep_im])
        .collect()
}

pub fn mpe(q: [f64; 3], q_est: [f64; 3]) -> f64 {
    sq_dist(q, q_est).sqrt()
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Bracketed WD quantity for one sample: centred Chamfer (normalized units)
/// plus the squared position error (m²). Returns `(chamfer, pos_err_sq)`.
pub fn wd_terms(
    truth: &[[f64; 3]],
    recon: &[[f64; 3]],
    q: [f64; 3],
    q_est: [f64; 3],
) -> Result<(f64, f64), MetricsError> {
    let ch = chamfer_sq(&centered(truth), &centered(recon))?;
    Ok((ch, sq_dist(q, q_est)))
}

/// `10·log10` of the mean bracketed quantity, floored at [`WD_FLOOR_DB`].
pub fn wd_db(terms: &[f64]) -> f64 {
    if terms.is_empty() {
        return f64::NAN;
    }
    let m = terms.iter().sum::<f64>() / terms.len() as f64;
    if m <= 0.0 {
        WD_FLOOR_DB
    } else {
        (10.0 * m.log10()).max(WD_FLOOR_DB)
    }
}

/// Mean squared EP difference between each truth point and its nearest
/// reconstructed point (matched by position).
pub fn ep_nn_mse(truth: &EmPointCloud, recon: &EmPointCloud) -> Result<f64, MetricsError> {
    if truth.is_empty() || recon.is_empty() {
        return Err(MetricsError::Empty);
    }
    let rpos = recon.positions();
    let tree = KdTree::new(&rpos);
    let s: f64 = truth
        .points
        .iter()
        .map(|t| {
            let (j, _) = tree.nearest(&t.position()).expect("non-empty");
            let r = &recon.points[j];
            (t.ep_re - r.ep_re).powi(2) + (t.ep_im - r.ep_im).powi(2)
        })
        .sum();
    Ok(s / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Include the EP channels in the Chamfer distance.
    pub chamfer_5d: bool,
    pub normal_samples: usize,
    pub rotor_select: RotorSelect,
    pub ransac: RansacOptions,
    pub snr_bucket_db: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            chamfer_5d: false,
            normal_samples: 100,
            rotor_select: RotorSelect::Auto,
            ransac: RansacOptions::default(),
            snr_bucket_db: 10.0,
        }
    }
}

/// Ground truth needed to score one reconstruction.
#[derive(Debug, Clone)]
pub struct SampleTruth<'a> {
    pub id: u64,
    /// Normalized ground-truth cloud.
    pub cloud: &'a EmPointCloud,
    pub region: &'a RegionSpec,
    /// True UAV position (m).
    pub q: [f64; 3],
    /// True rotor-plane normal.
    pub normal: [f64; 3],
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: u64,
    pub snr_db: f64,
    pub chamfer: f64,
    pub pos_err_sq: f64,
    pub mpe: f64,
    pub mde: f64,
    pub ep_mse: f64,
    /// The rotor plane could not be isolated; the normal came from the whole
    /// cloud, or MDE was set to 1 if even that failed.
    pub normal_fallback: bool,
}

impl SampleEval {
    pub fn wd_term(&self) -> f64 {
        self.chamfer + self.pos_err_sq
    }
}

/// Estimated rotor-plane normal in the world frame. Returns the normal and
/// whether a fallback was needed.
pub fn estimate_attitude_normal<R: Rng + ?Sized>(
    cloud: &EmPointCloud,
    region: &RegionSpec,
    opts: &EvalOptions,
    rng: &mut R,
) -> (Option<[f64; 3]>, bool) {
    let to_world = |pts: Vec<[f64; 3]>| -> Vec<[f64; 3]> {
        pts.into_iter()
            .map(|p| std::array::from_fn(|i| p[i] * region.s[i]))
            .collect()
    };
    if let Ok(sel) = select_rotor_points(cloud, opts.rotor_select, &opts.ransac, rng) {
        if let Ok(n) = estimate_normal(&to_world(sel), opts.normal_samples, rng) {
            return (Some(n), false);
        }
    }
    let all = to_world(cloud.positions());
    (estimate_normal(&all, opts.normal_samples, rng).ok(), true)
}

pub fn evaluate_sample<R: Rng + ?Sized>(
    truth: &SampleTruth<'_>,
    recon: &EmPointCloud,
    opts: &EvalOptions,
    rng: &mut R,
) -> Result<SampleEval, MetricsError> {
    if recon.is_empty() || truth.cloud.is_empty() {
        return Err(MetricsError::Empty);
    }
    let q_est = estimate_position(recon, truth.region)?;
    let chamfer = if opts.chamfer_5d {
        chamfer_sq(&centered5(truth.cloud), &centered5(recon))?
    } else {
        chamfer_sq(&centered(&truth.cloud.positions()), &centered(&recon.positions()))?
    };
    let (normal, fallback) = estimate_attitude_normal(recon, truth.region, opts, rng);
    let mde_v = match normal {
        Some(n) => mde(truth.normal, n)?,
        None => 1.0,
    };
    Ok(SampleEval {
        id: truth.id,
        snr_db: truth.snr_db,
        chamfer,
        pos_err_sq: sq_dist(truth.q, q_est),
        mpe: mpe(truth.q, q_est),
        mde: mde_v,
        ep_mse: ep_nn_mse(truth.cloud, recon)?,
        normal_fallback: fallback || normal.is_none(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrBucket {
    /// Bucket centre in dB; `None` collects noiseless samples.
    pub center_db: Option<f64>,
    pub count: usize,
    pub wd_db: f64,
    pub mcd: f64,
    pub mpe: f64,
    pub mde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wd_db: f64,
    pub mcd: f64,
    pub mpe: f64,
    pub mde: f64,
    pub ep_mse: f64,
    pub buckets: Vec<SnrBucket>,
    pub samples: Vec<SampleEval>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Centre of the `width`-dB bucket containing `snr_db` (buckets are centred
/// on multiples of `width`).
pub fn snr_bucket(snr_db: f64, width: f64) -> Option<f64> {
    // `+ 0.0` folds −0 into 0 so both sides of zero share one bucket
    snr_db.is_finite().then(|| (snr_db / width).round() * width + 0.0)
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleEval>, bucket_width_db: f64) -> Self {
        let summary = |set: &[&SampleEval]| {
            let terms: Vec<f64> = set.iter().map(|s| s.wd_term()).collect();
            (
                wd_db(&terms),
                mean(set.iter().map(|s| s.chamfer)),
                mean(set.iter().map(|s| s.mpe)),
                mean(set.iter().map(|s| s.mde)),
            )
        };
        let mut keys: Vec<Option<f64>> = samples
            .iter()
            .map(|s| snr_bucket(s.snr_db, bucket_width_db))
            .collect();
        keys.sort_by(|a, b| match (a, b) {
            (Some(x), Some(y)) => x.total_cmp(y),
            (None, None) => std::cmp::Ordering::Equal,
            (None, _) => std::cmp::Ordering::Greater,
            (_, None) => std::cmp::Ordering::Less,
        });
        keys.dedup();
        let buckets = keys
            .into_iter()
            .map(|k| {
                let set: Vec<&SampleEval> = samples
                    .iter()
                    .filter(|s| snr_bucket(s.snr_db, bucket_width_db) == k)
                    .collect();
                let (wd, mcd, mpe_v, mde_v) = summary(&set);
                SnrBucket {
                    center_db: k,
                    count: set.len(),
                    wd_db: wd,
                    mcd,
                    mpe: mpe_v,
                    mde: mde_v,
                }
            })
            .collect();
        let all: Vec<&SampleEval> = samples.iter().collect();
        let (wd, mcd, mpe_v, mde_v) = summary(&all);
        EvalReport {
            wd_db: wd,
            mcd,
            mpe: mpe_v,
            mde: mde_v,
            ep_mse: mean(samples.iter().map(|s| s.ep_mse)),
            buckets,
            samples,
        }
    }

    pub fn bucket(&self, center_db: f64) -> Option<&SnrBucket> {
        self.buckets.iter().find(|b| b.center_db == Some(center_db))
    }

    /// One row per sample.
    pub fn to_csv(&self, bucket_width_db: f64) -> String {
        let mut out = String::from(
            "id,snr_db,snr_bucket_db,chamfer,pos_err_sq,wd_term,mpe,mde,ep_mse,normal_fallback\n",
        );
        for s in &self.samples {
            let bucket = snr_bucket(s.snr_db, bucket_width_db)
                .map(|b| b.to_string())
                .unwrap_or_else(|| "inf".into());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.id,
                s.snr_db,
                bucket,
                s.chamfer,
                s.pos_err_sq,
                s.wd_term(),
                s.mpe,
                s.mde,
                s.ep_mse,
                u8::from(s.normal_fallback)
            );
        }
        out
    }
}

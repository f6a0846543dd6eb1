//! Scoring reconstructions against ground truth, and PLY export.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use super::dataset::{read_split, DatasetRecord, Split};
use super::infer::{read_recon, Recon, RECON_SHARD};
use super::{rng_for, Domain, PipelineError};
use crate::encoder::snr_db;
use crate::metrics::{evaluate_sample, EvalOptions, EvalReport, SampleTruth};
use crate::scene::{denormalize_cloud, write_ply, EmPointCloud, RegionSpec};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Scores `recon[i]` against `truth[i]`; ids must agree position by position.
/// Buckets use the realized SNR. RANSAC randomness is drawn per sample id.
pub fn evaluate(
    truth: &[DatasetRecord],
    recon: &[Recon],
    opts: &EvalOptions,
    seed: u64,
) -> Result<EvalReport, PipelineError> {
    if truth.len() != recon.len() {
        return Err(PipelineError::Mismatch(format!(
            "{} truth samples but {} reconstructions",
            truth.len(),
            recon.len()
        )));
    }
    if let Some((i, (t, r))) = truth.iter().zip(recon).enumerate().find(|(_, (t, r))| t.id != r.id) {
        return Err(PipelineError::Mismatch(format!(
            "sample id mismatch at position {i}: truth {} vs reconstruction {}",
            t.id, r.id
        )));
    }
    let samples = truth
        .par_iter()
        .zip(recon)
        .map(|(t, r)| {
            let n = t.pose.normal();
            let st = SampleTruth {
                id: t.id,
                cloud: &t.cloud,
                region: &t.region,
                q: t.q_true(),
                normal: [n.x, n.y, n.z],
                snr_db: snr_db(t.p_snr),
            };
            Ok(evaluate_sample(&st, &r.cloud, opts, &mut rng_for(seed, Domain::Eval, t.id))?)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(EvalReport::from_samples(samples, opts.snr_bucket_db))
}

/// Scores `infer_dir/recon.shard` against `split` of the dataset and writes
/// `report.json` and `report.csv` into `out`.
pub fn cmd_eval(
    config: &RunConfig,
    data_dir: &Path,
    split: Split,
    infer_dir: &Path,
    out: &Path,
) -> Result<EvalReport, PipelineError> {
    let truth = read_split(data_dir, split)?;
    let recon = read_recon(&infer_dir.join(RECON_SHARD))?;
    let report = evaluate(&truth, &recon, &config.eval, config.seed)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(REPORT_JSON), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out.join(REPORT_CSV), report.to_csv(config.eval.snr_bucket_db))?;
    Ok(report)
}

/// Writes a normalized cloud as world-frame PLY.
pub fn write_cloud_ply(path: &Path, cloud: &EmPointCloud, region: &RegionSpec) -> Result<(), PipelineError> {
    let (world, ep) = denormalize_cloud(cloud, region);
    let mask = cloud.rotor_mask.clone().unwrap_or_else(|| vec![false; cloud.len()]);
    let rows: Vec<_> = world
        .iter()
        .zip(&ep)
        .zip(mask)
        .map(|((p, e), m)| ([p.x, p.y, p.z], [e.re, e.im], m))
        .collect();
    write_ply(BufWriter::new(File::create(path)?), rows)?;
    Ok(())
}

/// Exports the ground-truth clouds of `split` as `<id>.ply` files in `out`.
pub fn export_ply(data_dir: &Path, split: Split, out: &Path) -> Result<usize, PipelineError> {
    let records = read_split(data_dir, split)?;
    std::fs::create_dir_all(out)?;
    for r in &records {
        write_cloud_ply(&out.join(format!("{:06}.ply", r.id)), &r.cloud, &r.region)?;
    }
    Ok(records.len())
}

//! Batched, parallel reconstruction of point clouds from channel estimates.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{read_split, DatasetRecord, Manifest, Split};
use super::eval::write_cloud_ply;
use super::model::Model;
use super::shard::{Shard, ShardWriter};
use super::train::load_model;
use super::{rng_for, Domain, PipelineError};
use crate::nn::ParamStore;
use crate::scene::{EmPoint, EmPointCloud};

pub const RECON_SHARD: &str = "recon.shard";
pub const TIMING_JSON: &str = "timing.json";
/// Clouds generated together in one reverse pass.
const INFER_BATCH: usize = 16;

/// One reconstructed cloud (normalized coordinates, physical contrast).
#[derive(Debug, Clone, PartialEq)]
pub struct Recon {
    pub id: u64,
    pub cloud: EmPointCloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferTiming {
    pub clouds: usize,
    pub points_per_cloud: usize,
    pub steps: usize,
    pub threads: usize,
    pub total_seconds: f64,
    /// Wall time divided by the number of clouds.
    pub per_cloud_seconds: f64,
}

/// Reconstructs every record. Cloud `id` draws its randomness from its own
/// `(seed, id)` stream, so the output does not depend on batching or
/// thread count.
pub fn infer_records(
    model: &Model,
    store: &ParamStore,
    records: &[DatasetRecord],
    seed: u64,
) -> Result<Vec<Recon>, PipelineError> {
    let chunks: Vec<Vec<Recon>> = records
        .par_chunks(INFER_BATCH)
        .map(|chunk| {
            let refs: Vec<&DatasetRecord> = chunk.iter().collect();
            let mut rngs: Vec<_> = chunk.iter().map(|r| rng_for(seed, Domain::Infer, r.id)).collect();
            let clouds = model.reconstruct(store, &refs, &mut rngs)?;
            Ok(chunk
                .iter()
                .zip(clouds)
                .map(|(r, cloud)| Recon { id: r.id, cloud })
                .collect())
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn write_recon(path: &Path, recon: &[Recon], meta: serde_json::Value) -> Result<(), PipelineError> {
    let n = recon.len();
    let m = recon.first().map_or(0, |r| r.cloud.len());
    if recon.iter().any(|r| r.cloud.len() != m) {
        return Err(PipelineError::Format("reconstructions differ in size".into()));
    }
    let mut w = ShardWriter::new();
    w.u64("id", &[n], recon.iter().map(|r| r.id).collect())?;
    w.f64(
        "cloud",
        &[n, m, 5],
        recon.iter().flat_map(|r| r.cloud.arrays().into_iter().flatten()).collect(),
    )?;
    w.write(path, meta)
}

pub fn read_recon(path: &Path) -> Result<Vec<Recon>, PipelineError> {
    let s = Shard::read(path)?;
    let (_, ids) = s.u64("id")?;
    let (shape, cloud) = s.f64("cloud")?;
    let m = shape.get(1).copied().unwrap_or(0);
    if shape.len() != 3 || shape[0] != ids.len() || shape[2] != 5 {
        return Err(PipelineError::Format(format!(
            "{}: cloud shape {shape:?} for {} ids",
            path.display(),
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &id)| Recon {
            id,
            cloud: EmPointCloud::unlabeled(
                cloud[i * m * 5..(i + 1) * m * 5]
                    .chunks_exact(5)
                    .map(|c| EmPoint::from_array([c[0], c[1], c[2], c[3], c[4]]))
                    .collect(),
            ),
        })
        .collect())
}

/// Reconstructs `split` of the dataset with the model in `checkpoint`;
/// writes `recon.shard`, `clouds/<id>.ply` (world frame) and `timing.json`
/// into `out`.
pub fn cmd_infer(
    config: &RunConfig,
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    out: &Path,
    allow_config_drift: bool,
) -> Result<(Vec<Recon>, InferTiming), PipelineError> {
    let (model, store, outcome, _) = load_model(checkpoint)?;
    let manifest = Manifest::load(data_dir)?;
    if !allow_config_drift && outcome.physics_hash != manifest.physics_hash {
        return Err(PipelineError::Mismatch(format!(
            "checkpoint was trained on physics hash {} but the dataset has {}",
            outcome.physics_hash, manifest.physics_hash
        )));
    }
    if model.points != config.dataset.points {
        return Err(PipelineError::Mismatch(format!(
            "checkpoint generates {} points per cloud, config asks for {}",
            model.points, config.dataset.points
        )));
    }
    let records = read_split(data_dir, split)?;
    let start = Instant::now();
    let recon = infer_records(&model, &store, &records, config.seed)?;
    let total = start.elapsed().as_secs_f64();
    let timing = InferTiming {
        clouds: recon.len(),
        points_per_cloud: model.points,
        steps: model.schedule.steps,
        threads: rayon::current_num_threads(),
        total_seconds: total,
        per_cloud_seconds: total / recon.len().max(1) as f64,
    };

    std::fs::create_dir_all(out.join("clouds"))?;
    let meta = serde_json::json!({
        "split": split.name(),
        "physics_hash": manifest.physics_hash,
        "seed": config.seed,
        "checkpoint": checkpoint.file_name().map(|f| f.to_string_lossy().into_owned()),
    });
    write_recon(&out.join(RECON_SHARD), &recon, meta)?;
    for (rec, r) in records.iter().zip(&recon) {
        write_cloud_ply(&out.join("clouds").join(format!("{:06}.ply", r.id)), &r.cloud, &rec.region)?;
    }
    std::fs::write(out.join(TIMING_JSON), serde_json::to_string_pretty(&timing)?)?;
    Ok((recon, timing))
}

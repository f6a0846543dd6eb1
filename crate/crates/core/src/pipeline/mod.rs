//! Dataset generation, training, inference, evaluation and the on-disk
//! formats behind the `emcloud` command-line tool.
//!
//! Every random draw comes from a ChaCha8 stream derived from
//! `(seed, domain, index)`, where the index is a sample id, trajectory id or
//! epoch. Parallel stages therefore produce the same bytes as sequential ones.

mod config;
mod dataset;
mod eval;
mod infer;
mod model;
mod shard;
mod train;

pub use config::{
    DatasetConfig, ModelConfig, PhysicsConfig, Profile, RunConfig, ScheduleConfig, SnrSource,
    TrainConfig,
};
pub use dataset::{
    cmd_dataset, generate_record, read_records, read_split, split_ids, write_records,
    DatasetRecord, Manifest, Split,
};
pub use eval::{cmd_eval, evaluate, export_ply, write_cloud_ply, REPORT_CSV, REPORT_JSON};
pub use infer::{
    cmd_infer, infer_records, read_recon, write_recon, InferTiming, Recon, RECON_SHARD,
    TIMING_JSON,
};
pub use model::{channel_rms, EpScaling, Model};
pub use shard::{Dtype, Field, Shard, ShardWriter, SHARD_MAGIC};
pub use train::{
    cmd_train, evaluate_loss, load_model, losses_csv, EpochLog, TrainOptions, TrainOutcome,
    CHECKPOINT_BEST, CHECKPOINT_INIT, CHECKPOINT_LAST, LOSSES_CSV,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chanest::ChanEstError;
use crate::diffusion::DiffusionError;
use crate::em::EmError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::scene::SceneError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("shard format: {0}")]
    Format(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    ChanEst(#[from] ChanEstError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Independent random-stream domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Trajectory = 1,
    Sample = 2,
    Split = 3,
    Init = 4,
    Shuffle = 5,
    TrainNoise = 6,
    ValNoise = 7,
    Infer = 8,
    Eval = 9,
}

/// Deterministic generator for `(seed, domain, index)`.
pub fn rng_for(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

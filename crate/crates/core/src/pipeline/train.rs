//! Joint training of the encoder and noise estimator.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{read_split, DatasetRecord, Manifest, Split};
use super::model::Model;
use super::{rng_for, Domain, PipelineError};
use crate::diffusion::{draw_noise, NoiseDraw, NoiseSchedule};
use crate::nn::{Adam, Checkpoint, ParamStore, Tape};

pub const CHECKPOINT_INIT: &str = "checkpoint_init.json";
pub const CHECKPOINT_BEST: &str = "checkpoint.json";
pub const CHECKPOINT_LAST: &str = "checkpoint_last.json";
pub const LOSSES_CSV: &str = "losses.csv";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Train even if the dataset was built under a different physics config.
    pub allow_config_drift: bool,
    /// Continue from `checkpoint_last.json` in the output directory.
    pub resume: bool,
    /// Stop once this many epochs in total have completed.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Training state carried in checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: Model,
    pub physics_hash: String,
    /// Validation loss of the untrained model.
    pub initial_val: f64,
    pub history: Vec<EpochLog>,
    pub best_val: f64,
    /// 0 when no epoch improved on the untrained model.
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn final_val(&self) -> f64 {
        self.history.last().map_or(self.initial_val, |h| h.val_loss)
    }
}

/// `epoch,train_loss,val_loss,lr`; row 0 holds the untrained validation
/// loss with the other columns empty.
pub fn losses_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    let _ = writeln!(s, "0,,{},", outcome.initial_val);
    for h in &outcome.history {
        let _ = writeln!(s, "{},{},{},{}", h.epoch, h.train_loss, h.val_loss, h.lr);
    }
    s
}

/// Loads a model checkpoint written by [`cmd_train`].
pub fn load_model(path: &Path) -> Result<(Model, ParamStore, TrainOutcome, Option<Adam>), PipelineError> {
    let ck = Checkpoint::load(path)?;
    let outcome: TrainOutcome = serde_json::from_value(ck.metadata)
        .map_err(|e| PipelineError::Format(format!("{}: bad model metadata: {e}", path.display())))?;
    // the parameter store must match the architecture it claims to be
    let mut rng = rng_for(0, Domain::Init, 0);
    let cfg = outcome.model.encoder.config.clone();
    let mut fresh = ParamStore::new();
    crate::encoder::Encoder::new(cfg, outcome.model.encoder.channel_scale, &mut fresh, &mut rng)?;
    crate::diffusion::NoiseNet::new(outcome.model.net.config.clone(), &mut fresh, &mut rng)?;
    fresh.load_from(&ck.params).map_err(|e| {
        PipelineError::Mismatch(format!("{}: parameters do not match the model: {e}", path.display()))
    })?;
    Ok((outcome.model.clone(), ck.params, outcome, ck.optimizer))
}

fn save(
    path: &Path,
    store: &ParamStore,
    opt: Option<&Adam>,
    outcome: &TrainOutcome,
) -> Result<(), PipelineError> {
    let meta = serde_json::to_value(outcome)?;
    Checkpoint::new(store.clone(), opt.cloned(), meta).save(path)?;
    Ok(())
}

/// Fixed per-sample draws for the validation loss.
fn val_draws(config: &RunConfig, schedule: &NoiseSchedule, records: &[DatasetRecord]) -> Vec<NoiseDraw> {
    records
        .iter()
        .map(|r| draw_noise(r.cloud.len(), schedule, &mut rng_for(config.seed, Domain::ValNoise, r.id)))
        .collect()
}

fn concat(draws: &[&NoiseDraw]) -> NoiseDraw {
    NoiseDraw {
        steps: draws.iter().flat_map(|d| d.steps.iter().copied()).collect(),
        eps: draws.iter().flat_map(|d| d.eps.iter().copied()).collect(),
    }
}

/// Point-weighted mean loss over `records` under fixed draws.
pub fn evaluate_loss(
    config: &RunConfig,
    model: &Model,
    store: &ParamStore,
    schedule: &NoiseSchedule,
    records: &[DatasetRecord],
    draws: &[NoiseDraw],
) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    let mut points = 0usize;
    for (recs, ds) in records
        .chunks(config.train.batch_size)
        .zip(draws.chunks(config.train.batch_size))
    {
        let refs: Vec<&DatasetRecord> = recs.iter().collect();
        let draw = concat(&ds.iter().collect::<Vec<_>>());
        let mut tape = Tape::new();
        let p = store.bind(&mut tape)?;
        let loss = model.loss(&mut tape, &p, schedule, &refs, &draw, config.train.loss)?;
        let n = draw.steps.len();
        total += tape.value(loss).item() * n as f64;
        points += n;
    }
    Ok(total / points.max(1) as f64)
}

/// Trains on `data_dir` and writes checkpoints plus `losses.csv` into `out`:
/// `checkpoint_init.json` (untrained), `checkpoint.json` (best validation
/// loss) and `checkpoint_last.json` (latest, with optimizer state). Training
/// is sequential; the whole trajectory is a function of `(config, seed)`.
pub fn cmd_train(
    config: &RunConfig,
    data_dir: &Path,
    out: &Path,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let manifest = Manifest::load(data_dir)?;
    if !opts.allow_config_drift {
        manifest.check(config)?;
    }
    let train = read_split(data_dir, Split::Train)?;
    let val = read_split(data_dir, Split::Val)?;
    if train.is_empty() {
        return Err(PipelineError::Config("training split is empty".into()));
    }
    std::fs::create_dir_all(out)?;

    let last_path = out.join(CHECKPOINT_LAST);
    let (model, mut store, mut adam, mut outcome) = if opts.resume && last_path.exists() {
        let (model, store, outcome, adam) = load_model(&last_path)?;
        let adam = adam.ok_or_else(|| {
            PipelineError::Format(format!("{} has no optimizer state", last_path.display()))
        })?;
        (model, store, adam, outcome)
    } else {
        let (model, store) = Model::new(config, &train, &mut rng_for(config.seed, Domain::Init, 0))?;
        let schedule = model.noise_schedule()?;
        let initial_val = evaluate_loss(config, &model, &store, &schedule, &val, &val_draws(config, &schedule, &val))?;
        let outcome = TrainOutcome {
            model: model.clone(),
            physics_hash: manifest.physics_hash.clone(),
            initial_val,
            history: Vec::new(),
            best_val: initial_val,
            best_epoch: 0,
        };
        save(&out.join(CHECKPOINT_INIT), &store, None, &outcome)?;
        save(&out.join(CHECKPOINT_BEST), &store, None, &outcome)?;
        let adam = Adam::new(config.train.adam, &store);
        (model, store, adam, outcome)
    };
    let schedule = model.noise_schedule()?;
    let vdraws = val_draws(config, &schedule, &val);

    let end = opts.stop_after.map_or(config.train.epochs, |s| s.min(config.train.epochs));
    for epoch in outcome.epochs_done()..end {
        let lr = config.learning_rate(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(config.seed, Domain::Shuffle, epoch as u64));
        let mut noise = rng_for(config.seed, Domain::TrainNoise, epoch as u64);
        let mut total = 0.0;
        let mut points = 0usize;
        for (b, idx) in order.chunks(config.train.batch_size).enumerate() {
            let refs: Vec<&DatasetRecord> = idx.iter().map(|&i| &train[i]).collect();
            let n: usize = refs.iter().map(|r| r.cloud.len()).sum();
            let draw = draw_noise(n, &schedule, &mut noise);
            let mut tape = Tape::new();
            let p = store.bind(&mut tape)?;
            let loss = model
                .loss(&mut tape, &p, &schedule, &refs, &draw, config.train.loss)
                .map_err(|e| diverged(epoch, b, &refs, e))?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss).map_err(|e| diverged(epoch, b, &refs, e.into()))?;
            let grads: Vec<_> = p.0.iter().map(|&v| grads.wrt(v, &tape)).collect();
            adam.update(&mut store, &grads, lr)
                .map_err(|e| diverged(epoch, b, &refs, e.into()))?;
            total += value * n as f64;
            points += n;
        }
        let val_loss = evaluate_loss(config, &model, &store, &schedule, &val, &vdraws)?;
        if !val_loss.is_finite() {
            return Err(PipelineError::NonFinite(format!("validation loss {val_loss} after epoch {}", epoch + 1)));
        }
        let log = EpochLog {
            epoch: epoch + 1,
            train_loss: total / points.max(1) as f64,
            val_loss,
            lr,
        };
        outcome.history.push(log);
        if val_loss < outcome.best_val {
            outcome.best_val = val_loss;
            outcome.best_epoch = epoch + 1;
            save(&out.join(CHECKPOINT_BEST), &store, None, &outcome)?;
        }
        save(&last_path, &store, Some(&adam), &outcome)?;
        std::fs::write(out.join(LOSSES_CSV), losses_csv(&outcome))?;
        on_epoch(&log);
    }
    std::fs::write(out.join(LOSSES_CSV), losses_csv(&outcome))?;
    Ok(outcome)
}

fn diverged(epoch: usize, batch: usize, refs: &[&DatasetRecord], e: PipelineError) -> PipelineError {
    let ids: Vec<u64> = refs.iter().map(|r| r.id).collect();
    PipelineError::NonFinite(format!("epoch {}, batch {batch} (sample ids {ids:?}): {e}", epoch + 1))
}

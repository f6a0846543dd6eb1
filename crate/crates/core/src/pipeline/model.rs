//! The trainable reconstruction model: channel encoder plus conditional
//! noise estimator, with the data scalings fitted on the training split.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, ScheduleConfig, SnrSource};
use super::dataset::DatasetRecord;
use super::PipelineError;
use crate::diffusion::{
    generate_batch, training_loss_with, LossWeights, NetConfig, NoiseDraw, NoiseNet, NoiseSchedule,
    Point5, SamplerOptions,
};
use crate::encoder::{vectorize_channel, Encoder, EncoderInput};
use crate::nn::{Bound, ParamStore, Tape, Tensor, Var};
use crate::scene::{EmPoint, EmPointCloud};

/// Affine standardization of the two contrast channels; positions are
/// already normalized by the region map and pass through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpScaling {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for EpScaling {
    fn default() -> Self {
        EpScaling {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }
}

impl EpScaling {
    /// Per-channel mean and standard deviation over every training point
    /// (a zero spread falls back to 1).
    pub fn fit(records: &[DatasetRecord]) -> Self {
        let mut n = 0.0;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for p in records.iter().flat_map(|r| &r.cloud.points) {
            n += 1.0;
            for (c, v) in [p.ep_re, p.ep_im].into_iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        if n == 0.0 {
            return Self::default();
        }
        let mean = sum.map(|s| s / n);
        let std = std::array::from_fn(|c| {
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean[c].abs()) {
                sd
            } else {
                1.0
            }
        });
        EpScaling { mean, std }
    }

    pub fn forward(&self, p: &EmPoint) -> Point5 {
        [
            p.u,
            p.v,
            p.w,
            (p.ep_re - self.mean[0]) / self.std[0],
            (p.ep_im - self.mean[1]) / self.std[1],
        ]
    }

    pub fn inverse(&self, p: &Point5) -> EmPoint {
        EmPoint {
            u: p[0],
            v: p[1],
            w: p[2],
            ep_re: p[3] * self.std[0] + self.mean[0],
            ep_im: p[4] * self.std[1] + self.mean[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: Encoder,
    pub net: NoiseNet,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerOptions,
    pub ep: EpScaling,
    pub snr_source: SnrSource,
    /// Points generated per cloud.
    pub points: usize,
}

/// Root-mean-square entry of the vectorized channel estimates.
pub fn channel_rms(records: &[DatasetRecord]) -> f64 {
    let mut n = 0usize;
    let mut sq = 0.0;
    for r in records {
        for v in vectorize_channel(&r.h_est) {
            sq += v * v;
            n += 1;
        }
    }
    let rms = (sq / n.max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

impl Model {
    /// Fresh model whose input scalings are fitted on `train`.
    pub fn new<R: Rng + ?Sized>(
        config: &RunConfig,
        train: &[DatasetRecord],
        rng: &mut R,
    ) -> Result<(Self, ParamStore), PipelineError> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder_config(), channel_rms(train), &mut store, rng)?;
        let net_cfg = NetConfig {
            widths: config.model.net_widths.clone(),
            d_z: encoder.out_dim(),
        };
        let net = NoiseNet::new(net_cfg, &mut store, rng)?;
        config.model.schedule.build()?;
        let model = Model {
            encoder,
            net,
            schedule: config.model.schedule.clone(),
            sampler: config.model.sampler,
            ep: EpScaling::fit(train),
            snr_source: config.infer_snr,
            points: config.dataset.points,
        };
        Ok((model, store))
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, PipelineError> {
        self.schedule.build()
    }

    pub fn inputs(&self, records: &[&DatasetRecord]) -> Vec<EncoderInput> {
        records.iter().map(|r| r.encoder_input(self.snr_source)).collect()
    }

    /// Clean diffusion-space points of the clouds and the cloud index of
    /// every point.
    pub fn targets(&self, records: &[&DatasetRecord]) -> (Vec<Point5>, Vec<usize>) {
        let mut p0 = Vec::new();
        let mut cloud_of = Vec::new();
        for (b, r) in records.iter().enumerate() {
            for p in &r.cloud.points {
                p0.push(self.ep.forward(p));
                cloud_of.push(b);
            }
        }
        (p0, cloud_of)
    }

    /// Mean weighted noise-regression loss of a batch under a fixed draw.
    pub fn loss(
        &self,
        tape: &mut Tape,
        params: &Bound,
        schedule: &NoiseSchedule,
        records: &[&DatasetRecord],
        draw: &NoiseDraw,
        weights: LossWeights,
    ) -> Result<Var, PipelineError> {
        let batch = self.encoder.prepare(&self.inputs(records))?;
        let z = self.encoder.forward(tape, params, &batch)?;
        let (p0, cloud_of) = self.targets(records);
        Ok(training_loss_with(
            tape,
            params,
            &self.net,
            schedule,
            &p0,
            Some(z),
            &cloud_of,
            draw,
            weights,
        )?)
    }

    /// Latent conditions for the records, `[B, d_z]`.
    pub fn encode(&self, store: &ParamStore, records: &[&DatasetRecord]) -> Result<Tensor, PipelineError> {
        Ok(self.encoder.encode(store, &self.inputs(records))?)
    }

    /// Reconstructs one cloud per record; cloud `b` draws all its randomness
    /// from `rngs[b]`.
    pub fn reconstruct<R: Rng>(
        &self,
        store: &ParamStore,
        records: &[&DatasetRecord],
        rngs: &mut [R],
    ) -> Result<Vec<EmPointCloud>, PipelineError> {
        let schedule = self.noise_schedule()?;
        let z = self.encode(store, records)?;
        let clouds = generate_batch(&self.net, store, &schedule, &z, self.points, rngs, self.sampler, None)?;
        Ok(clouds
            .iter()
            .map(|pts| EmPointCloud::unlabeled(pts.iter().map(|p| self.ep.inverse(p)).collect()))
            .collect())
    }
}

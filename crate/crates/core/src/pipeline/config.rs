use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::diffusion::{LossWeights, NetConfig, NoiseSchedule, SamplerOptions};
use crate::em::ForwardMode;
use crate::encoder::{EmbedMode, EncoderConfig};
use crate::metrics::EvalOptions;
use crate::nn::AdamConfig;
use crate::scene::{FlightRange, MotionBounds, DEFAULT_REGION_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(PipelineError::Config(format!("unknown profile {other:?} (desk|full)"))),
        }
    }
}

/// Everything that shapes the simulated measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub n_x: usize,
    pub n_z: usize,
    pub f_c: f64,
    /// Transmit power drawn uniformly per sample from this range (dBm).
    pub tx_power_dbm: [f64; 2],
    pub noise_dbm: f64,
    pub symbols: usize,
    pub forward_mode: ForwardMode,
    pub mom_max_points: usize,
}

/// Scene sampling and dataset layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub samples: usize,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    pub points: usize,
    pub trajectory_steps: usize,
    pub dt: f64,
    pub flight: FlightRange,
    pub motion: MotionBounds,
    pub region_err_radius: f64,
    pub region_s: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, PipelineError> {
        Ok(NoiseSchedule::new(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_p: usize,
    pub d_xi: usize,
    pub head_hidden: usize,
    pub snr_out: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub d_z: usize,
    pub snr_range_db: [f64; 2],
    pub embed: EmbedMode,
    pub net_widths: Vec<usize>,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrSource {
    /// The simulator's realized SNR.
    #[default]
    Realized,
    /// Estimated from the echo energy and the known noise variance.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam: AdamConfig,
    pub loss: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub physics: PhysicsConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer_snr: SnrSource,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn desk() -> Self {
        let sched = NoiseSchedule::desk();
        RunConfig {
            profile: Profile::Desk,
            seed: 0,
            physics: PhysicsConfig {
                n_x: 4,
                n_z: 2,
                f_c: 3e9,
                tx_power_dbm: [10.0, 40.0],
                noise_dbm: -70.0,
                symbols: 8,
                forward_mode: ForwardMode::Born,
                mom_max_points: crate::em::DEFAULT_MOM_CAP,
            },
            dataset: DatasetConfig {
                samples: 600,
                split: [0.8, 0.1, 0.1],
                points: 64,
                trajectory_steps: 50,
                dt: 0.2,
                flight: FlightRange::default(),
                motion: MotionBounds::default(),
                region_err_radius: 0.5,
                region_s: DEFAULT_REGION_STD,
            },
            model: ModelConfig {
                d_p: 64,
                d_xi: 6,
                head_hidden: 64,
                snr_out: 16,
                mlp_hidden: 128,
                mlp_layers: 6,
                d_z: 64,
                snr_range_db: [0.0, 40.0],
                embed: EmbedMode::Embedded,
                net_widths: NetConfig::desk(64).widths,
                schedule: ScheduleConfig {
                    steps: sched.steps,
                    beta_start: sched.beta_start,
                    beta_end: sched.beta_end,
                },
                sampler: SamplerOptions { clip_x0: Some(4.0) },
            },
            train: TrainConfig {
                epochs: 30,
                batch_size: 16,
                lr_start: 1e-3,
                lr_end: 1e-4,
                adam: AdamConfig::default(),
                loss: LossWeights::default(),
            },
            infer_snr: SnrSource::Realized,
            eval: EvalOptions::default(),
        }
    }

    pub fn full() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Full;
        c.physics = PhysicsConfig {
            n_x: 16,
            n_z: 2,
            f_c: 3e9,
            tx_power_dbm: [10.0, 40.0],
            noise_dbm: -120.0,
            symbols: 32,
            forward_mode: ForwardMode::Mom,
            mom_max_points: 1000,
        };
        c.dataset.samples = 50_000;
        c.dataset.points = 1000;
        c.model = ModelConfig {
            d_p: 256,
            d_xi: 10,
            head_hidden: 256,
            snr_out: 64,
            mlp_hidden: 512,
            mlp_layers: 6,
            d_z: 512,
            snr_range_db: [0.0, 40.0],
            embed: EmbedMode::Embedded,
            net_widths: NetConfig::full(512).widths,
            schedule: ScheduleConfig {
                steps: 200,
                beta_start: 1e-4,
                beta_end: 0.05,
            },
            sampler: SamplerOptions::default(),
        };
        c.train = TrainConfig {
            epochs: 200,
            batch_size: 256,
            lr_start: 1e-4,
            lr_end: 1e-5,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
        };
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Full => Self::full(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let c: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn n_b(&self) -> usize {
        self.physics.n_x * self.physics.n_z
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let m = &self.model;
        EncoderConfig {
            n_b: self.n_b(),
            d_p: m.d_p,
            d_xi: m.d_xi,
            head_hidden: m.head_hidden,
            snr_out: m.snr_out,
            mlp_hidden: m.mlp_hidden,
            mlp_layers: m.mlp_layers,
            d_z: m.d_z,
            flight: self.dataset.flight,
            snr_range_db: m.snr_range_db,
            mode: m.embed,
        }
    }

    /// Per-split sample counts: floor of each fraction, remainder to train.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.dataset.samples;
        let val = (self.dataset.split[1] * n as f64 + 1e-9).floor() as usize;
        let test = (self.dataset.split[2] * n as f64 + 1e-9).floor() as usize;
        [n - val - test, val, test]
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        let d = &self.dataset;
        let sum: f64 = d.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || d.split.iter().any(|f| *f < 0.0) {
            return err(format!("split fractions {:?} must be non-negative and sum to 1", d.split));
        }
        if d.samples == 0 || d.points == 0 || d.trajectory_steps < 2 {
            return err("samples, points and trajectory steps must be positive (steps ≥ 2)".into());
        }
        let p = &self.physics;
        if p.n_x == 0 || p.n_z == 0 || p.symbols == 0 || !(p.f_c > 0.0) {
            return err("array size, symbol count and carrier must be positive".into());
        }
        if p.tx_power_dbm[0] > p.tx_power_dbm[1] {
            return err(format!("transmit power range {:?} is reversed", p.tx_power_dbm));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.lr_start > 0.0) || !(t.lr_end > 0.0) {
            return err("epochs, batch size and learning rates must be positive".into());
        }
        if t.loss.gamma_pos < 0.0 || t.loss.gamma_ep < 0.0 {
            return err("loss weights must be non-negative".into());
        }
        let w = &self.model.net_widths;
        if w.len() < 2 || w[0] != 5 || w[w.len() - 1] != 5 {
            return err(format!("net widths must start and end at 5, got {w:?}"));
        }
        self.model.schedule.build()?;
        Ok(())
    }

    /// SHA-256 over the settings that determine the dataset contents.
    pub fn physics_hash(&self) -> String {
        let v = serde_json::json!({
            "seed": self.seed,
            "physics": self.physics,
            "dataset": self.dataset,
        });
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Learning rate for `epoch` (0-based), decaying linearly to `lr_end`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let t = &self.train;
        if t.epochs <= 1 {
            return t.lr_start;
        }
        t.lr_start + (t.lr_end - t.lr_start) * epoch as f64 / (t.epochs - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_split() {
        let d = RunConfig::desk();
        d.validate().unwrap();
        assert_eq!(d.split_counts(), [480, 60, 60]);
        assert_eq!(d.n_b(), 8);
        assert_eq!(d.train.loss, LossWeights { gamma_pos: 0.9, gamma_ep: 0.1 });
        let p = RunConfig::full();
        p.validate().unwrap();
        assert_eq!(p.split_counts(), [40_000, 5_000, 5_000]);
        assert_eq!(p.n_b(), 32);
        assert_eq!(p.encoder_config().d_z, 512);
    }

    #[test]
    fn hash_tracks_physics_only() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.train.epochs = 3;
        assert_eq!(a.physics_hash(), b.physics_hash());
        b.physics.noise_dbm = -80.0;
        assert_ne!(a.physics_hash(), b.physics_hash());
        assert_eq!(a.physics_hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = RunConfig::desk();
        c.dataset.split = [0.8, 0.1, 0.2];
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.model.net_widths = vec![5, 8, 4];
        assert!(c.validate().is_err());
        assert!("laptop".parse::<Profile>().is_err());
    }

    #[test]
    fn json_roundtrip_and_lr_decay() {
        let c = RunConfig::desk();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.learning_rate(0), 1e-3);
        assert!((c.learning_rate(29) - 1e-4).abs() < 1e-18);
    }
}

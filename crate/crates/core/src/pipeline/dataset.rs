//! Simulated measurement/point-cloud pairs and their shard files.

use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SnrSource};
use super::shard::{Shard, ShardWriter};
use super::{rng_for, Domain, PipelineError};
use crate::chanest::ls_estimate_auto;
use crate::dbm_to_watts;
use crate::em::{
    assemble_channel, dft_codebook, simulate_measurement, ArrayConfig, MomOptions, ScattererSet,
};
use crate::encoder::{devectorize_channel, snr_db, vectorize_channel, EncoderInput};
use crate::scene::{
    apply_pose, contrast, make_region, make_shape, normalize_cloud, sample_trajectory, EmPoint,
    EmPointCloud, Material, Pose, RegionSpec, ShapeKind,
};

pub const MANIFEST_FORMAT: &str = "emcloud-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.shard", self.name())
    }
}

/// One simulated observation and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: u64,
    pub kind: ShapeKind,
    pub material: Material,
    pub pose: Pose,
    pub region: RegionSpec,
    pub tx_power_dbm: f64,
    pub sigma2: f64,
    /// Realized `‖HX‖²/‖N‖²`.
    pub p_snr: f64,
    /// `‖Ĥ X‖² / (N_b L σ²)`, computable by the receiver.
    pub p_snr_est: f64,
    pub h_est: DMatrix<Complex64>,
    /// World-frame scatterer positions.
    pub world: Vec<[f64; 3]>,
    /// Normalized 5D cloud with rotor labels.
    pub cloud: EmPointCloud,
}

impl DatasetRecord {
    pub fn snr_db(&self, source: SnrSource) -> f64 {
        match source {
            SnrSource::Realized => snr_db(self.p_snr),
            SnrSource::Estimated => snr_db(self.p_snr_est),
        }
    }

    pub fn encoder_input(&self, source: SnrSource) -> EncoderInput {
        EncoderInput {
            h_vec: vectorize_channel(&self.h_est),
            q_pre: self.region.q_pre,
            snr_db: self.snr_db(source),
        }
    }

    /// Centroid of the world-frame scatterers (the position ground truth).
    pub fn q_true(&self) -> [f64; 3] {
        let n = self.world.len().max(1) as f64;
        std::array::from_fn(|i| self.world.iter().map(|p| p[i]).sum::<f64>() / n)
    }

    /// True when re-normalizing the stored world geometry reproduces the
    /// stored cloud exactly.
    pub fn is_consistent(&self, f_c: f64) -> bool {
        let chi = contrast(self.material.eps_rel, self.material.sigma_cond, f_c);
        self.world.len() == self.cloud.len()
            && self.world.iter().zip(&self.cloud.points).all(|(w, p)| {
                let [u, v, w] = self.region.normalize(&Vector3::from(*w));
                *p == EmPoint {
                    u,
                    v,
                    w,
                    ep_re: chi.re,
                    ep_im: chi.im,
                }
            })
    }
}

/// Simulates sample `id`. Samples are grouped into trajectories of
/// `trajectory_steps` poses that share one airframe and material; the
/// airframe kind cycles over the five quadrotor layouts by trajectory.
pub fn generate_record(config: &RunConfig, id: u64) -> Result<DatasetRecord, PipelineError> {
    let d = &config.dataset;
    let ph = &config.physics;
    let steps = d.trajectory_steps as u64;
    let traj_id = id / steps;
    let step = (id % steps) as usize;

    let mut trng = rng_for(config.seed, Domain::Trajectory, traj_id);
    let traj = sample_trajectory(&d.flight, d.trajectory_steps, d.dt, d.motion, &mut trng)?;
    let material = Material::random(&mut trng);
    let kind = ShapeKind::from_index((traj_id % 5) as u8).expect("five shape kinds");
    let shape = make_shape(kind, d.points, material, &mut trng)?;
    let pose = traj.poses[step];

    let mut rng = rng_for(config.seed, Domain::Sample, id);
    let world = apply_pose(&shape, &pose);
    let region = make_region(pose.q, d.region_err_radius, d.region_s, &mut rng)?;
    let [lo, hi] = ph.tx_power_dbm;
    let tx_power_dbm = if hi > lo { rng.random_range(lo..=hi) } else { lo };

    let array = ArrayConfig::with_default_polarization(ph.n_x, ph.n_z, ph.f_c)?;
    let scatterers = ScattererSet::from_shape(&world, &shape, ph.f_c)?;
    let opts = MomOptions {
        max_points: ph.mom_max_points,
        ..MomOptions::default()
    };
    let h = assemble_channel(&scatterers, &array, ph.forward_mode, opts)?;
    let w = dft_codebook(ph.n_x, ph.n_z, dbm_to_watts(tx_power_dbm))?;
    let sigma2 = dbm_to_watts(ph.noise_dbm);
    let (meas, frame) = simulate_measurement(&h, &w, ph.symbols, sigma2, &mut rng)?;
    let est = ls_estimate_auto(&meas.y, &frame.x)?;
    let echo = (&est.h_est * &frame.x).norm_squared();
    let p_snr_est = echo / (config.n_b() as f64 * ph.symbols as f64 * sigma2);

    let cloud = normalize_cloud(&world, &shape, &region, ph.f_c);
    Ok(DatasetRecord {
        id,
        kind,
        material,
        pose,
        region,
        tx_power_dbm,
        sigma2,
        p_snr: meas.p_snr,
        p_snr_est,
        h_est: est.h_est,
        world: world.iter().map(|p| [p.x, p.y, p.z]).collect(),
        cloud,
    })
}

/// Sample ids of each split: a seeded permutation of `0..samples`, cut by
/// the split counts, each part sorted by id.
pub fn split_ids(config: &RunConfig) -> [Vec<u64>; 3] {
    let mut ids: Vec<u64> = (0..config.dataset.samples as u64).collect();
    ids.shuffle(&mut rng_for(config.seed, Domain::Split, 0));
    let [n_train, n_val, _] = config.split_counts();
    let mut parts = [
        ids[..n_train].to_vec(),
        ids[n_train..n_train + n_val].to_vec(),
        ids[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

pub fn write_records(
    path: &Path,
    records: &[DatasetRecord],
    meta: serde_json::Value,
) -> Result<(), PipelineError> {
    let n = records.len();
    let m = records.first().map_or(0, |r| r.cloud.len());
    let hl = records.first().map_or(0, |r| 2 * r.h_est.len());
    if records
        .iter()
        .any(|r| r.cloud.len() != m || r.world.len() != m || 2 * r.h_est.len() != hl)
    {
        return Err(PipelineError::Format("records differ in cloud or channel size".into()));
    }
    let mut w = ShardWriter::new();
    w.u64("id", &[n], records.iter().map(|r| r.id).collect())?;
    w.u8("shape_kind", &[n], records.iter().map(|r| r.kind.index()).collect())?;
    w.f64(
        "material",
        &[n, 2],
        records.iter().flat_map(|r| [r.material.eps_rel, r.material.sigma_cond]).collect(),
    )?;
    w.f64(
        "pose",
        &[n, 6],
        records.iter().flat_map(|r| r.pose.q.into_iter().chain(r.pose.theta_deg)).collect(),
    )?;
    w.f64(
        "region",
        &[n, 6],
        records.iter().flat_map(|r| r.region.q_pre.into_iter().chain(r.region.s)).collect(),
    )?;
    w.f64("tx_power_dbm", &[n], records.iter().map(|r| r.tx_power_dbm).collect())?;
    w.f64("sigma2", &[n], records.iter().map(|r| r.sigma2).collect())?;
    w.f64("p_snr", &[n], records.iter().map(|r| r.p_snr).collect())?;
    w.f64("p_snr_est", &[n], records.iter().map(|r| r.p_snr_est).collect())?;
    w.f64("h_est", &[n, hl], records.iter().flat_map(|r| vectorize_channel(&r.h_est)).collect())?;
    w.f64("world", &[n, m, 3], records.iter().flat_map(|r| r.world.iter().flatten().copied()).collect())?;
    w.f64("cloud", &[n, m, 5], records.iter().flat_map(|r| r.cloud.arrays().into_iter().flatten()).collect())?;
    w.u8(
        "rotor_mask",
        &[n, m],
        records
            .iter()
            .flat_map(|r| match &r.cloud.rotor_mask {
                Some(mask) => mask.iter().map(|&b| b as u8).collect(),
                None => vec![0; m],
            })
            .collect(),
    )?;
    w.write(path, meta)
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    let s = Shard::read(path)?;
    let bad = |m: &str| PipelineError::Format(format!("{}: {m}", path.display()));
    let (_, ids) = s.u64("id")?;
    let n = ids.len();
    let (_, kinds) = s.u8("shape_kind")?;
    let (_, material) = s.f64("material")?;
    let (_, pose) = s.f64("pose")?;
    let (_, region) = s.f64("region")?;
    let (_, tx) = s.f64("tx_power_dbm")?;
    let (_, sigma2) = s.f64("sigma2")?;
    let (_, p_snr) = s.f64("p_snr")?;
    let (_, p_snr_est) = s.f64("p_snr_est")?;
    let (h_shape, h_est) = s.f64("h_est")?;
    let (c_shape, cloud) = s.f64("cloud")?;
    let (_, world) = s.f64("world")?;
    let (_, mask) = s.u8("rotor_mask")?;
    let m = c_shape.get(1).copied().unwrap_or(0);
    let hl = h_shape.get(1).copied().unwrap_or(0);
    let n_b = ((hl / 2) as f64).sqrt().round() as usize;
    let lens_ok = [kinds.len(), tx.len(), sigma2.len(), p_snr.len(), p_snr_est.len()]
        .iter()
        .all(|&l| l == n)
        && material.len() == 2 * n
        && pose.len() == 6 * n
        && region.len() == 6 * n
        && h_est.len() == n * hl
        && cloud.len() == n * m * 5
        && world.len() == n * m * 3
        && mask.len() == n * m
        && n_b * n_b * 2 == hl;
    if !lens_ok {
        return Err(bad("inconsistent field lengths"));
    }
    (0..n)
        .map(|i| {
            let kind = ShapeKind::from_index(kinds[i]).ok_or_else(|| bad("unknown shape kind"))?;
            let pz = &pose[6 * i..6 * i + 6];
            let rg = &region[6 * i..6 * i + 6];
            let h = devectorize_channel(&h_est[i * hl..(i + 1) * hl], n_b)
                .ok_or_else(|| bad("bad channel vector"))?;
            let points = cloud[i * m * 5..(i + 1) * m * 5]
                .chunks_exact(5)
                .map(|c| EmPoint::from_array([c[0], c[1], c[2], c[3], c[4]]))
                .collect();
            Ok(DatasetRecord {
                id: ids[i],
                kind,
                material: Material {
                    eps_rel: material[2 * i],
                    sigma_cond: material[2 * i + 1],
                },
                pose: Pose {
                    q: [pz[0], pz[1], pz[2]],
                    theta_deg: [pz[3], pz[4], pz[5]],
                },
                region: RegionSpec::new([rg[0], rg[1], rg[2]], [rg[3], rg[4], rg[5]])?,
                tx_power_dbm: tx[i],
                sigma2: sigma2[i],
                p_snr: p_snr[i],
                p_snr_est: p_snr_est[i],
                h_est: h,
                world: world[i * m * 3..(i + 1) * m * 3]
                    .chunks_exact(3)
                    .map(|c| [c[0], c[1], c[2]])
                    .collect(),
                cloud: EmPointCloud {
                    points,
                    rotor_mask: Some(mask[i * m..(i + 1) * m].iter().map(|&b| b != 0).collect()),
                },
            })
        })
        .collect()
}

/// Dataset provenance written next to the shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub physics_hash: String,
    pub seed: u64,
    pub counts: [usize; 3],
    pub shards: [String; 3],
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            PipelineError::Config(format!("no dataset at {}: {e}", dir.display()))
        })?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(PipelineError::Format(format!(
                "{}: unsupported manifest {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }

    /// Fails when `config` would have produced a different dataset.
    pub fn check(&self, config: &RunConfig) -> Result<(), PipelineError> {
        let h = config.physics_hash();
        if h != self.physics_hash {
            return Err(PipelineError::Mismatch(format!(
                "dataset was built under physics hash {} but the current config hashes to {h}; \
                 rebuild the dataset or pass --allow-config-drift",
                self.physics_hash
            )));
        }
        Ok(())
    }
}

/// Generates the whole dataset into `out`: `train/val/test.shard` plus
/// `manifest.json`. Samples are simulated in parallel; the output does not
/// depend on the thread count.
pub fn cmd_dataset(config: &RunConfig, out: &Path) -> Result<Manifest, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let parts = split_ids(config);
    let mut counts = [0; 3];
    for (split, ids) in Split::ALL.iter().zip(&parts) {
        let records = ids
            .par_iter()
            .map(|&id| generate_record(config, id))
            .collect::<Result<Vec<_>, _>>()?;
        let meta = serde_json::json!({
            "split": split.name(),
            "physics_hash": config.physics_hash(),
            "seed": config.seed,
        });
        write_records(&out.join(split.file_name()), &records, meta)?;
        counts[*split as usize] = records.len();
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        physics_hash: config.physics_hash(),
        seed: config.seed,
        counts,
        shards: Split::ALL.map(|s| s.file_name()),
        config: config.clone(),
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads one split of a dataset directory.
pub fn read_split(dir: &Path, split: Split) -> Result<Vec<DatasetRecord>, PipelineError> {
    read_records(&dir.join(split.file_name()))
}

//! `emcloud`: dataset generation, training, inference, evaluation and PLY
//! export for wireless electromagnetic point-cloud imaging.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use emcloud::encoder::EmbedMode;
use emcloud::pipeline::{
    cmd_dataset, cmd_eval, cmd_infer, cmd_train, export_ply, Profile, RunConfig, Split,
    TrainOptions, CHECKPOINT_BEST,
};

#[derive(Debug, Parser)]
#[command(name = "emcloud", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration (defaults to the selected profile).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in parameter profile used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "emcloud-run")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the dataset and write train/val/test shards plus manifest.json.
    Dataset,
    /// Train the encoder and noise estimator.
    Train {
        /// Dataset directory (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from checkpoint_last.json.
        #[arg(long)]
        resume: bool,
        /// Stop once this many epochs have completed.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Accept a dataset built under a different physics configuration.
        #[arg(long)]
        allow_config_drift: bool,
        /// Ablation: condition on the projected channel only (no position/SNR embedding).
        #[arg(long, conflicts_with = "direct_channel")]
        no_embed: bool,
        /// Ablation: feed the raw channel vector straight to the noise estimator.
        #[arg(long)]
        direct_channel: bool,
    },
    /// Reconstruct point clouds for a dataset split.
    Infer {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to load (defaults to <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        allow_config_drift: bool,
    },
    /// Score reconstructions and write report.json / report.csv.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory holding recon.shard (defaults to --out).
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Write the ground-truth clouds of a split as PLY files.
    ExportPly {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::for_profile(match g.profile {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Full => Profile::Full,
        }),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn dir_or(opt: &Option<PathBuf>, default: &Path) -> PathBuf {
    opt.clone().unwrap_or_else(|| default.to_path_buf())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    let out = &cli.global.out;
    match cli.command {
        Command::Dataset => {
            let m = cmd_dataset(&config, out)?;
            println!(
                "dataset: {} train / {} val / {} test samples in {} (physics hash {})",
                m.counts[0],
                m.counts[1],
                m.counts[2],
                out.display(),
                &m.physics_hash[..12]
            );
        }
        Command::Train {
            data,
            resume,
            stop_after,
            allow_config_drift,
            no_embed,
            direct_channel,
        } => {
            if no_embed {
                config.model.embed = EmbedMode::NoEmbed;
            } else if direct_channel {
                config.model.embed = EmbedMode::DirectChannel;
            }
            let opts = TrainOptions {
                allow_config_drift,
                resume,
                stop_after,
            };
            let outcome = cmd_train(&config, &dir_or(&data, out), out, &opts, &mut |log| {
                eprintln!(
                    "epoch {:>4}  train {:.5}  val {:.5}  lr {:.2e}",
                    log.epoch, log.train_loss, log.val_loss, log.lr
                );
            })?;
            println!(
                "trained {} epochs: val loss {:.5} -> {:.5} (best {:.5} at epoch {})",
                outcome.epochs_done(),
                outcome.initial_val,
                outcome.final_val(),
                outcome.best_val,
                outcome.best_epoch
            );
        }
        Command::Infer {
            data,
            checkpoint,
            split,
            allow_config_drift,
        } => {
            let ck = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_BEST));
            let (recon, timing) = cmd_infer(
                &config,
                &ck,
                &dir_or(&data, out),
                split.into(),
                out,
                allow_config_drift,
            )?;
            println!(
                "reconstructed {} clouds of {} points in {:.2} s ({:.3} s per cloud)",
                recon.len(),
                timing.points_per_cloud,
                timing.total_seconds,
                timing.per_cloud_seconds
            );
        }
        Command::Eval { data, recon, split } => {
            let report = cmd_eval(&config, &dir_or(&data, out), split.into(), &dir_or(&recon, out), out)?;
            println!(
                "WD {:.2} dB  MCD {:.4}  MPE {:.3} m  MDE {:.4}  ({} samples)",
                report.wd_db,
                report.mcd,
                report.mpe,
                report.mde,
                report.samples.len()
            );
            for b in &report.buckets {
                let center = b.center_db.map_or("inf".to_string(), |c| format!("{c:>4}"));
                println!(
                    "  SNR {center} dB: n={:<3} WD {:.2} dB  MPE {:.3} m  MDE {:.4}",
                    b.count, b.wd_db, b.mpe, b.mde
                );
            }
        }
        Command::ExportPly { data, split } => {
            let dir = out.join("truth_ply");
            let n = export_ply(&dir_or(&data, out), split.into(), &dir)?;
            println!("wrote {n} PLY files to {}", dir.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

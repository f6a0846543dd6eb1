//! End-to-end pipeline on a tiny configuration: dataset → train → infer →
//! eval, plus resume, drift refusal and determinism.

use std::path::Path;

use emcloud::pipeline::{
    cmd_dataset, cmd_eval, cmd_infer, cmd_train, load_model, read_recon, read_split, Manifest,
    RunConfig, Split, TrainOptions, CHECKPOINT_BEST, CHECKPOINT_INIT, CHECKPOINT_LAST, LOSSES_CSV,
    RECON_SHARD, REPORT_CSV,
};

fn tiny() -> RunConfig {
    let mut c = RunConfig::desk();
    c.dataset.samples = 20;
    c.dataset.points = 16;
    c.dataset.trajectory_steps = 5;
    c.model.d_p = 16;
    c.model.head_hidden = 16;
    c.model.snr_out = 4;
    c.model.mlp_hidden = 16;
    c.model.mlp_layers = 2;
    c.model.d_z = 8;
    c.model.net_widths = vec![5, 16, 16, 5];
    c.model.schedule.steps = 8;
    c.train.epochs = 3;
    c.train.batch_size = 4;
    c.validate().unwrap();
    c
}

fn quiet() -> impl FnMut(&emcloud::pipeline::EpochLog) {
    |_| {}
}

fn train(c: &RunConfig, data: &Path, out: &Path, opts: TrainOptions) -> emcloud::pipeline::TrainOutcome {
    cmd_train(c, data, out, &opts, &mut quiet()).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let c = tiny();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let m = cmd_dataset(&c, d).unwrap();
    assert_eq!(m.counts.iter().sum::<usize>(), 20);
    assert_eq!(Manifest::load(d).unwrap().physics_hash, c.physics_hash());
    for s in Split::ALL {
        let recs = read_split(d, s).unwrap();
        assert!(recs.windows(2).all(|w| w[0].id < w[1].id));
        assert!(recs.iter().all(|r| r.is_consistent(c.physics.f_c)));
    }

    let outcome = train(&c, d, d, TrainOptions::default());
    assert_eq!(outcome.epochs_done(), 3);
    for f in [CHECKPOINT_INIT, CHECKPOINT_BEST, CHECKPOINT_LAST, LOSSES_CSV] {
        assert!(d.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join(LOSSES_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 3);
    assert!(csv.starts_with("epoch,train_loss,val_loss,lr\n0,,"));

    let (recon, timing) = cmd_infer(&c, &d.join(CHECKPOINT_BEST), d, Split::Test, d, false).unwrap();
    let test = read_split(d, Split::Test).unwrap();
    assert_eq!(recon.len(), test.len());
    assert_eq!(timing.clouds, test.len());
    assert_eq!(read_recon(&d.join(RECON_SHARD)).unwrap(), recon);
    assert!(recon.iter().all(|r| r.cloud.len() == c.dataset.points && r.cloud.is_finite()));
    assert_eq!(std::fs::read_dir(d.join("clouds")).unwrap().count(), test.len());

    let report = cmd_eval(&c, d, Split::Test, d, d).unwrap();
    assert_eq!(report.samples.len(), test.len());
    assert!(report.wd_db.is_finite() && report.mcd.is_finite());
    assert!(d.join(REPORT_CSV).exists());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let c = tiny();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_dataset(&c, &data).unwrap();

    let full = train(&c, &data, &dir.path().join("a"), TrainOptions::default());

    let b = dir.path().join("b");
    let first = train(
        &c,
        &data,
        &b,
        TrainOptions {
            stop_after: Some(1),
            ..Default::default()
        },
    );
    assert_eq!(first.epochs_done(), 1);
    let resumed = train(
        &c,
        &data,
        &b,
        TrainOptions {
            resume: true,
            ..Default::default()
        },
    );
    assert_eq!(resumed.history, full.history);
    let (_, pa, _, _) = load_model(&dir.path().join("a").join(CHECKPOINT_LAST)).unwrap();
    let (_, pb, _, _) = load_model(&b.join(CHECKPOINT_LAST)).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn physics_drift_is_refused_unless_overridden() {
    let c = tiny();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cmd_dataset(&c, d).unwrap();
    let mut drifted = c.clone();
    drifted.physics.noise_dbm += 3.0;
    let err = cmd_train(&drifted, d, d, &TrainOptions::default(), &mut quiet()).unwrap_err();
    assert!(err.to_string().contains("--allow-config-drift"), "{err}");

    let mut one = drifted.clone();
    one.train.epochs = 1;
    let opts = TrainOptions {
        allow_config_drift: true,
        ..Default::default()
    };
    assert_eq!(cmd_train(&one, d, d, &opts, &mut quiet()).unwrap().epochs_done(), 1);

    // inference refuses a dataset built under other physics than the checkpoint
    let other = d.join("other");
    cmd_dataset(&drifted, &other).unwrap();
    let err = cmd_infer(&c, &d.join(CHECKPOINT_BEST), &other, Split::Test, d, false).unwrap_err();
    assert!(err.to_string().contains("physics hash"), "{err}");
    assert!(cmd_infer(&c, &d.join(CHECKPOINT_BEST), &other, Split::Test, d, true).is_ok());
}

#[test]
fn whole_run_is_deterministic() {
    let c = tiny();
    let run = |root: &Path| {
        cmd_dataset(&c, root).unwrap();
        train(&c, root, root, TrainOptions::default());
        cmd_infer(&c, &root.join(CHECKPOINT_BEST), root, Split::Test, root, false).unwrap();
        cmd_eval(&c, root, Split::Test, root, root).unwrap();
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    for f in ["train.shard", "test.shard", LOSSES_CSV, RECON_SHARD, REPORT_CSV] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn corrupt_checkpoint_is_an_error() {
    let c = tiny();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cmd_dataset(&c, d).unwrap();
    let bad = d.join("bad.json");
    std::fs::write(&bad, "{\"format\": 1").unwrap();
    assert!(cmd_infer(&c, &bad, d, Split::Test, d, false).is_err());
    assert!(cmd_infer(&c, &d.join("missing.json"), d, Split::Test, d, false).is_err());
}

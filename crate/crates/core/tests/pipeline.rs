mod common;

use std::path::Path;
use std::process::Command;

use common::{smooth_images, snapshot, write_cifar};
use urlost::data::LatticeConfig;
use urlost::eval::adjusted_rand_index;
use urlost::pipeline::*;
use urlost::{Error, Precision};

const TOY: &str = r#"
seed = 1
[dataset]
variant = "synthetic"
[dataset.synthetic]
samples = 96
test_samples = 64
sizes = [4, 4, 4, 4, 4, 4, 4, 4]
factors = 4
classes = 4
noise = 0.3
[cluster]
m = 8
[model]
d_model = 16
encoder_depth = 1
decoder_depth = 1
heads = 2
d_decoder = 8
mlp_ratio = 2
[train]
epochs = 6
batch_size = 32
learning_rate = 3e-3
warmup_epochs = 1
mask_ratio = 0.5
"#;

fn toy() -> PipelineConfig {
    PipelineConfig::from_toml(TOY, ".").unwrap()
}

fn all_stages(cfg: &PipelineConfig, out: &Path) {
    cmd_synth(cfg, out).unwrap();
    cmd_affinity(cfg, out).unwrap();
    cmd_cluster(cfg, out).unwrap();
    cmd_train(cfg, out).unwrap();
    cmd_eval(cfg, out).unwrap();
}

fn stage_of(e: &Error) -> &'static str {
    match e {
        Error::Stage { stage, .. } => stage,
        _ => "",
    }
}

fn is_stale(e: &Error) -> bool {
    matches!(e, Error::Stage { source, .. } if matches!(**source, Error::StaleArtifact { .. }))
}

#[test]
fn every_stage_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = toy();
    all_stages(&cfg, &a);
    all_stages(&cfg, &b);
    let first = snapshot(&a);
    assert!(first.iter().any(|(n, _)| n == "checkpoint.bin"));
    assert_eq!(first, snapshot(&b));
    // rerunning in place changes nothing either
    all_stages(&cfg, &a);
    assert_eq!(first, snapshot(&a));
}

#[test]
fn downstream_stages_refuse_stale_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = toy();
    cmd_synth(&cfg, out).unwrap();
    cmd_affinity(&cfg, out).unwrap();

    // new signals under the old affinity
    let reseeded = cfg.clone().with_overrides(Some(2), None);
    cmd_synth(&reseeded, out).unwrap();
    let e = cmd_cluster(&cfg, out).unwrap_err();
    assert!(is_stale(&e), "{e}");
    assert_eq!(stage_of(&e), "cluster");

    // tampered artifact
    cmd_affinity(&reseeded, out).unwrap();
    let path = out.join(AFFINITY);
    let mut bytes = std::fs::read(&path).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(is_stale(&cmd_cluster(&reseeded, out).unwrap_err()));
}

#[test]
fn missing_upstream_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let e = cmd_cluster(&toy(), dir.path()).unwrap_err();
    assert_eq!(stage_of(&e), "cluster");
    assert!(e.to_string().contains("synth"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = toy();
    for out in [&a, &b] {
        cmd_synth(&cfg, out).unwrap();
        cmd_affinity(&cfg, out).unwrap();
        cmd_cluster(&cfg, out).unwrap();
    }
    cmd_train(&cfg, &a).unwrap();
    let partial = cmd_train_with(&cfg, &b, &TrainStageOptions { stop_after: Some(2) }).unwrap();
    assert_eq!(partial.details["epochs_done"], 2);
    cmd_train(&cfg, &b).unwrap();
    assert_eq!(std::fs::read(a.join(CHECKPOINT)).unwrap(), std::fs::read(b.join(CHECKPOINT)).unwrap());
    assert_eq!(std::fs::read(a.join(LOSSES)).unwrap(), std::fs::read(b.join(LOSSES)).unwrap());
}

#[test]
fn single_precision_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy().with_overrides(None, Some(Precision::F32));
    all_stages(&cfg, dir.path());
    let r: urlost::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(EVAL_JSON)).unwrap()).unwrap();
    assert!(r.accuracy > 0.25);
}

#[test]
fn one_cluster_holds_every_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy();
    cfg.cluster.m = 1;
    cmd_synth(&cfg, dir.path()).unwrap();
    cmd_affinity(&cfg, dir.path()).unwrap();
    cmd_cluster(&cfg, dir.path()).unwrap();
    let c = ClusterFile::read(&dir.path().join(CLUSTERS)).unwrap();
    assert_eq!((c.m, c.sizes.clone()), (1, vec![32]));
}

#[test]
fn independent_blocks_are_recovered_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy();
    cfg.dataset.synthetic.factors = 0;
    cfg.dataset.synthetic.samples = 400;
    cfg.dataset.synthetic.noise = 0.2;
    cmd_synth(&cfg, dir.path()).unwrap();
    cmd_affinity(&cfg, dir.path()).unwrap();
    cmd_cluster(&cfg, dir.path()).unwrap();
    let c = ClusterFile::read(&dir.path().join(CLUSTERS)).unwrap();
    let planted = urlost::data::block_labels(&[4; 8]);
    assert_eq!(adjusted_rand_index(&c.labels, &planted).unwrap(), 1.0);
    assert_eq!(c.params.bins, Some(cfg.affinity.bins));
    assert!(c.provenance.contains_key("laplacian"));
}

/// Measured on this configuration: a trained encoder beats the seeded
/// initialization, which in turn beats chance (0.25).
#[test]
fn trained_encoder_beats_untrained_beats_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy();
    let s = &mut cfg.dataset.synthetic;
    s.sizes = vec![16; 16];
    s.samples = 512;
    s.test_samples = 512;
    s.noise = 1.0;
    cfg.cluster.source = ClusterSource::Patches;
    cfg.model.d_model = 32;
    cfg.model.d_decoder = 16;
    cfg.train.epochs = 30;
    cfg.eval.probe.standardize = true;
    let mut trained = Vec::new();
    let mut untrained = Vec::new();
    for seed in [1, 2] {
        let cfg = cfg.clone().with_overrides(Some(seed), None);
        let out = dir.path().join(seed.to_string());
        cmd_synth(&cfg, &out).unwrap();
        cmd_cluster(&cfg, &out).unwrap();
        cmd_train(&cfg, &out).unwrap();
        trained.push(cmd_eval(&cfg, &out).unwrap().accuracy);
        let mut u = cfg.clone();
        u.eval.untrained = true;
        untrained.push(cmd_eval(&u, &out).unwrap().accuracy);
    }
    for (t, u) in trained.iter().zip(&untrained) {
        assert!(u > &0.35, "untrained {u}");
        assert!(t > u, "trained {t} vs untrained {u}");
    }
}

#[test]
fn repeated_presentations_decode_above_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy();
    cfg.dataset.synthetic.repeats = true;
    cfg.dataset.synthetic.noise = 0.1;
    cfg.eval.task = EvalTask::PairDecode;
    all_stages(&cfg, dir.path());
    let r: urlost::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(EVAL_JSON)).unwrap()).unwrap();
    assert_eq!(r.n_test, 64);
    assert!(r.accuracy > 10.0 / 64.0, "{}", r.accuracy);
}

#[test]
fn kfold_refits_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy();
    cfg.eval.task = EvalTask::Kfold;
    cfg.eval.k_folds = 3;
    cfg.train.epochs = 2;
    all_stages(&cfg, dir.path());
    let r: urlost::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(EVAL_JSON)).unwrap()).unwrap();
    assert_eq!(r.folds.len(), 3);
    assert_eq!(r.folds.iter().map(|f| f.n_test).sum::<usize>(), 96);
}

fn image_config(dir: &Path, variant: &str, extra: &str) -> PipelineConfig {
    write_cifar(&dir.join("train.bin"), 24, 7);
    write_cifar(&dir.join("test.bin"), 12, 8);
    let text = format!(
        "seed = 3\n[dataset]\nvariant = \"{variant}\"\nsource = [\"train.bin\"]\ntest_source = [\"test.bin\"]\n{extra}"
    );
    PipelineConfig::from_toml(&text, dir).unwrap()
}

#[test]
fn plain_images_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = image_config(dir.path(), "plain", "");
    let rec = cmd_synth(&cfg, &dir.path().join("run")).unwrap();
    assert_eq!(rec.details["dims"], 3072);
    let x = urlost::io::read_matrix::<f64>(dir.path().join("run").join(SIGNALS)).unwrap();
    assert_eq!(&x, smooth_images(24, 7).to_signals().values());
}

#[test]
fn permuted_images_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = image_config(dir.path(), "permuted", "pool = 4\n");
    cmd_synth(&cfg, &dir.path().join("a")).unwrap();
    cmd_synth(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(snapshot(&dir.path().join("a")), snapshot(&dir.path().join("b")));
    let x = urlost::io::read_matrix::<f64>(dir.path().join("a").join(SIGNALS)).unwrap();
    assert_eq!(x.ncols(), 64);
}

#[test]
fn default_lattice_gives_1038_kernels_per_channel() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = image_config(dir.path(), "foveated", "limit = 3\ntest_limit = 2\n");
    cfg.dataset.test_source.clear();
    let rec = cmd_synth(&cfg, &dir.path().join("run")).unwrap();
    assert_eq!(rec.details["dims"], 1038 * 3);
    assert!(rec.details["lattice_hash"].is_string());
}

#[test]
fn local_permuted_training_logs_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "patch_size = 8\n[cluster]\nsource = \"patches\"\n[model]\nd_model = 8\nencoder_depth = 1\ndecoder_depth = 1\nheads = 2\nd_decoder = 8\nmlp_ratio = 1\n[train]\nepochs = 2\nbatch_size = 8\n";
    let cfg = image_config(dir.path(), "local-permuted", extra);
    let out = dir.path().join("run");
    cmd_synth(&cfg, &out).unwrap();
    cmd_cluster(&cfg, &out).unwrap();
    let c = ClusterFile::read(&out.join(CLUSTERS)).unwrap();
    assert_eq!(c.sizes, vec![192; 16]);
    cmd_train(&cfg, &out).unwrap();
    let losses = std::fs::read_to_string(out.join(LOSSES)).unwrap();
    assert_eq!(losses.lines().next().unwrap(), "epoch,loss,lr,alignment");
    assert_eq!(losses.lines().count(), 3);
}

#[test]
fn density_grid_feeds_a_table_shaped_report() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "upsample = 3\n[cluster]\nm = 6\nalpha = 0.5\nbeta = 2.0\nalpha_grid = [0.0, 0.5, 1.0]\nbeta_grid = [0.0, 2.0]\n\
        [model]\nd_model = 8\nencoder_depth = 1\ndecoder_depth = 1\nheads = 2\nd_decoder = 8\nmlp_ratio = 1\n\
        [train]\nepochs = 1\nbatch_size = 8\n";
    let mut cfg = image_config(dir.path(), "foveated", extra);
    cfg.dataset.lattice = Some(LatticeConfig::ring_law(3.0, 0.035, 1.43, 40.0, [47.5, 47.5]));
    let out = dir.path().join("run");
    cmd_synth(&cfg, &out).unwrap();
    cmd_affinity(&cfg, &out).unwrap();
    cmd_cluster(&cfg, &out).unwrap();
    let grid: Vec<_> = cfg.cluster.grid();
    assert_eq!(grid.len(), 6);
    for &(a, b) in &grid {
        let sub = out.join(grid_dir(a, b));
        let c = ClusterFile::read(&sub.join(CLUSTERS)).unwrap();
        assert_eq!((c.params.alpha, c.params.beta, c.m), (a, b, 6));
        assert!(sub.join(DENSITY).exists());
        cmd_train(&cfg, &sub).unwrap();
        cmd_eval(&cfg, &sub).unwrap();
    }
    let report = cmd_report(&out).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!((report.betas.clone(), report.alphas.clone()), (vec![0.0, 2.0], vec![0.0, 0.5, 1.0]));
    assert!(report.table.iter().flatten().all(|v| v.is_some()));
    assert!(out.join("report.csv").exists() && out.join("table.csv").exists());
}

#[test]
fn cli_exits_nonzero_with_a_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[dataset]\nvariant = \"plain\"\nsource = [\"missing.bin\"]\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_urlost"))
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[synth]"), "{err}");
}

#[test]
fn cli_runs_the_toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    std::fs::write(&cfg, TOY).unwrap();
    let run = dir.path().join("run");
    for verb in ["synth", "affinity", "cluster", "train", "eval"] {
        let st = Command::new(env!("CARGO_BIN_EXE_urlost"))
            .args([verb, "--seed", "4", "--precision", "f64", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&run)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(st.success(), "{verb}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_urlost")).args(["report", "--out"]).arg(&run).output().unwrap();
    assert!(out.status.success());
    let rec: StageRecord =
        serde_json::from_str(&std::fs::read_to_string(StageRecord::path(&run, "synth")).unwrap()).unwrap();
    assert_eq!(rec.seed, 4);
}

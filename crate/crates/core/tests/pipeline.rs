use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use uqeval::data::SyntheticSpec;
use uqeval::estimators::{Manifest, Method, ModelSpec, UncertaintyKind};
use uqeval::experiment::{cmd_evaluate, cmd_train, evaluate_run, DataSource, Domain, Flag, MetricsSummary, RunConfig};
use uqeval::io::sha256_hex;
use uqeval::UqError;

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/summary_v1.json")
}

fn tiny_config(members: usize) -> RunConfig {
    let mut cfg = RunConfig::new(
        DataSource::Synthetic(SyntheticSpec {
            n: 300,
            seed: 2,
            ..SyntheticSpec::default()
        }),
        Method::Ensemble,
    );
    cfg.members = Some(members);
    cfg.model = ModelSpec {
        hidden: vec![8],
        dropout: 0.0,
    };
    cfg.train.max_epochs = 5;
    cfg.train.patience = 5;
    cfg.ranking.q = 10;
    cfg.calibration.levels = 20;
    cfg.calibration.bins = 5;
    cfg
}

fn file_hashes(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.clone(), sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    out
}

#[test]
fn golden_summary_parses_and_reserializes_byte_for_byte() {
    let bytes = std::fs::read(golden()).unwrap();
    let summary = MetricsSummary::read(&golden()).unwrap();
    assert_eq!(summary.domain, Domain::Out);
    assert_eq!(summary.n_test, 512);
    let epi = summary.column(UncertaintyKind::Epi).unwrap();
    assert_eq!(epi.indices.error_drop.flag, Some(Flag::Infinite));
    assert_eq!(epi.indices.cv.value, Some(0.0));
    assert!(summary.column(UncertaintyKind::Ale).is_none());
    assert_eq!(summary.to_json().unwrap(), bytes);
}

#[test]
fn summary_with_unknown_format_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.json");
    let text = std::fs::read_to_string(golden())
        .unwrap()
        .replace("SUMMARY-v1", "SUMMARY-v9");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(MetricsSummary::read(&path), Err(UqError::Format { .. })));
}

#[test]
fn training_writes_one_checkpoint_per_member_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny_config(3);
    cmd_train(&cfg, a.path()).unwrap();
    cmd_train(&cfg, b.path()).unwrap();
    let ckpts = std::fs::read_dir(a.path().join("members")).unwrap().count();
    assert_eq!(ckpts, 3);
    assert_eq!(
        std::fs::read(a.path().join("manifest.json")).unwrap(),
        std::fs::read(b.path().join("manifest.json")).unwrap()
    );
}

#[test]
fn evaluation_leaves_the_run_directory_untouched() {
    let run = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_train(&tiny_config(2), run.path()).unwrap();
    let before = file_hashes(run.path());
    cmd_evaluate(&run.path().join("manifest.json"), &[], out.path()).unwrap();
    assert_eq!(file_hashes(run.path()), before);
    for name in ["summary.json", "summary.txt", "predictions.csv", "coverage_total.csv"] {
        assert!(out.path().join(name).exists(), "{name}");
    }
}

#[test]
fn identical_members_flag_every_epistemic_index() {
    let run = tempfile::tempdir().unwrap();
    let outcome = cmd_train(&tiny_config(2), run.path()).unwrap();
    let mut manifest = outcome.manifest;
    manifest.models[1] = manifest.models[0].clone();
    manifest.write(&outcome.manifest_path).unwrap();
    let eval = evaluate_run(&outcome.manifest_path, &[UncertaintyKind::Epi, UncertaintyKind::Total]).unwrap();
    assert!(eval.predictions.epi.iter().all(|v| *v == 0.0));
    let epi = eval.summary.column(UncertaintyKind::Epi).unwrap();
    for cell in epi.indices.cells() {
        assert_eq!(cell.flag, Some(Flag::Degenerate));
    }
    assert_eq!(epi.indices.cv.value, Some(0.0));
    let total = eval.summary.column(UncertaintyKind::Total).unwrap();
    assert!(total.indices.cells().iter().all(|c| c.flag.is_none()));
}

#[test]
fn tampered_checkpoint_is_detected() {
    let run = tempfile::tempdir().unwrap();
    let outcome = cmd_train(&tiny_config(2), run.path()).unwrap();
    let manifest = Manifest::read(&outcome.manifest_path).unwrap();
    let ckpt = run.path().join(&manifest.models[1].checkpoint);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&ckpt, bytes).unwrap();
    assert!(evaluate_run(&outcome.manifest_path, &[]).is_err());
}

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use serde_json::Value;

use motility::classical::ClassicalMethod;
use motility::cli::*;
use motility::eval::make_folds;
use motility::represent::RepresentationKind;
use motility::synthetic::{write_dot_dataset, DotVideoSpec};

fn ids(v: &Value) -> BTreeSet<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

fn dataset(dir: &Path, n: usize) -> std::path::PathBuf {
    let spec = DotVideoSpec { frames: 32, height: 64, width: 64, ..DotVideoSpec::default() };
    write_dot_dataset(&dir.join("data"), n, &spec, 1).unwrap();
    dir.join("data/manifest.csv")
}

#[test]
fn train_validation_and_test_participants_never_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 10);
    let mut settings = NeuralSettings::default();
    settings.train.max_epochs = 1;
    settings.stage_widths = vec![4, 8];
    settings.hidden = vec![16];
    let mut cfg = RunConfig::new(&manifest, dir.path().join("out"), ModelFamily::Neural(settings));
    cfg.representation = RepresentationKind::SingleFrame;
    cfg.samples_per_video = 1;
    cfg.with_participant_data = true;
    cmd_evaluate(&cfg, false).unwrap();

    let log = std::fs::read_to_string(dir.path().join("out").join(RUN_LOG)).unwrap();
    let folds: Vec<Value> =
        log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()).filter(|v| v["event"] == "fold").collect();
    assert_eq!(folds.len(), 3);
    let mut tested = BTreeSet::new();
    for f in &folds {
        let test = ids(&f["test_participants"]);
        let train = ids(&f["details"]["train_participants"]);
        let val = ids(&f["details"]["validation_participants"]);
        assert!(!val.is_empty());
        assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
        assert_eq!(train.len() + val.len() + test.len(), 10);
        assert_eq!(ids(&f["train_participants"]), train.union(&val).cloned().collect());
        tested.extend(test);
    }
    assert_eq!(tested.len(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn nested_splits_partition_the_participants(n in 3usize..60, k in 2usize..6, seed in 0u64..1000, frac in 0.0f64..0.5) {
        prop_assume!(n >= k);
        let all: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let plan = make_folds(&all, k, seed).unwrap();
        for f in 0..k {
            let (train, val) = validation_split(&plan.train_ids(f), frac, seed);
            let mut seen: BTreeSet<&String> = BTreeSet::new();
            for id in train.iter().chain(&val).chain(plan.test_ids(f)) {
                prop_assert!(seen.insert(id));
            }
            prop_assert_eq!(seen.len(), n);
            prop_assert!(!train.is_empty());
        }
    }
}

#[test]
fn classical_run_is_cached_reported_and_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 9);
    let model = ModelFamily::Classical {
        method: ClassicalMethod::RandomForest { n_trees: 10, max_depth: None, min_leaf: 2 },
        features: FeatureSet::Tamura,
    };
    let cfg = RunConfig::new(&manifest, dir.path().join("out"), model);
    let first = cmd_extract(&cfg).unwrap();
    let again = cmd_extract(&cfg).unwrap();
    assert_eq!((first.computed, again.computed), (9, 0));
    assert_eq!(first.to_string(), again.to_string());

    let set = cmd_evaluate(&cfg, true).unwrap();
    assert_eq!(set.entries.len(), 2);
    assert_eq!(set.entries[0].0.method, "ZeroR");
    for f in [REPORT_CSV, REPORT_TXT, REPORT_JSON, PLOTS_CSV, RUN_LOG, CONFIG_FILE, HASH_FILE] {
        assert!(cfg.output_dir.join(f).exists(), "{f} missing");
    }
    let table = cmd_report(&cfg.output_dir, false).unwrap();
    assert_eq!(table, set.text_table());
    let v = cmd_verify(&cfg.output_dir, true).unwrap();
    assert_eq!(v, VerifyOutcome { hash_matches: true, replay_matches: Some(true) });

    std::fs::write(cfg.output_dir.join(HASH_FILE), "0".repeat(64)).unwrap();
    assert!(!cmd_verify(&cfg.output_dir, false).unwrap().ok());
}

#[test]
fn predict_refuses_a_representation_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 4);
    let mut settings = NeuralSettings::default();
    settings.train.max_epochs = 1;
    settings.stage_widths = vec![4];
    settings.hidden = vec![8];
    let mut cfg = RunConfig::new(&manifest, dir.path().join("out"), ModelFamily::Neural(settings));
    cfg.samples_per_video = 1;
    let model = cmd_train(&cfg).unwrap();
    let records = motility::dataio::load_manifest(&manifest).unwrap();
    let input = PredictInput::from_record(&records[0]);
    let p = cmd_predict(&cfg, &model, &input).unwrap();
    assert!(p.raw.iter().all(|v| v.is_finite()));
    assert!(p.clamped().iter().all(|v| (0.0..=100.0).contains(v)));

    cfg.representation = RepresentationKind::GreyStack30;
    let err = cmd_predict(&cfg, &model, &input).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn motility(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_motility")).args(args).env("RUST_LOG", "error").output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let manifest = format!("{d}/data/manifest.csv");
    let out = format!("{d}/out");

    assert_eq!(motility(&["evaluate", "--folds", "1"]).status.code(), Some(1));
    assert_eq!(motility(&["evaluate", "--stride", "3"]).status.code(), Some(1));
    assert_eq!(motility(&["evaluate", "--with-concentration"]).status.code(), Some(1));
    assert_eq!(motility(&["prepare", "--manifest", &format!("{d}/missing.csv")]).status.code(), Some(2));

    let prep = motility(&["prepare", "--manifest", &manifest, "--synthetic", "6", "--synthetic-frames", "32"]);
    assert_eq!(prep.status.code(), Some(0), "{}", String::from_utf8_lossy(&prep.stderr));
    assert!(String::from_utf8_lossy(&prep.stdout).contains("6 videos"));

    let eval = motility(&["evaluate", "--manifest", &manifest, "--out", &out, "--method", "zeror"]);
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("ZeroR"));
    assert_eq!(motility(&["verify", "--out", &out]).status.code(), Some(0));
    assert_eq!(motility(&["report", "--out", &format!("{d}/nowhere")]).status.code(), Some(2));
}

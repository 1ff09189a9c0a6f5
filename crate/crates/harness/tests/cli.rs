use std::path::Path;

use equiformer_harness::cli::run;
use equiformer_harness::config::{Overrides, RunFile};
use equiformer_harness::toy::{make_toy_dataset, ToyKind};
use equiformer_harness::train::TrainedModel;
use equiformer::model::Mode;

fn call(args: &[&str]) -> (Result<bool, equiformer::Error>, String) {
    let mut out = Vec::new();
    let r = run(std::iter::once("equiformer").chain(args.iter().copied()), &mut out);
    (r, String::from_utf8(out).unwrap())
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn paths_example_lists_ten_paths() {
    let (r, out) = call(&["audit", "paths", "--in1", "[(2,0),(2,1)]", "--in2", "[(1,0),(1,1)]", "--l-max", "1"]);
    assert!(r.unwrap(), "{out}");
    assert!(out.contains("plan 10 brute force 10"), "{out}");
    assert!(out.contains("all checks passed"));
}

#[test]
fn corrupt_gate_fails_only_channel_count() {
    let (r, out) = call(&["audit", "equivariance", "--corrupt-gate"]);
    assert!(!r.unwrap());
    let failed: Vec<&str> = out.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|l| l.contains("channel_count")), "{out}");
    let (r, _) = call(&["audit", "equivariance"]);
    assert!(r.unwrap());
}

#[test]
fn config_merge_order_is_preset_file_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    write(&path, r#"{"preset":"qm9","mode":"e3","model":{"heads":2},"train":{"seed":5,"lr":1e-3},"out":{"log":"log.csv"}}"#);
    let file = RunFile::load(&path).unwrap();

    let cfg = file.resolve(&Overrides::default()).unwrap();
    assert_eq!(cfg.model.heads, 2);
    assert_eq!(cfg.model.block_count, 6);
    assert_eq!(cfg.model.mode, Mode::E3);
    assert_eq!((cfg.train.seed, cfg.train.lr, cfg.train.batch_size), (5, 1e-3, 128));
    assert_eq!(cfg.out.log.as_deref(), Some(dir.path().join("log.csv").as_path()));

    let cfg = file
        .resolve(&Overrides {
            preset: Some("toy".into()),
            mode: Some(Mode::Se3),
            seed: Some(9),
        })
        .unwrap();
    assert_eq!((cfg.model.heads, cfg.model.block_count, cfg.model.mode), (2, 2, Mode::Se3));
    assert_eq!((cfg.train.seed, cfg.train.batch_size), (9, 5));
}

#[test]
fn unknown_fields_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("top.json", r#"{"presett":"toy"}"#),
        ("model.json", r#"{"model":{"headz":2}}"#),
        ("train.json", r#"{"train":{"learning_rate":1}}"#),
    ] {
        let path = dir.path().join(name);
        write(&path, text);
        let err = RunFile::load(&path).and_then(|f| f.resolve(&Overrides::default()));
        assert!(matches!(err, Err(equiformer::Error::Config(_))), "{name}: {err:?}");
    }
    let (r, _) = call(&["audit", "algebra", "--preset", "nope"]);
    assert!(matches!(r, Err(equiformer::Error::Config(_))));
}

#[test]
fn train_eval_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("frames.xyz");
    equiformer_harness::data::write_xyz(&data, &make_toy_dataset(ToyKind::PairwiseMorse, 6, 3)).unwrap();
    let cfg = dir.path().join("run.json");
    write(
        &cfg,
        r#"{"train":{"epochs":2,"force_weight":1.0},"data":{"train":"frames.xyz","val_frames":2},"out":{"params":"p.json","log":"log.csv"}}"#,
    );
    let (r, out) = call(&["train", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
    assert!(r.unwrap(), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch")).count(), 2);
    assert!(out.contains("val_energy_mae"));
    let params = dir.path().join("p.json");
    let trained = TrainedModel::load(&params).unwrap();
    assert_eq!(trained.store.seed, 1);
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let (r, eval) = call(&["eval", "--params", params.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(r.unwrap());
    let metrics: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let dump = dir.path().join("preds.json");
    let (r, _) = call(&[
        "dump-preds",
        "--params",
        params.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dump.to_str().unwrap(),
    ]);
    assert!(r.unwrap());
    let dumped: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(dumped["metrics"], metrics);
    assert_eq!(dumped["predictions"].as_array().unwrap().len(), 6);
}

#[test]
fn bad_input_is_an_error() {
    let (r, _) = call(&["eval", "--params", "/nonexistent/p.json", "--data", "x.xyz"]);
    assert!(r.is_err());
    let (r, _) = call(&["frobnicate"]);
    assert!(r.is_err());
    let (r, out) = call(&["--help"]);
    assert!(r.unwrap() && out.contains("audit"));
}

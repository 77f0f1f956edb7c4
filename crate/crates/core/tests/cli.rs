mod common;

use std::fs;

use common::{manifest_rerun_mismatches, odebundle, ok, read, setup, TINY_RUN};

#[test]
fn every_command_reruns_identically_from_its_manifest() {
    let dir = setup(TINY_RUN);
    let changed = manifest_rerun_mismatches(dir.path());
    assert!(changed.is_empty(), "{changed:?}");
}

#[test]
fn eval_rows_and_flags() {
    let dir = setup(TINY_RUN);
    let d = dir.path();
    ok(d, &["train", "--config", "run.toml", "--quiet"]);
    ok(d, &["eval", "--config", "run.toml"]);
    let text = String::from_utf8(read(d, "eval.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x0,v0,k,xhat_x,xhat_v,residual_norm,extrapolated"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    // the trial solution reproduces the initial state at t0
    assert_eq!(&first[..6], &["0", "0.25", "-0.5", "1.5", "0.25", "-0.5"]);
    assert_eq!(first[7], "0");
    assert!(lines.next().unwrap().ends_with(",0"));
    // t = 4 lies past the trained window
    assert!(lines.next().unwrap().ends_with(",1"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let short = TINY_RUN.replace("batches = 60", "batches = 40");
    let a = setup(&short);
    ok(a.path(), &["train", "--config", "run.toml", "--quiet"]);
    fs::write(a.path().join("run.toml"), TINY_RUN).unwrap();
    ok(
        a.path(),
        &["train", "--config", "run.toml", "--quiet", "--resume"],
    );

    let b = setup(TINY_RUN);
    ok(b.path(), &["train", "--config", "run.toml", "--quiet"]);
    for f in ["checkpoint.ckpt", "loss.csv"] {
        assert!(
            read(a.path(), f) == read(b.path(), f),
            "{f} differs after resume"
        );
    }
}

#[test]
fn seed_flag_and_threads_flag() {
    let a = setup(TINY_RUN);
    ok(
        a.path(),
        &["train", "--config", "run.toml", "--quiet", "--seed", "9"],
    );
    let b = setup(&TINY_RUN.replace("seed = 5", "seed = 9"));
    ok(
        b.path(),
        &["train", "--config", "run.toml", "--quiet", "--threads", "2"],
    );
    assert!(read(a.path(), "checkpoint.ckpt") == read(b.path(), "checkpoint.ckpt"));
    let resolved = String::from_utf8(read(a.path(), "config.resolved")).unwrap();
    assert!(resolved.contains("seed = 9"));
}

#[test]
fn exit_codes() {
    let dir = setup(TINY_RUN);
    let d = dir.path();
    // missing checkpoint is an I/O failure
    let (code, _, err) = odebundle(d, &["eval", "--config", "run.toml"]);
    assert_eq!(code, 4, "{err}");
    // field-level configuration errors
    fs::write(
        d.join("bad.toml"),
        TINY_RUN.replace("batch_size = 32", "batch_size = 0"),
    )
    .unwrap();
    let (code, _, err) = odebundle(d, &["train", "--config", "bad.toml"]);
    assert_eq!(code, 2);
    assert!(err.contains("training.batch_size"), "{err}");
    let (code, _, _) = odebundle(d, &["eval", "--config", "run.toml", "--resume"]);
    assert_eq!(code, 2);
    let (code, _, _) = odebundle(d, &["frobnicate", "--config", "run.toml"]);
    assert_eq!(code, 2);
    let (code, _, _) = odebundle(d, &["train", "--config", "missing.toml"]);
    assert_eq!(code, 4);
    // a checkpoint trained on another domain is rejected
    ok(d, &["train", "--config", "run.toml", "--quiet"]);
    fs::write(
        d.join("other.toml"),
        TINY_RUN.replace("tf = 3.0", "tf = 2.0"),
    )
    .unwrap();
    let (code, _, err) = odebundle(d, &["eval", "--config", "other.toml"]);
    assert_eq!(code, 2);
    assert!(err.contains("bundle"), "{err}");
    // diverging training is a numerical failure
    fs::write(
        d.join("hot.toml"),
        TINY_RUN
            .replace("lr = 1e-2", "lr = 1e300")
            .replace("output_dir = \"out\"", "output_dir = \"hot\""),
    )
    .unwrap();
    let (code, _, err) = odebundle(d, &["train", "--config", "hot.toml", "--quiet"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn inspect_reports_checkpoint() {
    let dir = setup(TINY_RUN);
    let d = dir.path();
    let before = ok(d, &["inspect", "--config", "run.toml"]);
    assert!(before.contains("no checkpoint"));
    assert!(before.contains("[\"x0\", \"v0\", \"k\"]"));
    ok(d, &["train", "--config", "run.toml", "--quiet"]);
    let after = ok(d, &["inspect", "--config", "run.toml"]);
    assert!(after.contains("60 batches trained"), "{after}");
}

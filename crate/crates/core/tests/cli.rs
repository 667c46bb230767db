use std::path::Path;
use std::process::{Command, Output};

fn phonoprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phonoprobe"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn speed_up(config: &Path) {
    let text = std::fs::read_to_string(config).unwrap();
    let text = text
        .replace("outer_folds = 10", "outer_folds = 4")
        .replace("inner_folds = 5", "inner_folds = 3");
    std::fs::write(config, text).unwrap();
}

#[test]
fn synth_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let listed = ok(&phonoprobe(
        &[
            "synth",
            "--out",
            "data",
            "--words-per-type",
            "8",
            "--layers",
            "-1,1",
            "--seed",
            "3",
        ],
        d,
    ));
    assert!(listed.contains("synthetic_layer-1.prst"));
    speed_up(&d.join("data/experiment.toml"));

    let written = ok(&phonoprobe(
        &["run", "--config", "data/experiment.toml", "--out", "res", "--jobs", "2"],
        d,
    ));
    assert!(written.lines().any(|l| l.ends_with("results.csv")));
    let csv = std::fs::read_to_string(d.join("res/results.csv")).unwrap();
    assert!(csv.starts_with("model_id,layer_id,contrast,kind,place,dim,"));
    assert!(csv.contains("synthetic,-1,phonemic,phonemic,mean,16,"));

    std::fs::remove_file(d.join("res/phonemic.svg")).unwrap();
    ok(&phonoprobe(&["report", "--results", "res/results.csv"], d));
    let svg = std::fs::read_to_string(d.join("res/phonemic.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let targets = ok(&phonoprobe(&["match", "--config", "data/experiment.toml"], d));
    assert!(targets.starts_with("contrast,utterance_id,position,phone,class,start_s,end_s"));
    assert!(targets.contains("phonemic/labial,"));

    ok(&phonoprobe(
        &["pool", "--config", "data/experiment.toml", "--out", "pooled"],
        d,
    ));
    assert!(d.join("pooled/pooled_synthetic_layer1.csv").exists());
}

#[test]
fn select_dim_reports_d_star() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&phonoprobe(
        &[
            "synth",
            "--out",
            ".",
            "--words-per-type",
            "8",
            "--planted-dim",
            "2",
            "--separation",
            "2",
        ],
        d,
    ));
    speed_up(&d.join("experiment.toml"));
    let out = ok(&phonoprobe(&["select-dim", "--config", "experiment.toml"], d));
    assert!(out.starts_with("synthetic\td*=2\t"), "{out}");
    assert!(d.join("results/dim_selection.csv").exists());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = phonoprobe(&["run", "--config", "nope.toml"], d);
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(d.join("bad.toml"), "alignments = 3\n").unwrap();
    let bad = phonoprobe(&["run", "--config", "bad.toml"], d);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("config"));

    ok(&phonoprobe(&["synth", "--out", "s", "--words-per-type", "3"], d));
    std::fs::write(d.join("s/alignments.tsv"), "utterance_id\tword_form\n").unwrap();
    let corpus = phonoprobe(&["run", "--config", "s/experiment.toml"], d);
    assert_eq!(corpus.status.code(), Some(4));
}

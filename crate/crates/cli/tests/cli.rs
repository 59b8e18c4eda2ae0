use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taskaware::data::SynthConfig;
use taskaware::evaluation::{parse_records, reports_to_records};
use taskaware::models::Variant;
use taskaware_cli::commands::{EPOCHS_FILE, RECORDS_FILE, REPORT_FILE, RUNS_FILE};
use taskaware_cli::{cmd_report, cmd_synth, ExperimentConfig, SynthManifest};

const BIN: &str = env!("CARGO_BIN_EXE_taskaware");

fn taskaware(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("TASKAWARE_OUTPUT_DIR")
        .env_remove("TASKAWARE_THREADS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic data plus a tiny config whose header is `header`.
fn setup(dir: &Path, header: &str) -> PathBuf {
    cmd_synth(&SynthConfig::new(40, 0.5, 1), dir).unwrap();
    let manifest = fs::read_to_string(dir.join("manifest.toml")).unwrap();
    let tasks = &manifest[manifest.find("[[tasks]]").unwrap()..];
    let text = format!(
        "{header}\n\n[encoder]\nhidden = 4\nlayers = 1\nheads = 1\nmax_len = 16\nffn_mult = 1\n\n\
         [optim]\nepochs = 2\nbatch_size = 16\n\n{tasks}"
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

const CV_TE: &str = "variant = \"mtl-te\"\nmode = \"cv\"\nk = 3\nseeds = [1]\nteb_units = 2";

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), CV_TE);
    let out = taskaware(&["run", "experiment.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let out_dir = dir.path().join("output");
    let table = fs::read_to_string(out_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.contains("MTL-TE"));
    let records = parse_records(&fs::read_to_string(out_dir.join(RECORDS_FILE)).unwrap()).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].scores.len(), 2);
    let epochs = fs::read_to_string(out_dir.join(EPOCHS_FILE)).unwrap();
    assert_eq!(epochs.lines().count(), 3 * 2 * 2);
    let first: serde_json::Value = serde_json::from_str(epochs.lines().next().unwrap()).unwrap();
    for key in ["fold", "seed", "epoch", "task", "metric", "value", "lr"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert_eq!(
        fs::read_to_string(out_dir.join(RUNS_FILE))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let ckpt = out_dir.join("checkpoints/fold-0-seed-1/task_b");
    for f in [
        "model.json",
        "encoder.params",
        "teb.params",
        "head-1.params",
        "vocab.txt",
    ] {
        assert!(ckpt.join(f).is_file(), "{f}");
    }
    let (model, _) = taskaware::models::Model::load(&ckpt).unwrap();
    assert_eq!(model.variant(), Variant::MtlTe);
}

#[test]
fn traintest_mode_and_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(
        dir.path(),
        "variant = \"mtl\"\nmode = \"traintest\"\nseeds = [1, 2]\ncheckpoints = \"none\"",
    );
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace(
            "data = \"task_a.tsv\"",
            "train = \"task_a.tsv\"\ntest = \"task_a.tsv\"",
        )
        .replace(
            "data = \"task_b.tsv\"",
            "train = \"task_b.tsv\"\ntest = \"task_b.tsv\"",
        );
    fs::write(&config, text).unwrap();
    let target = dir.path().join("elsewhere");
    let out = Command::new(BIN)
        .args(["run", "experiment.toml"])
        .current_dir(dir.path())
        .env("TASKAWARE_OUTPUT_DIR", &target)
        .env("TASKAWARE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let records = parse_records(&fs::read_to_string(target.join(RECORDS_FILE)).unwrap()).unwrap();
    assert_eq!(records[0].mode, "traintest");
    assert_eq!(records[0].scores[0].n, 2);
    assert!(!dir.path().join("output").exists());
    assert!(!target.join("checkpoints").exists());
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let cases: [(&str, &str, &str); 6] = [
        (
            "variant = \"stl\"\nmode = \"cv\"\nk = 3\nseeds = [1]",
            "",
            "stl needs exactly one task",
        ),
        (
            "variant = \"mtl-te\"\nmode = \"cv\"\nk = 3\nseeds = [1]",
            "",
            "teb_units",
        ),
        ("variant = \"mtl\"\nmode = \"cv\"\nseeds = [1]", "", "`k`"),
        (
            "variant = \"mtl\"\nmode = \"cv\"\nk = 1\nseeds = [1]",
            "",
            "`k`",
        ),
        (
            "variant = \"mtl\"\nmode = \"cv\"\nk = 3\nseeds = [1]",
            "task_b.tsv",
            "tasks[1].data",
        ),
        (
            "variant = \"mtl\"\nmode = \"cv\"\nk = 3\nseeds = [1]\nbogus = 1",
            "",
            "bogus",
        ),
    ];
    for (header, remove, needle) in cases {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path(), header);
        if !remove.is_empty() {
            fs::remove_file(dir.path().join(remove)).unwrap();
        }
        let out = taskaware(&["run", "experiment.toml"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{header}: {}", stderr(&out));
        assert!(stderr(&out).contains(needle), "{needle}: {}", stderr(&out));
        assert!(!dir.path().join("output").exists());
    }
    let dir = tempfile::tempdir().unwrap();
    let out = taskaware(&["run", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.toml"));
    let out = taskaware(&["bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), CV_TE);
    let out = Command::new(BIN)
        .args(["run", "experiment.toml"])
        .current_dir(dir.path())
        .env("TASKAWARE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("TASKAWARE_THREADS"));
}

#[test]
fn too_few_samples_for_k_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    setup(
        dir.path(),
        "variant = \"mtl\"\nmode = \"cv\"\nk = 30\nseeds = [1]",
    );
    let out = taskaware(&["run", "experiment.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("needs at least 60"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn synth_is_deterministic_and_manifest_round_trips() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "synth",
        "--n-per-task",
        "100",
        "--conflict",
        "0.25",
        "--seed",
        "9",
        "--out",
    ];
    for d in [a.path(), b.path()] {
        let out = Command::new(BIN).args(args).arg(d).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in ["task_a.tsv", "task_b.tsv", "manifest.toml"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
    for f in ["task_a.tsv", "task_b.tsv"] {
        let rows = fs::read_to_string(a.path().join(f))
            .unwrap()
            .lines()
            .count();
        assert_eq!(rows, 101);
    }
    let manifest: SynthManifest =
        toml::from_str(&fs::read_to_string(a.path().join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(
        manifest.generator,
        SynthConfig {
            vocab_size: taskaware::data::DEFAULT_VOCAB,
            ..SynthConfig::new(100, 0.25, 9)
        }
    );
    assert_eq!(manifest.tasks.len(), 2);

    let out = Command::new(BIN)
        .args(["synth", "--conflict", "2", "--out"])
        .arg(a.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("conflict"));
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = taskaware(&["gradcheck"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("model/mtl-te") && text.contains("0 failed"),
        "{text}"
    );
    let out = taskaware(
        &["gradcheck", "--inject-fault", "relu-backward"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let help = taskaware(&["gradcheck", "--help"], dir.path());
    assert!(!String::from_utf8_lossy(&help.stdout).contains("inject"));
}

#[test]
fn report_orders_variants_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), CV_TE);
    let mut merged = Vec::new();
    for v in [Variant::MtlTe, Variant::Stl, Variant::MtlTai, Variant::Mtl] {
        let text = fs::read_to_string(dir.path().join("experiment.toml")).unwrap();
        let header_end = text.find("\n\n").unwrap();
        let mut header = format!(
            "variant = \"{}\"\nmode = \"cv\"\nk = 3\nseeds = [1]\ncheckpoints = \"none\"",
            v.key()
        );
        if v == Variant::MtlTe {
            header.push_str("\nteb_units = 1");
        }
        let mut body = text[header_end..].to_string();
        if v == Variant::Stl {
            body.truncate(body.rfind("[[tasks]]").unwrap());
        }
        let config: ExperimentConfig = toml::from_str(&format!("{header}{body}")).unwrap();
        let experiment = config.resolve(dir.path(), |_| None).unwrap();
        let experiment = taskaware_cli::Experiment {
            output_dir: dir.path().join(v.key()),
            ..experiment
        };
        let summary = taskaware_cli::run_experiment(&experiment).unwrap();
        merged.push(summary.report);
    }
    let path = dir.path().join("all.jsonl");
    fs::write(&path, reports_to_records(&merged)).unwrap();
    let table = cmd_report(&[path]).unwrap();
    let labels: Vec<&str> = table
        .lines()
        .skip(2)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(labels, ["STL", "MTL", "MTL-TAI", "MTL-TE"], "{table}");

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = taskaware(&["report", "empty.jsonl"], dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "no records\n");

    fs::write(&empty, "not json\n").unwrap();
    let out = taskaware(&["report", "empty.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("empty.jsonl") && stderr(&out).contains("line 1"));
}

#[test]
fn config_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let path = setup(dir.path(), CV_TE);
    let config: ExperimentConfig = toml::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(
        ExperimentConfig::from_toml(&config.to_toml()).unwrap(),
        config
    );
}

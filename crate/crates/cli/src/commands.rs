//! The four subcommands. Each returns its printable output; `main` owns
//! stdout and exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use taskaware::checks::gradcheck_suite;
use taskaware::data::{synthesize_tasks, write_tsv, SynthConfig};
use taskaware::evaluation::{
    format_table, parse_records, reports_to_records, run_cv, run_traintest, ExperimentResult,
    MetricReport,
};
use taskaware::tensor::Fault;

use crate::config::{Experiment, ExperimentConfig, ExperimentData, TaskSection};
use crate::CliError;

pub const REPORT_FILE: &str = "report.txt";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const RUNS_FILE: &str = "runs.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SYNTH_MANIFEST: &str = "manifest.toml";

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// What `run` produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub report: MetricReport,
    pub table: String,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    fold: Option<usize>,
    seed: u64,
    epoch: usize,
    task: &'a str,
    metric: &'a str,
    value: f64,
    lr: f64,
}

#[derive(Serialize)]
struct RunLine<'a> {
    fold: Option<usize>,
    seed: u64,
    scores: &'a [f64],
    best_epochs: &'a [usize],
}

/// Runs the experiment described by the config at `path` and writes the
/// table, records, per-epoch log, per-run scores and checkpoints under the
/// output directory.
pub fn cmd_run(path: &Path) -> Result<RunSummary, CliError> {
    let experiment = ExperimentConfig::load(path)?;
    run_experiment(&experiment)
}

pub fn run_experiment(experiment: &Experiment) -> Result<RunSummary, CliError> {
    let dir = &experiment.output_dir;
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = experiment.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(runtime)?;
    let spec = &experiment.spec;
    let result: ExperimentResult = pool
        .install(|| match &experiment.data {
            ExperimentData::Cv { k, samples } => run_cv(spec, samples, *k),
            ExperimentData::Traintest { train, test } => run_traintest(spec, train, test),
        })
        .map_err(runtime)?;

    let table = format_table(std::slice::from_ref(&result.report));
    write(&dir.join(REPORT_FILE), &table)?;
    write(
        &dir.join(RECORDS_FILE),
        &reports_to_records(std::slice::from_ref(&result.report)),
    )?;
    let mut epochs = String::new();
    let mut runs = String::new();
    for run in &result.runs {
        for r in &run.history {
            let line = EpochLine {
                fold: run.fold,
                seed: run.seed,
                epoch: r.epoch,
                task: &r.task,
                metric: &r.metric,
                value: r.value,
                lr: r.lr,
            };
            epochs.push_str(&serde_json::to_string(&line).map_err(runtime)?);
            epochs.push('\n');
        }
        let line = RunLine {
            fold: run.fold,
            seed: run.seed,
            scores: &run.scores,
            best_epochs: &run.best_epochs,
        };
        runs.push_str(&serde_json::to_string(&line).map_err(runtime)?);
        runs.push('\n');
        for c in &run.checkpoints {
            let label = match run.fold {
                Some(f) => format!("fold-{f}-seed-{}", run.seed),
                None => format!("seed-{}", run.seed),
            };
            let target = dir.join(CHECKPOINT_DIR).join(label).join(&c.task);
            c.model.save(&target, &c.vocab).map_err(runtime)?;
        }
    }
    write(&dir.join(EPOCHS_FILE), &epochs)?;
    write(&dir.join(RUNS_FILE), &runs)?;
    Ok(RunSummary {
        output_dir: dir.clone(),
        report: result.report,
        table,
    })
}

/// Generator parameters and task descriptors written next to the
/// synthetic TSV files. The `tasks` entries can be pasted into a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub generator: SynthConfig,
    pub tasks: Vec<TaskSection>,
}

/// Writes `task_a.tsv`, `task_b.tsv` and `manifest.toml` into `out_dir`.
pub fn cmd_synth(config: &SynthConfig, out_dir: &Path) -> Result<SynthManifest, CliError> {
    if config.seed > i64::MAX as u64 {
        return Err(CliError::Config(format!(
            "--seed must be at most {}, got {}",
            i64::MAX,
            config.seed
        )));
    }
    let corpus = synthesize_tasks(config).map_err(|e| CliError::Config(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    let mut tasks = Vec::new();
    for (task, samples) in corpus.tasks.iter().zip(&corpus.samples) {
        let file = format!("{}.tsv", task.name);
        write_tsv(&out_dir.join(&file), task, samples).map_err(runtime)?;
        tasks.push(TaskSection {
            name: task.name.clone(),
            description: task.description.clone(),
            labels: task.labels.clone(),
            positive_label: task.positive_label.clone(),
            metric: task.metric,
            data: Some(PathBuf::from(file)),
            train: None,
            test: None,
            language: None,
        });
    }
    let manifest = SynthManifest {
        generator: config.clone(),
        tasks,
    };
    let text = toml::to_string(&manifest).map_err(runtime)?;
    write(&out_dir.join(SYNTH_MANIFEST), &text)?;
    Ok(manifest)
}

/// Runs the gradient-check suite. Returns the printable summary and
/// whether every check met its tolerance.
pub fn cmd_gradcheck(fault: Option<Fault>) -> Result<(String, bool), CliError> {
    let start = Instant::now();
    let results = gradcheck_suite(fault).map_err(runtime)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in &results {
        let _ = writeln!(
            out,
            "{:width$}  max_rel_err {:.3e}  tol {:.0e}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(
        out,
        "{} checks, {failed} failed, {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    Ok((out, failed == 0))
}

/// Formats the records in `paths` as one comparison table.
pub fn cmd_report(paths: &[PathBuf]) -> Result<String, CliError> {
    let mut reports = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed = parse_records(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        reports.extend(parsed);
    }
    Ok(format_table(&reports))
}

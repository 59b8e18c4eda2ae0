use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ci::ci95_t;
use crate::data::{
    encode_examples, holdout_split, kfold, token_streams, tokenize, Example, InputMode, Sample,
    TaskSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, TaskRegistry, Variant};
use crate::seeded_rng;
use crate::training::{
    score_examples, train_joint, EpochRecord, OptimConfig, SchedulePolicy, TaskData,
};

/// Share of each training set held out for best-epoch selection.
pub const VALID_FRACTION: f64 = 0.1;

/// Which trained models an experiment hands back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    None,
    /// Only the first run (first fold, first seed).
    #[default]
    First,
    All,
}

/// Everything needed to train and score one variant on one task combination.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub tasks: Vec<TaskSpec>,
    /// `encoder.vocab_size` is replaced by the size of each run's vocabulary.
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub schedule: SchedulePolicy,
    pub seeds: Vec<u64>,
    pub min_count: usize,
    pub checkpoints: CheckpointPolicy,
}

impl ExperimentSpec {
    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    /// Checks everything that does not depend on the data, so a spec that
    /// validates cannot fail on configuration later.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        TaskRegistry::new(self.tasks.clone())?;
        if self.variant().input_mode() == InputMode::TaskAware {
            let max_len = self.model.encoder.max_len;
            for task in &self.tasks {
                let n = tokenize(&task.description).len();
                if n + 1 >= max_len {
                    return Err(Error::Config(format!(
                        "task {:?}: description has {n} tokens, leaving no room for text within max_len {max_len}",
                        task.name
                    )));
                }
            }
        }
        self.optim.validate()?;
        let probe = ModelConfig {
            encoder: crate::encoder::EncoderConfig {
                vocab_size: 2,
                ..self.model.encoder.clone()
            },
            ..self.model.clone()
        };
        probe.validate(self.tasks.len())
    }
}

/// A trained model with the vocabulary its inputs were encoded with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub task: String,
    pub model: Model,
    pub vocab: Vocabulary,
}

/// One training run: a fold (cross-validation only) and a seed.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub fold: Option<usize>,
    pub seed: u64,
    /// Test score per task, registry order.
    pub scores: Vec<f64>,
    pub best_epochs: Vec<usize>,
    pub history: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Point estimate and 95% interval of one task's metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub half_width: f64,
    /// Number of scores the interval is computed over.
    pub n: usize,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: Variant,
    /// Task combination, registry order.
    pub tasks: Vec<String>,
    /// `cv` (interval over folds) or `traintest` (interval over seeds).
    pub mode: String,
    pub scores: Vec<TaskScore>,
}

/// Result of [`run_cv`] or [`run_traintest`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub report: MetricReport,
    pub runs: Vec<RunResult>,
}

/// Trains on `train` (one sample list per task) and scores each task's
/// best-epoch model on `test`. The vocabulary and the validation split
/// come from `train` only.
pub fn run_single(
    spec: &ExperimentSpec,
    train: &[Vec<Sample>],
    test: &[Vec<Sample>],
    seed: u64,
    keep: bool,
) -> Result<RunResult> {
    let mode = spec.variant().input_mode();
    let max_len = spec.model.encoder.max_len;
    let mut fit_streams = Vec::new();
    let mut valid_streams = Vec::new();
    let mut test_streams = Vec::new();
    let mut splits = Vec::new();
    for (t, task) in spec.tasks.iter().enumerate() {
        let (fit, valid) = holdout_split(
            &train[t],
            VALID_FRACTION,
            seed ^ (t as u64).wrapping_mul(0x9E37_79B9),
        )?;
        fit_streams.push(token_streams(&fit, task, mode, max_len)?);
        valid_streams.push(token_streams(&valid, task, mode, max_len)?);
        test_streams.push(token_streams(&test[t], task, mode, max_len)?);
        splits.push((fit, valid));
    }
    let vocab = Vocabulary::build(
        fit_streams
            .iter()
            .chain(&valid_streams)
            .flatten()
            .map(Vec::as_slice),
        spec.min_count,
    )?;
    let mut data = TaskData {
        train: Vec::new(),
        valid: Vec::new(),
    };
    let mut test_examples: Vec<Vec<Example>> = Vec::new();
    for (t, (fit, valid)) in splits.iter().enumerate() {
        data.train
            .push(encode_examples(fit, &fit_streams[t], &vocab, t));
        data.valid
            .push(encode_examples(valid, &valid_streams[t], &vocab, t));
        test_examples.push(encode_examples(&test[t], &test_streams[t], &vocab, t));
    }
    let mut config = spec.model.clone();
    config.encoder.vocab_size = vocab.len();
    let registry = TaskRegistry::new(spec.tasks.clone())?;
    let model = Model::new(config, registry, &mut seeded_rng(seed))?;
    let outcome = train_joint(
        model,
        &data,
        &spec.optim,
        spec.schedule,
        seed.wrapping_add(1),
    )?;
    let mut scores = Vec::with_capacity(spec.tasks.len());
    let mut checkpoints = Vec::new();
    for (t, examples) in test_examples.iter().enumerate() {
        let best = outcome.best_model(t)?;
        scores.push(score_examples(&best, examples, t)?);
        if keep {
            checkpoints.push(Checkpoint {
                task: spec.tasks[t].name.clone(),
                model: best,
                vocab: vocab.clone(),
            });
        }
    }
    Ok(RunResult {
        fold: None,
        seed,
        scores,
        best_epochs: outcome.best_epochs,
        history: outcome.history,
        checkpoints,
    })
}

fn check_samples(
    spec: &ExperimentSpec,
    sets: &[Vec<Sample>],
    what: &str,
    min: usize,
) -> Result<()> {
    if sets.len() != spec.tasks.len() {
        return Err(Error::invalid(format!(
            "{} tasks but {} {what} sets",
            spec.tasks.len(),
            sets.len()
        )));
    }
    for (task, set) in spec.tasks.iter().zip(sets) {
        if set.len() < min {
            return Err(Error::Config(format!(
                "task {:?} has {} {what} samples, needs at least {min}",
                task.name,
                set.len()
            )));
        }
    }
    Ok(())
}

/// Everything [`run_cv`] checks before training: the spec, `k >= 2`, and
/// at least `2k` samples per task so every training split can spare a
/// validation example.
pub fn check_cv_data(spec: &ExperimentSpec, samples: &[Vec<Sample>], k: usize) -> Result<()> {
    spec.validate()?;
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    check_samples(spec, samples, "", 2 * k)
}

/// Everything [`run_traintest`] checks before training: the spec, at least
/// two seeds, two training samples and one test sample per task.
pub fn check_traintest_data(
    spec: &ExperimentSpec,
    train: &[Vec<Sample>],
    test: &[Vec<Sample>],
) -> Result<()> {
    spec.validate()?;
    if spec.seeds.len() < 2 {
        return Err(Error::Config(
            "traintest mode needs at least two seeds for its interval".into(),
        ));
    }
    check_samples(spec, train, "training", 2)?;
    check_samples(spec, test, "test", 1)
}

fn keep_run(policy: CheckpointPolicy, index: usize) -> bool {
    match policy {
        CheckpointPolicy::None => false,
        CheckpointPolicy::First => index == 0,
        CheckpointPolicy::All => true,
    }
}

fn summarize(spec: &ExperimentSpec, mode: &str, per_task: Vec<Vec<f64>>) -> Result<MetricReport> {
    let scores = spec
        .tasks
        .iter()
        .zip(per_task)
        .map(|(task, scores)| {
            let (mean, half_width) = ci95_t(&scores)?;
            Ok(TaskScore {
                task: task.name.clone(),
                metric: task.metric.name().to_string(),
                mean,
                half_width,
                n: scores.len(),
                scores,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        variant: spec.variant(),
        tasks: spec.tasks.iter().map(|t| t.name.clone()).collect(),
        mode: mode.to_string(),
        scores,
    })
}

/// k-fold cross-validation over the pooled samples of each task. Every task
/// is split with the same seed (the first of `spec.seeds`); each fold is
/// trained once per seed, the fold's score is the seed mean, and the
/// interval is taken over the `k` fold scores.
pub fn run_cv(
    spec: &ExperimentSpec,
    samples: &[Vec<Sample>],
    k: usize,
) -> Result<ExperimentResult> {
    check_cv_data(spec, samples, k)?;
    let split_seed = spec.seeds[0];
    let folds: Vec<Vec<Vec<Sample>>> = samples
        .iter()
        .map(|s| kfold(s, k, split_seed))
        .collect::<Result<_>>()?;
    let units: Vec<(usize, u64)> = (0..k)
        .flat_map(|f| spec.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let runs = units
        .par_iter()
        .enumerate()
        .map(|(i, &(f, seed))| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for task_folds in &folds {
                test.push(task_folds[f].clone());
                train.push(
                    task_folds
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != f)
                        .flat_map(|(_, fold)| fold.iter().cloned())
                        .collect(),
                );
            }
            let run = run_single(spec, &train, &test, seed, keep_run(spec.checkpoints, i))?;
            Ok(RunResult {
                fold: Some(f),
                ..run
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_seeds = spec.seeds.len() as f64;
    let per_task = (0..spec.tasks.len())
        .map(|t| {
            (0..k)
                .map(|f| {
                    runs.iter()
                        .filter(|r| r.fold == Some(f))
                        .map(|r| r.scores[t])
                        .sum::<f64>()
                        / n_seeds
                })
                .collect()
        })
        .collect();
    Ok(ExperimentResult {
        report: summarize(spec, "cv", per_task)?,
        runs,
    })
}

/// Trains once per seed on `train`, scores on `test`, and takes the
/// interval over the per-seed scores (at least two seeds).
pub fn run_traintest(
    spec: &ExperimentSpec,
    train: &[Vec<Sample>],
    test: &[Vec<Sample>],
) -> Result<ExperimentResult> {
    check_traintest_data(spec, train, test)?;
    let runs = spec
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_single(spec, train, test, seed, keep_run(spec.checkpoints, i)))
        .collect::<Result<Vec<_>>>()?;
    let per_task = (0..spec.tasks.len())
        .map(|t| runs.iter().map(|r| r.scores[t]).collect())
        .collect();
    Ok(ExperimentResult {
        report: summarize(spec, "traintest", per_task)?,
        runs,
    })
}

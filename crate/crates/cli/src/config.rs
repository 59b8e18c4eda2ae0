//! Experiment configuration files.
//!
//! A config is a TOML document. Relative data paths and `output_dir` are
//! resolved against the directory containing the config file.
//!
//! ```toml
//! variant = "mtl-te"          # stl | mtl | mtl-tai | mtl-te
//! mode = "cv"                 # cv | traintest
//! k = 5                       # cv only
//! seeds = [1, 2, 3]
//! teb_units = 1               # mtl-te only, 1 to 3
//! schedule = "round_robin"    # round_robin | proportional
//! dropout = 0.1
//! min_count = 1
//! checkpoints = "first"       # none | first | all
//! output_dir = "runs/mtl-te"
//! threads = 4
//!
//! [encoder]
//! hidden = 64
//! layers = 2
//! heads = 2
//! max_len = 64
//! ffn_mult = 4
//!
//! [optim]
//! lr_peak = 1e-3
//! epochs = 15
//! batch_size = 64
//!
//! [[tasks]]
//! name = "task_a"
//! description = "first task"
//! labels = ["neg", "pos"]
//! positive_label = "pos"
//! metric = "accuracy"         # accuracy | f1_positive | f1_macro
//! data = "task_a.tsv"         # cv; traintest uses `train` and `test`
//! language = "es"             # rows kept from files with a language column; "*" keeps all
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskaware::data::{load_tsv, Sample, TaskSpec, TsvSchema};
use taskaware::encoder::EncoderConfig;
use taskaware::evaluation::{
    check_cv_data, check_traintest_data, CheckpointPolicy, ExperimentSpec, Metric,
};
use taskaware::models::{ModelConfig, Variant};
use taskaware::training::{OptimConfig, SchedulePolicy};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "TASKAWARE_OUTPUT_DIR";
pub const THREADS_ENV: &str = "TASKAWARE_THREADS";
const DEFAULT_OUTPUT_DIR: &str = "output";
const DEFAULT_LANGUAGE: &str = "es";
const ANY_LANGUAGE: &str = "*";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cv,
    Traintest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teb_units: Option<usize>,
    #[serde(default)]
    pub schedule: SchedulePolicy,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub checkpoints: CheckpointPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub optim: OptimConfig,
    pub tasks: Vec<TaskSection>,
}

fn default_dropout() -> f64 {
    0.1
}

fn default_min_count() -> usize {
    1
}

/// Encoder shape; the vocabulary size comes from the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            hidden: d.hidden,
            layers: d.layers,
            heads: d.heads,
            max_len: d.max_len,
            ffn_mult: d.ffn_mult,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    pub description: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

/// Samples of every task, shaped for the configured mode.
#[derive(Clone, Debug)]
pub enum ExperimentData {
    Cv {
        k: usize,
        samples: Vec<Vec<Sample>>,
    },
    Traintest {
        train: Vec<Vec<Sample>>,
        test: Vec<Vec<Sample>>,
    },
}

/// A validated config with its data loaded.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub data: ExperimentData,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

fn field(name: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("config field `{name}`: {message}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads and validates `path`, loading every data file. Environment
    /// overrides for the output directory and thread count apply here.
    pub fn load(path: &Path) -> Result<Experiment, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base, |name| std::env::var(name).ok())
    }

    fn task_specs(&self) -> Result<Vec<TaskSpec>, CliError> {
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let labels: Vec<&str> = t.labels.iter().map(String::as_str).collect();
                TaskSpec::new(
                    t.name.clone(),
                    t.description.clone(),
                    &labels,
                    t.positive_label.as_deref(),
                    t.metric,
                )
                .map_err(|e| field(&format!("tasks[{i}]"), e))
            })
            .collect()
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            encoder: EncoderConfig {
                vocab_size: 0,
                hidden: self.encoder.hidden,
                layers: self.encoder.layers,
                heads: self.encoder.heads,
                max_len: self.encoder.max_len,
                ffn_mult: self.encoder.ffn_mult,
            },
            teb_units: self.teb_units,
            dropout: self.dropout,
        }
    }

    /// Validates against `base` (the config's directory) with environment
    /// lookups supplied by `env`.
    pub fn resolve(
        &self,
        base: &Path,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Experiment, CliError> {
        if self.tasks.is_empty() {
            return Err(field("tasks", "at least one task is required"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        match (self.mode, self.k) {
            (Mode::Cv, None) => return Err(field("k", "cv mode requires k")),
            (Mode::Cv, Some(k)) if k < 2 => {
                return Err(field("k", format!("must be at least 2, got {k}")))
            }
            (Mode::Traintest, Some(_)) => {
                return Err(field("k", "only valid in cv mode"));
            }
            _ => {}
        }
        if self.min_count == 0 {
            return Err(field("min_count", "must be at least 1"));
        }
        let threads = match env(THREADS_ENV) {
            Some(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| {
                        CliError::Config(format!(
                    "environment variable {THREADS_ENV}: expected a positive integer, got {v:?}"
                ))
                    })?,
            ),
            None => self.threads,
        };
        if threads == Some(0) {
            return Err(field("threads", "must be positive"));
        }
        let tasks = self.task_specs()?;
        let spec = ExperimentSpec {
            tasks,
            model: self.model_config(),
            optim: self.optim.clone(),
            schedule: self.schedule,
            seeds: self.seeds.clone(),
            min_count: self.min_count,
            checkpoints: self.checkpoints,
        };
        spec.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let data = self.load_data(base, &spec.tasks)?;
        match &data {
            ExperimentData::Cv { k, samples } => check_cv_data(&spec, samples, *k),
            ExperimentData::Traintest { train, test } => check_traintest_data(&spec, train, test),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        let output_dir = match env(OUTPUT_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => base.join(
                self.output_dir
                    .clone()
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            ),
        };
        Ok(Experiment {
            spec,
            data,
            output_dir,
            threads,
        })
    }

    fn load_data(&self, base: &Path, specs: &[TaskSpec]) -> Result<ExperimentData, CliError> {
        let mut cv = Vec::new();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, (t, spec)) in self.tasks.iter().zip(specs).enumerate() {
            let schema = TsvSchema {
                language: match t.language.as_deref() {
                    None => Some(DEFAULT_LANGUAGE.to_string()),
                    Some(ANY_LANGUAGE) => None,
                    Some(code) => Some(code.to_string()),
                },
            };
            let load = |key: &str, p: &Option<PathBuf>| -> Result<Vec<Sample>, CliError> {
                let name = format!("tasks[{i}].{key}");
                let p = p.as_ref().ok_or_else(|| {
                    field(&name, format!("required in {} mode", self.mode_name()))
                })?;
                let path = base.join(p);
                if !path.is_file() {
                    return Err(field(&name, format!("file not found: {}", path.display())));
                }
                load_tsv(&path, spec, &schema).map_err(|e| field(&name, e))
            };
            let forbid = |key: &str, p: &Option<PathBuf>| {
                if p.is_some() {
                    Err(field(
                        &format!("tasks[{i}].{key}"),
                        format!("not used in {} mode", self.mode_name()),
                    ))
                } else {
                    Ok(())
                }
            };
            match self.mode {
                Mode::Cv => {
                    forbid("train", &t.train)?;
                    forbid("test", &t.test)?;
                    cv.push(load("data", &t.data)?);
                }
                Mode::Traintest => {
                    forbid("data", &t.data)?;
                    train.push(load("train", &t.train)?);
                    test.push(load("test", &t.test)?);
                }
            }
        }
        Ok(match self.mode {
            Mode::Cv => ExperimentData::Cv {
                k: self.k.expect("checked"),
                samples: cv,
            },
            Mode::Traintest => ExperimentData::Traintest { train, test },
        })
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Cv => "cv",
            Mode::Traintest => "traintest",
        }
    }
}

//! The four architectures over a shared encoder: single-task, classic
//! multi-task, task-aware input, and task embedding.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InputMode, TaskSpec, TokenBatch, Vocabulary};
use crate::encoder::{Encoder, EncoderConfig, Linear};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Binding, Graph, Tensor, Var};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MAX_TEB_UNITS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "stl")]
    Stl,
    #[serde(rename = "mtl")]
    Mtl,
    #[serde(rename = "mtl-tai")]
    MtlTai,
    #[serde(rename = "mtl-te")]
    MtlTe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Stl, Variant::Mtl, Variant::MtlTai, Variant::MtlTe];

    /// Config spelling: `stl`, `mtl`, `mtl-tai`, `mtl-te`.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Stl => "stl",
            Variant::Mtl => "mtl",
            Variant::MtlTai => "mtl-tai",
            Variant::MtlTe => "mtl-te",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Stl => "STL",
            Variant::Mtl => "MTL",
            Variant::MtlTai => "MTL-TAI",
            Variant::MtlTe => "MTL-TE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == s || v.label() == s)
    }

    pub fn input_mode(self) -> InputMode {
        match self {
            Variant::MtlTai => InputMode::TaskAware,
            _ => InputMode::TextOnly,
        }
    }

    pub fn is_multi_task(self) -> bool {
        self != Variant::Stl
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Ordered tasks of a model; a task's position is its head index and its
/// slot in the task identification vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRegistry {
    tasks: Vec<TaskSpec>,
}

impl TaskRegistry {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("task registry is empty".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            t.validate()?;
            if tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!("duplicate task name {:?}", t.name)));
            }
        }
        Ok(TaskRegistry { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<&TaskSpec> {
        self.tasks.get(index).ok_or(Error::Index {
            what: "task registry",
            index,
            bound: self.tasks.len(),
        })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    /// Learning units in the task embedding block; `mtl-te` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teb_units: Option<usize>,
    /// Dropout applied to the head input during training.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        self.encoder.validate()?;
        match (self.variant, n_tasks) {
            (Variant::Stl, n) if n != 1 => {
                return Err(Error::Config(format!(
                    "variant stl needs exactly one task, got {n}"
                )))
            }
            (v, n) if v.is_multi_task() && n < 2 => {
                return Err(Error::Config(format!(
                    "variant {} needs at least two tasks, got {n}",
                    v.key()
                )))
            }
            _ => {}
        }
        match (self.variant, self.teb_units) {
            (Variant::MtlTe, None) => {
                return Err(Error::Config("variant mtl-te requires teb_units".into()))
            }
            (Variant::MtlTe, Some(l)) if !(1..=MAX_TEB_UNITS).contains(&l) => {
                return Err(Error::Config(format!(
                    "teb_units must be in 1..={MAX_TEB_UNITS}, got {l}"
                )))
            }
            (v, Some(_)) if v != Variant::MtlTe => {
                return Err(Error::Config(format!(
                    "teb_units is only valid for mtl-te, not {}",
                    v.key()
                )))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One-hot task identification vector of width `n`.
pub fn one_hot_tiv(task_index: usize, n: usize) -> Result<Tensor> {
    if task_index >= n {
        return Err(Error::Index {
            what: "task identification vector",
            index: task_index,
            bound: n,
        });
    }
    let mut data = vec![0.0; n];
    data[task_index] = 1.0;
    Ok(Tensor::from_vec(data))
}

/// Stack of learning units (linear map then ReLU) applied to the latent
/// representation concatenated with the task identification vector.
#[derive(Clone, Debug)]
pub struct TaskEmbeddingBlock {
    units: Vec<Linear>,
    latent_dim: usize,
    n_tasks: usize,
}

impl TaskEmbeddingBlock {
    /// Registers `units` learning units under `teb.*`. The first maps
    /// `latent_dim + n_tasks` to `latent_dim`, the rest keep `latent_dim`.
    pub fn init(
        store: &mut ParamStore,
        latent_dim: usize,
        n_tasks: usize,
        units: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(1..=MAX_TEB_UNITS).contains(&units) {
            return Err(Error::Config(format!(
                "teb_units must be in 1..={MAX_TEB_UNITS}, got {units}"
            )));
        }
        let units = (0..units)
            .map(|l| {
                let fan_in = if l == 0 {
                    latent_dim + n_tasks
                } else {
                    latent_dim
                };
                Linear::init(store, &format!("teb.{l}"), fan_in, latent_dim, rng)
            })
            .collect::<Result<_>>()?;
        Ok(TaskEmbeddingBlock {
            units,
            latent_dim,
            n_tasks,
        })
    }

    fn from_store(
        store: &ParamStore,
        latent_dim: usize,
        n_tasks: usize,
        units: usize,
    ) -> Result<Self> {
        let units = (0..units)
            .map(|l| linear_from_store(store, &format!("teb.{l}")))
            .collect::<Result<_>>()?;
        Ok(TaskEmbeddingBlock {
            units,
            latent_dim,
            n_tasks,
        })
    }

    pub fn units(&self) -> usize {
        self.units.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Shape `[fan_in, fan_out]` of each unit's weight.
    pub fn unit_shapes(&self, store: &ParamStore) -> Vec<Vec<usize>> {
        self.units
            .iter()
            .map(|u| store.get(u.w).shape().to_vec())
            .collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.units.iter().flat_map(Linear::ids).collect()
    }

    /// Maps `[B, latent_dim]` latents and `[B, n_tasks]` identification
    /// vectors to `[B, latent_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, latent: Var, tiv: Var) -> Result<Var> {
        let (ls, ts) = (g.shape(latent).to_vec(), g.shape(tiv).to_vec());
        if ls.len() != 2
            || ls[1] != self.latent_dim
            || ts.len() != 2
            || ts[1] != self.n_tasks
            || ts[0] != ls[0]
        {
            return Err(Error::Shape {
                op: "teb_forward",
                lhs: ls,
                rhs: ts,
            });
        }
        let mut h = g.concat(latent, tiv)?;
        for unit in &self.units {
            let z = unit.apply(g, p, h)?;
            h = g.relu(z);
        }
        Ok(h)
    }
}

fn linear_from_store(store: &ParamStore, name: &str) -> Result<Linear> {
    let get = |suffix: &str| {
        store
            .id(&format!("{name}.{suffix}"))
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                message: format!("missing parameter {name}.{suffix}"),
            })
    };
    Ok(Linear {
        w: get("w")?,
        b: get("b")?,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A model variant with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    registry: TaskRegistry,
    store: ParamStore,
    encoder: Encoder,
    heads: Vec<Linear>,
    teb: Option<TaskEmbeddingBlock>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    tasks: Vec<TaskSpec>,
}

impl Model {
    /// Builds and initializes a model. Parameters are drawn in the order
    /// encoder, task embedding block, heads.
    pub fn new(config: ModelConfig, registry: TaskRegistry, rng: &mut impl Rng) -> Result<Self> {
        config.validate(registry.len())?;
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&config.encoder, &mut store, rng)?;
        let latent = config.encoder.latent_dim();
        let teb = match config.variant {
            Variant::MtlTe => Some(TaskEmbeddingBlock::init(
                &mut store,
                latent,
                registry.len(),
                config.teb_units.unwrap_or(1),
                rng,
            )?),
            _ => None,
        };
        let heads = registry
            .tasks()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Linear::init(
                    &mut store,
                    &format!("head.{i}"),
                    latent,
                    t.num_classes(),
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Model {
            config,
            registry,
            store,
            encoder,
            heads,
            teb,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// The same architecture with replacement parameters, which must match
    /// the current ones by name and shape.
    pub fn with_store(&self, store: ParamStore) -> Result<Model> {
        let same = store.len() == self.store.len()
            && self
                .store
                .iter()
                .zip(store.iter())
                .all(|((_, a, ta), (_, b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(Error::invalid(
                "replacement parameters do not match the model layout",
            ));
        }
        Ok(Model {
            store,
            ..self.clone()
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn teb(&self) -> Option<&TaskEmbeddingBlock> {
        self.teb.as_ref()
    }

    pub fn head_ids(&self, task_index: usize) -> Result<[ParamId; 2]> {
        self.registry.get(task_index)?;
        Ok(self.heads[task_index].ids())
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Parameters updated by a step on `task_index`: the encoder, the task
    /// embedding block when present, and that task's head only.
    pub fn trainable_params(&self, task_index: usize) -> Result<Vec<ParamId>> {
        self.registry.get(task_index)?;
        if self.config.variant == Variant::Stl {
            return Ok(self.all_param_ids());
        }
        let mut ids = self.encoder.param_ids().to_vec();
        if let Some(teb) = &self.teb {
            ids.extend(teb.param_ids());
        }
        ids.extend(self.heads[task_index].ids());
        Ok(ids)
    }

    /// Records the forward pass for a batch of task `task_index` and returns
    /// `[B, classes]` logits. Dropout on the head input is active only when
    /// `training` is set.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Binding,
        tokens: &TokenBatch,
        task_index: usize,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        self.registry.get(task_index)?;
        let out = self.encoder.encode(g, p, tokens)?;
        let mut z = out.latent;
        if let Some(teb) = &self.teb {
            let n = self.registry.len();
            let tiv = one_hot_tiv(task_index, n)?;
            let rows: Vec<f64> = (0..tokens.rows).flat_map(|_| tiv.data().to_vec()).collect();
            let tiv = g.constant(Tensor::new([tokens.rows, n], rows)?);
            z = teb.forward(g, p, z, tiv)?;
        }
        let z = g.dropout(z, self.config.dropout, training, rng)?;
        self.heads[task_index].apply(g, p, z)
    }

    /// Evaluation-mode logits as a `[B, classes]` tensor.
    pub fn logits(&self, tokens: &TokenBatch, task_index: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let ids = self.trainable_params(task_index)?;
        let p = g.bind(&self.store, &ids, false);
        let mut unused = crate::seeded_rng(0);
        let logits = self.forward(&mut g, &p, tokens, task_index, false, &mut unused)?;
        Ok(g.value(logits).clone())
    }

    /// Predicted class per row.
    pub fn predict(&self, tokens: &TokenBatch, task_index: usize) -> Result<Vec<usize>> {
        let logits = self.logits(tokens, task_index)?;
        let classes = logits.last_dim();
        Ok(logits.data().chunks(classes).map(argmax).collect())
    }

    /// Writes `model.json`, `encoder.params`, `head-<i>.params`,
    /// `teb.params` (task embedding only) and `vocab.txt` into `dir`.
    pub fn save(&self, dir: &Path, vocab: &Vocabulary) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tasks: self.registry.tasks().to_vec(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join("model.json");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        self.store
            .save_manifest("enc.", &dir.join("encoder.params"))?;
        for i in 0..self.heads.len() {
            self.store
                .save_manifest(&format!("head.{i}."), &dir.join(format!("head-{i}.params")))?;
        }
        if self.teb.is_some() {
            self.store.save_manifest("teb.", &dir.join("teb.params"))?;
        }
        vocab.save(&dir.join("vocab.txt"))
    }

    /// Reads a checkpoint written by [`Model::save`].
    pub fn load(dir: &Path) -> Result<(Self, Vocabulary)> {
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "model.json",
            message: e.to_string(),
        })?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                what: "model.json",
                message: format!("unsupported checkpoint version {}", manifest.version),
            });
        }
        let registry = TaskRegistry::new(manifest.tasks)?;
        let config = manifest.config;
        config.validate(registry.len())?;
        let mut store = ParamStore::new();
        let mut files = vec![dir.join("encoder.params")];
        if config.variant == Variant::MtlTe {
            files.push(dir.join("teb.params"));
        }
        files.extend((0..registry.len()).map(|i| dir.join(format!("head-{i}.params"))));
        for f in &files {
            store.insert_manifest(f)?;
        }
        let encoder = Encoder::from_store(&config.encoder, &store)?;
        let latent = config.encoder.latent_dim();
        let teb = match config.variant {
            Variant::MtlTe => Some(TaskEmbeddingBlock::from_store(
                &store,
                latent,
                registry.len(),
                config.teb_units.unwrap_or(1),
            )?),
            _ => None,
        };
        let heads = (0..registry.len())
            .map(|i| linear_from_store(&store, &format!("head.{i}")))
            .collect::<Result<_>>()?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        Ok((
            Model {
                config,
                registry,
                store,
                encoder,
                heads,
                teb,
            },
            vocab,
        ))
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{lr_at, AdamW, OptimConfig};
use crate::data::{make_batches, Batch, Example, TokenBatch};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::params::ParamStore;
use crate::tensor::Graph;
use crate::{seeded_rng, SeededRng};

const EVAL_CHUNK: usize = 256;

/// How batches of different tasks are interleaved within an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    /// Alternate tasks one batch at a time; exhausted tasks drop out.
    #[default]
    RoundRobin,
    /// Draw the next task with probability proportional to its remaining
    /// batches.
    Proportional,
}

impl SchedulePolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "round_robin" => Some(SchedulePolicy::RoundRobin),
            "proportional" => Some(SchedulePolicy::Proportional),
            _ => None,
        }
    }

    /// Task order of one epoch given each task's batch count.
    pub fn order(self, batches: &[usize], rng: &mut impl Rng) -> Vec<usize> {
        let mut left = batches.to_vec();
        let total: usize = left.iter().sum();
        let mut out = Vec::with_capacity(total);
        match self {
            SchedulePolicy::RoundRobin => {
                while out.len() < total {
                    for (t, l) in left.iter_mut().enumerate() {
                        if *l > 0 {
                            *l -= 1;
                            out.push(t);
                        }
                    }
                }
            }
            SchedulePolicy::Proportional => {
                for remaining in (1..=total).rev() {
                    let mut draw = rng.gen_range(0..remaining);
                    let t = left
                        .iter()
                        .position(|&l| {
                            if draw < l {
                                true
                            } else {
                                draw -= l;
                                false
                            }
                        })
                        .expect("draw below remaining total");
                    left[t] -= 1;
                    out.push(t);
                }
            }
        }
        out
    }
}

/// Validation score of one task after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: String,
    pub metric: String,
    pub value: f64,
    /// Learning rate after the epoch's last step.
    pub lr: f64,
}

/// Per-task training and validation examples, in registry order.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Vec<Vec<Example>>,
    pub valid: Vec<Vec<Example>>,
}

/// Result of [`train_joint`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final parameters.
    pub model: Model,
    /// One record per (epoch, task), epoch-major.
    pub history: Vec<EpochRecord>,
    /// Best epoch per task by validation metric.
    pub best_epochs: Vec<usize>,
    /// Parameters at each task's best epoch.
    pub best_params: Vec<ParamStore>,
    /// Training loss of every step.
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    /// The model as it was at task `task_index`'s best epoch.
    pub fn best_model(&self, task_index: usize) -> Result<Model> {
        let store = self.best_params.get(task_index).ok_or(Error::Index {
            what: "task",
            index: task_index,
            bound: self.best_params.len(),
        })?;
        self.model.with_store(store.clone())
    }

    /// Validation values of one task across epochs.
    pub fn task_history(&self, task: &str) -> Vec<f64> {
        self.history
            .iter()
            .filter(|r| r.task == task)
            .map(|r| r.value)
            .collect()
    }
}

/// Epoch with the highest value; the earliest wins ties.
pub fn select_best_epoch(history: &[f64]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::EmptySequence("epoch history"));
    }
    let mut best = 0;
    for (i, &v) in history.iter().enumerate() {
        if v > history[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Predicted classes for examples of task `task_index`, in input order.
pub fn predict_examples(
    model: &Model,
    examples: &[Example],
    task_index: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let seqs: Vec<&[usize]> = chunk.iter().map(|e| e.token_ids.as_slice()).collect();
        out.extend(model.predict(&TokenBatch::from_sequences(&seqs)?, task_index)?);
    }
    Ok(out)
}

/// Official metric of task `task_index` on `examples`.
pub fn score_examples(model: &Model, examples: &[Example], task_index: usize) -> Result<f64> {
    let task = model.registry().get(task_index)?;
    let preds = predict_examples(model, examples, task_index)?;
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    task.metric.score(&preds, &golds, task.positive_index())
}

/// One optimization step on a batch; returns the loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &Batch,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let ids = model.trainable_params(batch.task_index)?;
    let mut g = Graph::new();
    let p = g.bind(model.store(), &ids, true);
    let logits = model.forward(&mut g, &p, &batch.tokens, batch.task_index, true, rng)?;
    let loss = g.softmax_cross_entropy(logits, &batch.labels)?;
    g.backward(loss)?;
    let value = g.value(loss).data()[0];
    let grads = p.gradients(&g);
    opt.step(model.store_mut(), &grads, lr)?;
    Ok(value)
}

/// Trains every task jointly. Each epoch shuffles each task's examples into
/// batches, interleaves them under `schedule`, steps only the parameters
/// [`Model::trainable_params`] allows for the batch's task, then scores
/// every task on its validation examples.
pub fn train_joint(
    mut model: Model,
    data: &TaskData,
    optim: &OptimConfig,
    schedule: SchedulePolicy,
    seed: u64,
) -> Result<TrainOutcome> {
    optim.validate()?;
    let n = model.registry().len();
    if data.train.len() != n || data.valid.len() != n {
        return Err(Error::invalid(format!(
            "model has {n} tasks but data covers {} train and {} validation sets",
            data.train.len(),
            data.valid.len()
        )));
    }
    for (t, (train, valid)) in data.train.iter().zip(&data.valid).enumerate() {
        let name = &model.registry().get(t)?.name;
        if train.is_empty() {
            return Err(Error::invalid(format!(
                "task {name:?} has no training examples"
            )));
        }
        if valid.is_empty() {
            return Err(Error::invalid(format!(
                "task {name:?} has no validation examples"
            )));
        }
        if let Some(e) = train.iter().chain(valid).find(|e| e.task_index != t) {
            return Err(Error::invalid(format!(
                "example {:?} belongs to task {} but was given for task {name:?}",
                e.id, e.task_index
            )));
        }
    }
    let mut rng = seeded_rng(seed);
    let per_task: Vec<usize> = data
        .train
        .iter()
        .map(|t| t.len().div_ceil(optim.batch_size))
        .collect();
    let total_steps = optim.epochs * per_task.iter().sum::<usize>();
    let mut opt = AdamW::new(optim);
    let mut step = 0;
    let mut history = Vec::with_capacity(optim.epochs * n);
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut best_params = vec![model.store().clone(); n];
    let mut step_losses = Vec::with_capacity(total_steps);
    for epoch in 0..optim.epochs {
        let mut batches: Vec<std::vec::IntoIter<Batch>> = Vec::with_capacity(n);
        for train in &data.train {
            batches.push(make_batches(train, optim.batch_size, Some(&mut rng))?.into_iter());
        }
        for t in schedule.order(&per_task, &mut rng) {
            let batch = batches[t].next().expect("schedule matches batch counts");
            let lr = lr_at(step, total_steps, optim.lr_peak)?;
            step_losses.push(train_step(&mut model, &mut opt, &batch, lr, &mut rng)?);
            step += 1;
        }
        let lr = lr_at(step, total_steps, optim.lr_peak)?;
        for (t, valid) in data.valid.iter().enumerate() {
            let value = score_examples(&model, valid, t)?;
            let task = model.registry().get(t)?;
            history.push(EpochRecord {
                epoch,
                task: task.name.clone(),
                metric: task.metric.name().to_string(),
                value,
                lr,
            });
            values[t].push(value);
            if select_best_epoch(&values[t])? == epoch {
                best_params[t] = model.store().clone();
            }
        }
    }
    let best_epochs = values
        .iter()
        .map(|v| select_best_epoch(v))
        .collect::<Result<_>>()?;
    Ok(TrainOutcome {
        model,
        history,
        best_epochs,
        best_params,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_interleaves() {
        let mut rng = seeded_rng(0);
        assert_eq!(
            SchedulePolicy::RoundRobin.order(&[3, 1, 2], &mut rng),
            [0, 1, 2, 0, 2, 0]
        );
    }

    #[test]
    fn proportional_uses_every_batch() {
        let mut rng = seeded_rng(1);
        let order = SchedulePolicy::Proportional.order(&[5, 2, 7], &mut rng);
        for (t, n) in [5, 2, 7].into_iter().enumerate() {
            assert_eq!(order.iter().filter(|&&x| x == t).count(), n);
        }
    }

    #[test]
    fn best_epoch_examples() {
        assert_eq!(select_best_epoch(&[0.1, 0.5, 0.9]).unwrap(), 2);
        assert_eq!(select_best_epoch(&[0.8, 0.9, 0.9]).unwrap(), 1);
        assert!(select_best_epoch(&[]).is_err());
    }
}

//! Two-task synthetic corpus with tunable cross-task conflict.
//!
//! The vocabulary `t0 … t{V-1}` splits into four trigger groups of
//! `max(1, V/8)` tokens each; the rest are fillers. Task A's label is the XOR of "some token of group 1 present"
//! and "some token of group 2 present"; task B uses groups 3 and 4 the same
//! way. Negatives mostly carry neither trigger of the pair. Every example also carries the other task's triggers: by default
//! they are arranged so the other task's rule gives the same label, and
//! with probability `conflict` they imply the opposite one. At
//! `conflict = 0` both tasks are the same labeling; as it grows, a shared
//! representation receives contradictory evidence from the foreign
//! triggers.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{Sample, TaskSpec};
use crate::error::{Error, Result};
use crate::evaluation::Metric;
use crate::seeded_rng;

pub const MIN_VOCAB: usize = 8;
pub const MIN_PER_TASK: usize = 16;
const MIN_FILLERS: usize = 3;
const MAX_FILLERS: usize = 8;
/// Probability that a negative example carries neither trigger of a pair
/// (otherwise it carries both). Skewing the negatives gives each trigger a
/// marginal correlation with the label, so the XOR is learnable by
/// gradient descent.
const NEGATIVE_ABSENT: f64 = 0.8;
pub const DEFAULT_VOCAB: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_task: usize,
    pub vocab_size: usize,
    pub conflict: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_per_task: usize, conflict: f64, seed: u64) -> Self {
        SynthConfig {
            n_per_task,
            vocab_size: DEFAULT_VOCAB,
            conflict,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_task < MIN_PER_TASK {
            return Err(Error::invalid(format!(
                "n_per_task must be at least {MIN_PER_TASK}, got {}",
                self.n_per_task
            )));
        }
        if !(0.0..=1.0).contains(&self.conflict) {
            return Err(Error::invalid(format!(
                "conflict {} outside [0, 1]",
                self.conflict
            )));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::invalid(format!(
                "vocab_size must be at least {MIN_VOCAB}, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// The generated tasks and their samples, task A first.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub tasks: [TaskSpec; 2],
    pub samples: [Vec<Sample>; 2],
}

struct Layout {
    groups: [Vec<String>; 4],
    fillers: Vec<String>,
}

impl Layout {
    fn new(vocab_size: usize) -> Self {
        let per_group = (vocab_size / 8).max(1);
        let tok = |i: usize| format!("t{i}");
        let groups =
            std::array::from_fn(|g| (g * per_group..(g + 1) * per_group).map(tok).collect());
        let fillers = (4 * per_group..vocab_size).map(tok).collect();
        Layout { groups, fillers }
    }
}

fn synth_task(name: &str, description: &str) -> TaskSpec {
    TaskSpec::new(
        name,
        description,
        &["neg", "pos"],
        Some("pos"),
        Metric::Accuracy,
    )
    .expect("valid synthetic task")
}

/// Draws a presence pair `(u, v)` with `u XOR v == target`.
fn presence_pair(target: bool, rng: &mut impl Rng) -> (bool, bool) {
    if target {
        let u = rng.gen::<bool>();
        (u, !u)
    } else {
        let both = rng.gen::<f64>() >= NEGATIVE_ABSENT;
        (both, both)
    }
}

/// Generates `n_per_task` samples for each of two tasks with exactly
/// balanced labels (±1 for odd counts).
pub fn synthesize_tasks(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let layout = Layout::new(config.vocab_size);
    let mut rng = seeded_rng(config.seed);
    let tasks = [
        synth_task("task_a", "first task"),
        synth_task("task_b", "second task"),
    ];
    let samples = std::array::from_fn(|t| {
        let mut labels: Vec<bool> = (0..config.n_per_task).map(|i| i % 2 == 1).collect();
        labels.shuffle(&mut rng);
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let foreign = if rng.gen::<f64>() < config.conflict {
                    !label
                } else {
                    label
                };
                let own = presence_pair(label, &mut rng);
                let other = presence_pair(foreign, &mut rng);
                let (own_groups, other_groups) = if t == 0 {
                    ([0, 1], [2, 3])
                } else {
                    ([2, 3], [0, 1])
                };
                let mut tokens: Vec<String> = Vec::new();
                for (present, g) in [own.0, own.1, other.0, other.1]
                    .into_iter()
                    .zip(own_groups.into_iter().chain(other_groups))
                {
                    if present {
                        tokens.push(layout.groups[g].choose(&mut rng).unwrap().clone());
                    }
                }
                let n_fill = rng.gen_range(MIN_FILLERS..=MAX_FILLERS);
                for _ in 0..n_fill {
                    if let Some(f) = layout.fillers.choose(&mut rng) {
                        tokens.push(f.clone());
                    }
                }
                tokens.shuffle(&mut rng);
                Sample {
                    id: format!("{}-{i:05}", tasks[t].name),
                    text: tokens.join(" "),
                    label: usize::from(label),
                }
            })
            .collect()
    });
    Ok(SynthCorpus { tasks, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn present(text: &str, group: &[String]) -> bool {
        text.split(' ').any(|w| group.iter().any(|g| g == w))
    }

    #[test]
    fn labels_follow_own_triggers() {
        let cfg = SynthConfig::new(200, 0.6, 3);
        let corpus = synthesize_tasks(&cfg).unwrap();
        let layout = Layout::new(cfg.vocab_size);
        for (t, own) in [(0usize, [0usize, 1]), (1, [2, 3])] {
            for s in &corpus.samples[t] {
                let x = present(&s.text, &layout.groups[own[0]])
                    ^ present(&s.text, &layout.groups[own[1]]);
                assert_eq!(usize::from(x), s.label, "{}", s.text);
            }
        }
    }

    #[test]
    fn conflict_zero_makes_tasks_agree() {
        let cfg = SynthConfig::new(100, 0.0, 5);
        let corpus = synthesize_tasks(&cfg).unwrap();
        let layout = Layout::new(cfg.vocab_size);
        for t in 0..2 {
            for s in &corpus.samples[t] {
                let a = present(&s.text, &layout.groups[0]) ^ present(&s.text, &layout.groups[1]);
                let b = present(&s.text, &layout.groups[2]) ^ present(&s.text, &layout.groups[3]);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn conflict_rate_matches_parameter() {
        let cfg = SynthConfig::new(2000, 0.6, 9);
        let corpus = synthesize_tasks(&cfg).unwrap();
        let layout = Layout::new(cfg.vocab_size);
        let disagree = corpus.samples[1]
            .iter()
            .filter(|s| {
                let a = present(&s.text, &layout.groups[0]) ^ present(&s.text, &layout.groups[1]);
                usize::from(a) != s.label
            })
            .count() as f64
            / 2000.0;
        assert!((disagree - 0.6).abs() < 0.04, "{disagree}");
    }

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig::new(500, 1.0, 11);
        let a = synthesize_tasks(&cfg).unwrap();
        assert_eq!(a, synthesize_tasks(&cfg).unwrap());
        for t in 0..2 {
            let pos = a.samples[t].iter().filter(|s| s.label == 1).count() as f64 / 500.0;
            assert!((pos - 0.5).abs() <= 0.05);
        }
        let other = synthesize_tasks(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synthesize_tasks(&SynthConfig::new(8, 0.5, 0)).is_err());
        assert!(synthesize_tasks(&SynthConfig::new(32, 1.5, 0)).is_err());
        let tiny = SynthConfig {
            vocab_size: 7,
            ..SynthConfig::new(32, 0.5, 0)
        };
        assert!(synthesize_tasks(&tiny).is_err());
    }
}

#![allow(dead_code)]

use rand::Rng;
use taskaware::data::{Batch, Example, TaskSpec, TokenBatch};
use taskaware::encoder::EncoderConfig;
use taskaware::evaluation::Metric;
use taskaware::models::{Model, ModelConfig, TaskRegistry, Variant};
use taskaware::{seeded_rng, SeededRng};

pub const VOCAB: usize = 16;

pub fn task(i: usize) -> TaskSpec {
    TaskSpec::new(
        format!("task_{i}"),
        format!("task number {i}"),
        &["neg", "pos"],
        Some("pos"),
        Metric::Accuracy,
    )
    .unwrap()
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        vocab_size: VOCAB,
        hidden: 8,
        layers: 1,
        heads: 2,
        max_len: 10,
        ffn_mult: 2,
    }
}

pub fn tiny_config(variant: Variant, teb_units: usize) -> ModelConfig {
    ModelConfig {
        variant,
        encoder: tiny_encoder(),
        teb_units: (variant == Variant::MtlTe).then_some(teb_units),
        dropout: 0.0,
    }
}

pub fn tiny_model(variant: Variant, n_tasks: usize, seed: u64) -> Model {
    let n = if variant == Variant::Stl { 1 } else { n_tasks };
    let registry = TaskRegistry::new((0..n).map(task).collect()).unwrap();
    Model::new(tiny_config(variant, 2), registry, &mut seeded_rng(seed)).unwrap()
}

/// Random examples whose label is whether token 2 occurs.
pub fn examples(n: usize, task_index: usize, rng: &mut SeededRng) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(2..=6);
            let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(3..VOCAB)).collect();
            let label = i % 2;
            if label == 1 {
                let at = rng.gen_range(0..len);
                ids[at] = 2;
            }
            Example {
                id: format!("{task_index}-{i}"),
                text: String::new(),
                token_ids: ids,
                label,
                task_index,
            }
        })
        .collect()
}

pub fn batch(examples: &[Example]) -> Batch {
    let refs: Vec<&Example> = examples.iter().collect();
    Batch::from_examples(&refs).unwrap()
}

pub fn tokens(seqs: &[Vec<usize>]) -> TokenBatch {
    TokenBatch::from_sequences(seqs).unwrap()
}

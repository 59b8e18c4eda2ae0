//! Fixtures shared by the benchmarks.

use taskaware::data::{
    encode_examples, synthesize_tasks, token_streams, Batch, Example, SynthConfig, Vocabulary,
};
use taskaware::encoder::EncoderConfig;
use taskaware::models::{Model, ModelConfig, TaskRegistry, Variant};
use taskaware::seeded_rng;

/// A desk-scale model for `variant` with a batch of `batch_size` synthetic
/// examples of task A.
pub fn desk_model_and_batch(variant: Variant, batch_size: usize) -> (Model, Batch) {
    let corpus = synthesize_tasks(&SynthConfig::new(batch_size.max(16), 0.6, 0))
        .expect("valid synthetic config");
    let encoder = EncoderConfig::default();
    let n_tasks = if variant == Variant::Stl { 1 } else { 2 };
    let tasks = corpus.tasks[..n_tasks].to_vec();
    let streams = token_streams(
        &corpus.samples[0],
        &tasks[0],
        variant.input_mode(),
        encoder.max_len,
    )
    .expect("description fits");
    let vocab = Vocabulary::build(streams.iter().map(Vec::as_slice), 1).expect("non-empty");
    let examples = encode_examples(&corpus.samples[0], &streams, &vocab, 0);
    let refs: Vec<&Example> = examples.iter().take(batch_size).collect();
    let batch = Batch::from_examples(&refs).expect("one task");
    let config = ModelConfig {
        variant,
        encoder: EncoderConfig {
            vocab_size: vocab.len(),
            ..encoder
        },
        teb_units: (variant == Variant::MtlTe).then_some(1),
        dropout: 0.1,
    };
    let model = Model::new(
        config,
        TaskRegistry::new(tasks).expect("valid tasks"),
        &mut seeded_rng(0),
    )
    .expect("valid model");
    (model, batch)
}

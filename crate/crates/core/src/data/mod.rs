//! Corpora, tokenization, task-aware input construction and fold splitting.

mod batch;
mod folds;
mod input;
mod synth;
mod task;
pub mod tokenize;
mod tsv;
mod vocab;

pub use batch::{make_batches, Batch, TokenBatch};
pub use folds::{holdout_split, kfold};
pub use input::{encode_examples, input_tokens, make_tai_input, token_streams, InputMode};
pub use synth::{synthesize_tasks, SynthConfig, SynthCorpus, DEFAULT_VOCAB};
pub use task::{Example, Sample, TaskSpec};
pub use tokenize::tokenize;
pub use tsv::{load_tsv, write_tsv, TsvSchema};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};

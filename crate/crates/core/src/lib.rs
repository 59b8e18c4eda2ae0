//! Multi-task text classification with task awareness.
//!
//! A hard-parameter-sharing model is a shared text encoder followed by one
//! linear head per task. Two task-aware variants condition the shared part
//! on the task being solved: task-aware input prepends a task description to
//! the text, and the task embedding block mixes a one-hot task vector into
//! the pooled representation before the head. Everything here runs in fp64
//! on a small tape-based autodiff engine.

pub mod checks;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Binding, Graph, Tensor, Var};

/// Seeded generator used for every random draw in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Creates a [`SeededRng`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

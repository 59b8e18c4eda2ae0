use rand::seq::SliceRandom;
use rand::Rng;

use super::task::Example;
use super::vocab::PAD_ID;
use crate::error::{Error, Result};

/// Right-padded token ids with a validity mask, row-major `[rows, len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub rows: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn from_sequences<S: AsRef<[usize]>>(seqs: &[S]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD_ID, len - s.len()));
            mask.extend(std::iter::repeat_n(true, s.len()));
            mask.extend(std::iter::repeat_n(false, len - s.len()));
        }
        Ok(TokenBatch {
            ids,
            mask,
            rows: seqs.len(),
            len,
        })
    }

    pub fn row_ids(&self, r: usize) -> &[usize] {
        &self.ids[r * self.len..(r + 1) * self.len]
    }

    pub fn row_mask(&self, r: usize) -> &[bool] {
        &self.mask[r * self.len..(r + 1) * self.len]
    }
}

/// Examples of one task, padded together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
    pub task_index: usize,
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Result<Self> {
        let task_index = examples
            .first()
            .ok_or_else(|| Error::invalid("empty batch"))?
            .task_index;
        if let Some(e) = examples.iter().find(|e| e.task_index != task_index) {
            return Err(Error::invalid(format!(
                "batch mixes tasks {task_index} and {}",
                e.task_index
            )));
        }
        let seqs: Vec<&[usize]> = examples.iter().map(|e| e.token_ids.as_slice()).collect();
        Ok(Batch {
            tokens: TokenBatch::from_sequences(&seqs)?,
            labels: examples.iter().map(|e| e.label).collect(),
            task_index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Splits examples into batches of at most `batch_size`, shuffling first
/// when an rng is supplied.
pub fn make_batches<R: Rng>(
    examples: &[Example],
    batch_size: usize,
    shuffle: Option<&mut R>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut refs: Vec<&Example> = examples.iter().collect();
    if let Some(rng) = shuffle {
        refs.shuffle(rng);
    }
    refs.chunks(batch_size).map(Batch::from_examples).collect()
}

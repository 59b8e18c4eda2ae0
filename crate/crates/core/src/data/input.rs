//! Model-input construction: plain text snippets or task-aware input.

use serde::{Deserialize, Serialize};

use super::task::{Example, Sample, TaskSpec};
use super::tokenize::{tokenize, SEP_TOKEN};
use super::vocab::{Vocabulary, UNK_ID};
use crate::error::{Error, Result};

/// How a sample's text becomes the encoder's token stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// The text snippet alone, truncated to `max_len`.
    TextOnly,
    /// `[description] <sep> [text]`, truncating only the text.
    TaskAware,
}

/// Prepends the task description and a `<sep>` sentinel to the text
/// tokens. The text is truncated from the right so the result fits in
/// `max_len`; the description is never shortened.
pub fn make_tai_input(
    ts_tokens: &[String],
    task: &TaskSpec,
    max_len: usize,
) -> Result<Vec<String>> {
    let td = tokenize(&task.description);
    if td.len() + 1 > max_len {
        return Err(Error::invalid(format!(
            "task description of {:?} is {} tokens; with <sep> it exceeds max_len {max_len}",
            task.name,
            td.len()
        )));
    }
    let room = max_len - td.len() - 1;
    let mut out = td;
    out.push(SEP_TOKEN.to_string());
    out.extend(ts_tokens.iter().take(room).cloned());
    Ok(out)
}

/// Token stream for one text under `mode`.
pub fn input_tokens(
    text: &str,
    task: &TaskSpec,
    mode: InputMode,
    max_len: usize,
) -> Result<Vec<String>> {
    let ts = tokenize(text);
    match mode {
        InputMode::TextOnly => Ok(ts.into_iter().take(max_len).collect()),
        InputMode::TaskAware => make_tai_input(&ts, task, max_len),
    }
}

/// Token streams for a set of samples.
pub fn token_streams(
    samples: &[Sample],
    task: &TaskSpec,
    mode: InputMode,
    max_len: usize,
) -> Result<Vec<Vec<String>>> {
    samples
        .iter()
        .map(|s| input_tokens(&s.text, task, mode, max_len))
        .collect()
}

/// Looks up ids for already-built token streams. An empty stream becomes a
/// single `UNK` so every example has at least one valid position.
pub fn encode_examples(
    samples: &[Sample],
    streams: &[Vec<String>],
    vocab: &Vocabulary,
    task_index: usize,
) -> Vec<Example> {
    samples
        .iter()
        .zip(streams)
        .map(|(s, toks)| {
            let mut token_ids = vocab.encode(toks);
            if token_ids.is_empty() {
                token_ids.push(UNK_ID);
            }
            Example {
                id: s.id.clone(),
                text: s.text.clone(),
                token_ids,
                label: s.label,
                task_index,
            }
        })
        .collect()
}

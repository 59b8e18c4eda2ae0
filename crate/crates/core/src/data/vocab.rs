use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::tokenize::{PAD_TOKEN, UNK_TOKEN};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token ↔ id map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens.iter().cloned().zip(0..).collect();
        Vocabulary { tokens, index }
    }

    /// Builds a vocabulary from token streams. Tokens seen at least
    /// `min_count` times get ids in first-seen order.
    pub fn build<'a, I>(streams: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        let mut n_streams = 0;
        for stream in streams {
            n_streams += 1;
            for tok in stream {
                let c = counts.entry(tok.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(tok.as_str());
                }
                *c += 1;
            }
        }
        if n_streams == 0 {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut vocab = Vocabulary::with_reserved();
        for tok in order {
            if counts[tok] >= min_count.max(1) && !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.to_string(), vocab.tokens.len());
                vocab.tokens.push(tok.to_string());
            }
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of a token stream; unseen tokens map to `UNK`.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Format {
                what: "vocabulary",
                message: format!("{} does not start with the reserved tokens", path.display()),
            });
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        if index.len() != tokens.len() {
            return Err(Error::Format {
                what: "vocabulary",
                message: format!("{} has duplicate tokens", path.display()),
            });
        }
        Ok(Vocabulary { tokens, index })
    }
}

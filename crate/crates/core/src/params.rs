//! Named parameter storage and the text manifest used for checkpoints.
//!
//! Manifest layout (UTF-8, one record per two lines):
//!
//! ```text
//! taskaware-params 1
//! tensor <name> <rank> <dim_0> … <dim_{rank-1}>
//! <value_0> <value_1> …
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_MAGIC: &str = "taskaware-params";
pub const MANIFEST_VERSION: u32 = 1;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Serializes the parameters whose names start with `prefix`.
    pub fn to_manifest(&self, prefix: &str) -> String {
        let mut out = format!("{MANIFEST_MAGIC} {MANIFEST_VERSION}\n");
        for (_, name, value) in self.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            let _ = write!(out, "tensor {name} {}", value.shape().len());
            for d in value.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let mut first = true;
            for v in value.data() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses a manifest into `(name, tensor)` pairs in file order.
    pub fn parse_manifest(text: &str) -> Result<Vec<(String, Tensor)>> {
        let bad = |message: String| Error::Format {
            what: "parameter manifest",
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty manifest".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MANIFEST_MAGIC) {
            return Err(bad(format!("bad header {header:?}")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        if version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut out = Vec::new();
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 || fields[0] != "tensor" {
                return Err(bad(format!("expected tensor record, got {line:?}")));
            }
            let rank: usize = fields[2]
                .parse()
                .map_err(|_| bad(format!("bad rank in {line:?}")))?;
            if fields.len() != 3 + rank {
                return Err(bad(format!("rank/dims mismatch in {line:?}")));
            }
            let shape = fields[3..]
                .iter()
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad dims in {line:?}")))?;
            let values_line = lines
                .next()
                .ok_or_else(|| bad(format!("missing values for {}", fields[1])))?;
            let data = values_line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad value for {}", fields[1])))?;
            let tensor = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            out.push((fields[1].to_string(), tensor));
        }
        Ok(out)
    }

    /// Overwrites existing parameters from a manifest. Every record must name
    /// a known parameter of the same shape.
    pub fn load_manifest(&mut self, text: &str) -> Result<usize> {
        let records = Self::parse_manifest(text)?;
        let n = records.len();
        for (name, tensor) in records {
            let id = self.id(&name).ok_or_else(|| Error::Format {
                what: "parameter manifest",
                message: format!("unknown parameter {name}"),
            })?;
            if self.values[id.0].shape() != tensor.shape() {
                return Err(Error::Shape {
                    op: "load_manifest",
                    lhs: self.values[id.0].shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            self.values[id.0] = tensor;
        }
        Ok(n)
    }

    /// Adds every record of a manifest file as a new parameter.
    pub fn insert_manifest(&mut self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = Self::parse_manifest(&text)?;
        let n = records.len();
        for (name, tensor) in records {
            self.insert(name, tensor)?;
        }
        Ok(n)
    }

    pub fn save_manifest(&self, prefix: &str, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest(prefix)).map_err(|e| Error::io(path, e))
    }

    pub fn read_manifest(&mut self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_manifest(&text)
    }
}

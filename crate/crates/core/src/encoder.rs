//! A small post-norm transformer encoder with max+mean pooled output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Binding, Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const EMBED_INIT: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    /// Self-attention blocks; 0 pools the summed token and position embeddings.
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            hidden: 64,
            layers: 2,
            heads: 2,
            max_len: 64,
            ffn_mult: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("encoder: {m}")));
        if self.vocab_size < 2 {
            return bad(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            ));
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if self.layers > 0 && (self.heads == 0 || !self.hidden.is_multiple_of(self.heads)) {
            return bad(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if self.layers > 0 && self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        Ok(())
    }

    /// Width of the pooled representation.
    pub fn latent_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Number of scalar parameters created by [`Encoder::init`].
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let f = self.ffn_mult * h;
        let attention = 4 * (h * h + h);
        let norms = 4 * h;
        let ffn = h * f + f + f * h + h;
        (self.vocab_size + self.max_len) * h + self.layers * (attention + norms + ffn)
    }
}

/// A dense map `x·W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
}

impl Linear {
    pub(crate) fn init(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.insert(
            format!("{name}.w"),
            Tensor::uniform([fan_in, fan_out], -bound, bound, rng),
        )?;
        let b = store.insert(format!("{name}.b"), Tensor::zeros([fan_out]))?;
        Ok(Linear { w, b })
    }

    /// Applies the map to a `[rows, fan_in]` input.
    pub(crate) fn apply(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add_bias(y, p.var(self.b))
    }

    pub(crate) fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn init(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.insert(format!("{name}.g"), Tensor::full([dim], 1.0))?;
        let bias = store.insert(format!("{name}.b"), Tensor::zeros([dim]))?;
        Ok(Norm { gain, bias })
    }

    fn apply(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias), LN_EPS)
    }
}

#[derive(Clone, Debug)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
}

/// Encoder parameters registered in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    tok: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    ids: Vec<ParamId>,
}

/// Output of [`Encoder::encode`] for a batch of `B` rows padded to `T`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B, T, hidden]`.
    pub sequence: Var,
    /// `[B, 2·hidden]`: max pool then mean pool over valid positions.
    pub latent: Var,
}

impl Encoder {
    /// Registers freshly initialized encoder parameters under `enc.*`.
    ///
    /// Embeddings are drawn from U(−0.05, 0.05), linear weights from
    /// U(−1/√fan_in, 1/√fan_in); biases start at 0 and layer-norm gains at 1.
    pub fn init(
        config: &EncoderConfig,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let first = store.len();
        let tok = store.insert(
            "enc.tok",
            Tensor::uniform([config.vocab_size, h], -EMBED_INIT, EMBED_INIT, rng),
        )?;
        let pos = store.insert(
            "enc.pos",
            Tensor::uniform([config.max_len, h], -EMBED_INIT, EMBED_INIT, rng),
        )?;
        let f = config.ffn_mult * h;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let n = |s: &str| format!("enc.{l}.{s}");
            blocks.push(Block {
                q: Linear::init(store, &n("q"), h, h, rng)?,
                k: Linear::init(store, &n("k"), h, h, rng)?,
                v: Linear::init(store, &n("v"), h, h, rng)?,
                o: Linear::init(store, &n("o"), h, h, rng)?,
                ln1: Norm::init(store, &n("ln1"), h)?,
                ff1: Linear::init(store, &n("ff1"), h, f, rng)?,
                ff2: Linear::init(store, &n("ff2"), f, h, rng)?,
                ln2: Norm::init(store, &n("ln2"), h)?,
            });
        }
        let ids = (first..store.len()).map(ParamId::from_index).collect();
        Ok(Encoder {
            config: config.clone(),
            tok,
            pos,
            blocks,
            ids,
        })
    }

    /// Looks up an encoder previously registered under `enc.*`.
    pub fn from_store(config: &EncoderConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let get = |name: String| {
            store.id(&name).ok_or_else(|| Error::Format {
                what: "checkpoint",
                message: format!("missing parameter {name}"),
            })
        };
        let lin = |name: String| -> Result<Linear> {
            Ok(Linear {
                w: get(format!("{name}.w"))?,
                b: get(format!("{name}.b"))?,
            })
        };
        let norm = |name: String| -> Result<Norm> {
            Ok(Norm {
                gain: get(format!("{name}.g"))?,
                bias: get(format!("{name}.b"))?,
            })
        };
        let tok = get("enc.tok".into())?;
        let pos = get("enc.pos".into())?;
        let mut blocks = Vec::new();
        let mut ids = vec![tok, pos];
        for l in 0..config.layers {
            let n = |s: &str| format!("enc.{l}.{s}");
            let b = Block {
                q: lin(n("q"))?,
                k: lin(n("k"))?,
                v: lin(n("v"))?,
                o: lin(n("o"))?,
                ln1: norm(n("ln1"))?,
                ff1: lin(n("ff1"))?,
                ff2: lin(n("ff2"))?,
                ln2: norm(n("ln2"))?,
            };
            for lin in [&b.q, &b.k, &b.v, &b.o] {
                ids.extend(lin.ids());
            }
            ids.extend([b.ln1.gain, b.ln1.bias]);
            ids.extend(b.ff1.ids());
            ids.extend(b.ff2.ids());
            ids.extend([b.ln2.gain, b.ln2.bias]);
            blocks.push(b);
        }
        let enc = Encoder {
            config: config.clone(),
            tok,
            pos,
            blocks,
            ids,
        };
        let expected = [config.vocab_size, config.hidden];
        if store.get(tok).shape() != expected {
            return Err(Error::Format {
                what: "checkpoint",
                message: format!(
                    "enc.tok has shape {:?}, expected {expected:?}",
                    store.get(tok).shape()
                ),
            });
        }
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Every encoder parameter, in registration order.
    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Encodes a padded batch. Padded positions never act as attention keys
    /// and never enter pooling.
    pub fn encode(&self, g: &mut Graph, p: &Binding, batch: &TokenBatch) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let (b, t, h) = (batch.rows, batch.len, cfg.hidden);
        if t > cfg.max_len {
            return Err(Error::invalid(format!(
                "sequence length {t} exceeds max_len {}",
                cfg.max_len
            )));
        }
        for r in 0..b {
            if !batch.row_mask(r).iter().any(|&m| m) {
                return Err(Error::EmptySequence("encoder input row"));
            }
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: cfg.vocab_size,
            });
        }
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let tok = g.embedding(p.var(self.tok), &batch.ids)?;
        let pos = g.embedding(p.var(self.pos), &positions)?;
        let mut x = g.add(tok, pos)?;
        for block in &self.blocks {
            x = self.block(g, p, block, x, batch)?;
        }
        let sequence = g.reshape(x, &[b, t, h])?;
        let max = g.max_pool(sequence, &batch.mask)?;
        let mean = g.mean_pool(sequence, &batch.mask)?;
        let latent = g.concat(max, mean)?;
        Ok(EncoderOutput { sequence, latent })
    }

    /// One block on the flattened `[B·T, h]` activations.
    fn block(
        &self,
        g: &mut Graph,
        p: &Binding,
        blk: &Block,
        x: Var,
        batch: &TokenBatch,
    ) -> Result<Var> {
        let (b, t, h) = (batch.rows, batch.len, self.config.hidden);
        let heads = self.config.heads;
        let dh = h / heads;
        let split = |g: &mut Graph, v: Var, axes: &[usize]| -> Result<Var> {
            let v = g.reshape(v, &[b, t, heads, dh])?;
            let v = g.permute(v, axes)?;
            let shape = g.shape(v).to_vec();
            g.reshape(v, &[b * heads, shape[2], shape[3]])
        };
        let q = blk.q.apply(g, p, x)?;
        let k = blk.k.apply(g, p, x)?;
        let v = blk.v.apply(g, p, x)?;
        let q = split(g, q, &[0, 2, 1, 3])?;
        let k = split(g, k, &[0, 2, 3, 1])?;
        let v = split(g, v, &[0, 2, 1, 3])?;
        let scores = g.matmul(q, k)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.masked_softmax(scores, &batch.mask, heads)?;
        let ctx = g.matmul(probs, v)?;
        let ctx = g.reshape(ctx, &[b, heads, t, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b * t, h])?;
        let attn = blk.o.apply(g, p, ctx)?;
        let x = g.add(x, attn)?;
        let x = blk.ln1.apply(g, p, x)?;
        let hidden = blk.ff1.apply(g, p, x)?;
        let hidden = g.relu(hidden);
        let ff = blk.ff2.apply(g, p, hidden)?;
        let x = g.add(x, ff)?;
        blk.ln2.apply(g, p, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::tensor::gradcheck_params;

    fn small(layers: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 50,
            hidden: 16,
            layers,
            heads: 2,
            max_len: 8,
            ffn_mult: 2,
        }
    }

    fn setup(cfg: &EncoderConfig, seed: u64) -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg, &mut store, &mut seeded_rng(seed)).unwrap();
        (store, enc)
    }

    fn latent(store: &ParamStore, enc: &Encoder, batch: &TokenBatch) -> Tensor {
        let mut g = Graph::new();
        let p = g.bind(store, enc.param_ids(), false);
        let out = enc.encode(&mut g, &p, batch).unwrap();
        g.value(out.latent).clone()
    }

    #[test]
    fn param_count_matches_formula() {
        let cfg = EncoderConfig {
            max_len: 64,
            ffn_mult: 4,
            ..small(1)
        };
        let (store, enc) = setup(&cfg, 0);
        let (v, h, l, f) = (50, 16, 1, 4);
        let expected =
            v * h + 64 * h + l * (4 * (h * h + h) + 4 * h + h * f * h + f * h + f * h * h + h);
        assert_eq!(store.numel(), expected);
        assert_eq!(cfg.param_count(), expected);
        assert_eq!(enc.param_ids().len(), store.len());
    }

    #[test]
    fn init_is_seeded() {
        let (a, _) = setup(&small(1), 4);
        let (b, _) = setup(&small(1), 4);
        let (c, _) = setup(&small(1), 5);
        let vals = |s: &ParamStore| {
            s.iter()
                .flat_map(|(_, _, t)| t.data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
    }

    #[test]
    fn bag_of_embeddings_single_token() {
        let (store, enc) = setup(&small(0), 1);
        let batch = TokenBatch::from_sequences(&[vec![7]]).unwrap();
        let out = latent(&store, &enc, &batch);
        let tok = store.get(store.id("enc.tok").unwrap());
        let pos = store.get(store.id("enc.pos").unwrap());
        let row: Vec<f64> = (0..16)
            .map(|j| tok.data()[7 * 16 + j] + pos.data()[j])
            .collect();
        let expected: Vec<f64> = row.iter().chain(&row).copied().collect();
        assert_eq!(out.data(), expected.as_slice());
        assert_eq!(out.shape(), [1, 32]);
    }

    #[test]
    fn padded_positions_do_not_matter() {
        let (store, enc) = setup(&small(2), 2);
        let mut batch = TokenBatch::from_sequences(&[vec![3, 4, 5, 6], vec![9, 10]]).unwrap();
        let before = latent(&store, &enc, &batch);
        batch.ids[6] = 40;
        batch.ids[7] = 2;
        let after = latent(&store, &enc, &batch);
        assert_eq!(before, after);
        let alone = latent(
            &store,
            &enc,
            &TokenBatch::from_sequences(&[vec![9, 10]]).unwrap(),
        );
        assert_eq!(&before.data()[32..], alone.data());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (store, enc) = setup(&small(1), 3);
        let mut g = Graph::new();
        let p = g.bind(&store, enc.param_ids(), false);
        let over = TokenBatch::from_sequences(&[vec![2; 9]]).unwrap();
        assert!(enc.encode(&mut g, &p, &over).is_err());
        let oov = TokenBatch::from_sequences(&[vec![50]]).unwrap();
        assert!(enc.encode(&mut g, &p, &oov).is_err());
        let bad = EncoderConfig {
            hidden: 15,
            ..small(1)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gradcheck_latent_sum() {
        let cfg = EncoderConfig {
            hidden: 8,
            ..small(1)
        };
        let (store, enc) = setup(&cfg, 6);
        let batch = TokenBatch::from_sequences(&[vec![3, 11, 4]]).unwrap();
        let err = gradcheck_params(
            Graph::new,
            |g, p| {
                let out = enc.encode(g, p, &batch)?;
                Ok(g.sum(out.latent))
            },
            &store,
            enc.param_ids(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn from_store_recovers_layout() {
        let (store, enc) = setup(&small(2), 8);
        let again = Encoder::from_store(&small(2), &store).unwrap();
        assert_eq!(enc.param_ids(), again.param_ids());
    }
}

//! Gradient-check suite over every differentiable operation and every model
//! variant at tiny shapes.

use std::time::Instant;

use crate::data::TaskSpec;
use crate::data::TokenBatch;
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::evaluation::Metric;
use crate::models::{Model, ModelConfig, TaskRegistry, Variant};
use crate::tensor::{gradcheck_in, gradcheck_params, Fault, Graph, Tensor, Var, DEFAULT_EPS};
use crate::{seeded_rng, SeededRng};

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for a full model forward-and-loss.
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Values bounded away from zero so a kink is never straddled.
fn rand_away_from_zero(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::uniform(shape.to_vec(), 0.1, 1.0, rng);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = -*v;
        }
    }
    t
}

/// Random-weighted sum, so every output coordinate reaches the loss with a
/// distinct weight.
fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone().reshaped(g.shape(y).to_vec())?);
    let prod = g.multiply(y, w)?;
    Ok(g.sum(prod))
}

struct Suite {
    fault: Option<Fault>,
    results: Vec<CheckResult>,
    rng: SeededRng,
}

impl Suite {
    /// Checks `op` at `x`, scoring its output against fixed random weights.
    fn op<F>(&mut self, name: &str, x: Tensor, op: F) -> Result<()>
    where
        F: Fn(&mut Graph, Var) -> Result<Var>,
    {
        let out_len = {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let y = op(&mut g, v)?;
            g.value(y).len()
        };
        let weights = rand_tensor(&[out_len], &mut self.rng);
        let fault = self.fault;
        let start = Instant::now();
        let err = gradcheck_in(
            || fault.map_or_else(Graph::new, Graph::with_fault),
            |g, v| {
                let y = op(g, v)?;
                if out_len == 1 {
                    Ok(y)
                } else {
                    weighted_sum(g, y, &weights)
                }
            },
            &x,
            DEFAULT_EPS,
        )?;
        self.results.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
            tolerance: OP_TOLERANCE,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn elementary(&mut self) -> Result<()> {
        let r = &mut self.rng;
        let (a, b) = (rand_tensor(&[3, 4], r), rand_tensor(&[4, 5], r));
        let other = rand_tensor(&[3, 4], r);
        let bias = rand_tensor(&[4], r);
        let batched = rand_tensor(&[2, 4, 3], r);
        let gain = rand_tensor(&[4], r);
        let scores = rand_tensor(&[4, 3, 3], r);
        let seq = rand_tensor(&[2, 3, 4], r);
        let table = rand_tensor(&[6, 3], r);
        let logits = rand_tensor(&[3, 4], r);
        let pos_neg = rand_away_from_zero(&[3, 4], r);
        let x34 = rand_tensor(&[3, 4], r);

        self.op("add", x34.clone(), |g, x| {
            let c = g.constant(other.clone());
            g.add(x, c)
        })?;
        self.op("add_bias", x34.clone(), |g, x| {
            let c = g.constant(bias.clone());
            g.add_bias(x, c)
        })?;
        self.op("add_bias/bias", bias.clone(), |g, bv| {
            let c = g.constant(other.clone());
            g.add_bias(c, bv)
        })?;
        self.op("multiply", x34.clone(), |g, x| {
            let c = g.constant(other.clone());
            g.multiply(x, c)
        })?;
        self.op("multiply/square", x34.clone(), |g, x| g.multiply(x, x))?;
        self.op("scale", x34.clone(), |g, x| Ok(g.scale(x, -1.7)))?;
        self.op("sum", x34.clone(), |g, x| Ok(g.sum(x)))?;
        self.op("matmul/lhs", a.clone(), |g, x| {
            let c = g.constant(b.clone());
            g.matmul(x, c)
        })?;
        self.op("matmul/rhs", b.clone(), |g, x| {
            let c = g.constant(a.clone());
            g.matmul(c, x)
        })?;
        self.op("matmul/batched", batched.clone(), |g, x| {
            let t = g.transpose(x)?;
            g.matmul(x, t)
        })?;
        self.op("relu", pos_neg, |g, x| Ok(g.relu(x)))?;
        self.op("reshape", x34.clone(), |g, x| g.reshape(x, &[2, 6]))?;
        self.op("permute", seq.clone(), |g, x| g.permute(x, &[2, 0, 1]))?;
        self.op("transpose", x34.clone(), |g, x| g.transpose(x))?;
        self.op("embedding", table, |g, t| g.embedding(t, &[4, 0, 4, 2, 5]))?;
        self.op("layer_norm", x34.clone(), |g, x| {
            let (gn, bs) = (g.constant(gain.clone()), g.constant(bias.clone()));
            g.layer_norm(x, gn, bs, 1e-5)
        })?;
        self.op("layer_norm/gain", gain.clone(), |g, gn| {
            let (xs, bs) = (g.constant(x34.clone()), g.constant(bias.clone()));
            g.layer_norm(xs, gn, bs, 1e-5)
        })?;
        let key_mask = [true, true, false, true, false, true];
        self.op("masked_softmax", scores, |g, x| {
            g.masked_softmax(x, &key_mask, 2)
        })?;
        let pool_mask = [true, false, true, true, true, false];
        self.op("mean_pool", seq.clone(), |g, x| g.mean_pool(x, &pool_mask))?;
        self.op("max_pool", seq.clone(), |g, x| g.max_pool(x, &pool_mask))?;
        self.op("concat", x34.clone(), |g, x| {
            let c = g.constant(Tensor::uniform([3, 1], 0.0, 1.0, &mut seeded_rng(9)));
            let y = g.concat(x, c)?;
            g.concat(y, x)
        })?;
        self.op("dropout", x34, |g, x| {
            g.dropout(x, 0.3, true, &mut seeded_rng(5))
        })?;
        self.op("softmax_cross_entropy", logits, |g, x| {
            g.softmax_cross_entropy(x, &[2, 0, 3])
        })?;
        Ok(())
    }

    fn model(&mut self, variant: Variant) -> Result<()> {
        let task = |name: &str, desc: &str| {
            TaskSpec::new(name, desc, &["no", "yes"], Some("yes"), Metric::Accuracy)
        };
        let tasks = match variant {
            Variant::Stl => vec![task("a", "first task")?],
            _ => vec![
                task("a", "first task")?,
                task("b", "second task")?,
                task("c", "third task")?,
            ],
        };
        let config = ModelConfig {
            variant,
            encoder: EncoderConfig {
                vocab_size: 12,
                hidden: 4,
                layers: 1,
                heads: 2,
                max_len: 6,
                ffn_mult: 2,
            },
            teb_units: (variant == Variant::MtlTe).then_some(2),
            dropout: 0.3,
        };
        let model = Model::new(config, TaskRegistry::new(tasks)?, &mut self.rng)?;
        let task_index = if variant == Variant::Stl { 0 } else { 1 };
        let tokens = TokenBatch::from_sequences(&[vec![3, 7, 2, 9], vec![5, 11]])?;
        let labels = [1, 0];
        let ids = model.trainable_params(task_index)?;
        let fault = self.fault;
        let start = Instant::now();
        let err = gradcheck_params(
            || fault.map_or_else(Graph::new, Graph::with_fault),
            |g, p| {
                let logits = model.forward(g, p, &tokens, task_index, false, &mut seeded_rng(0))?;
                g.softmax_cross_entropy(logits, &labels)
            },
            model.store(),
            &ids,
            DEFAULT_EPS,
        )?;
        self.results.push(CheckResult {
            name: format!("model/{}", variant.key()),
            max_rel_error: err,
            tolerance: MODEL_TOLERANCE,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// Runs every check. `fault` corrupts a backward rule on purpose; with it
/// set, at least one check is expected to fail.
pub fn gradcheck_suite(fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let mut suite = Suite {
        fault,
        results: Vec::new(),
        rng: seeded_rng(20240611),
    };
    suite.elementary()?;
    for v in Variant::ALL {
        suite.model(v)?;
    }
    Ok(suite.results)
}

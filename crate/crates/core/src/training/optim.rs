use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Optimizer and loop hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    /// Desk-scale defaults: the from-scratch encoder needs a larger step
    /// than a pretrained one would.
    fn default() -> Self {
        OptimConfig {
            lr_peak: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            epochs: 15,
            batch_size: 64,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("optim: {m}")));
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return bad(format!("lr_peak must be positive, got {}", self.lr_peak));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return bad(format!("eps must be non-negative, got {}", self.eps));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// Linearly decayed learning rate `lr_peak · (1 − step/total_steps)`.
pub fn lr_at(step: usize, total_steps: usize, lr_peak: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    Ok(lr_peak * (1.0 - step as f64 / total_steps as f64))
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// AdamW with decoupled weight decay. Moments and the step count are kept
/// per parameter, so a parameter that receives no gradient on a step is
/// left untouched, including by weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    state: Vec<Moments>,
}

impl AdamW {
    pub fn new(config: &OptimConfig) -> Self {
        AdamW {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            state: Vec::new(),
        }
    }

    /// Steps taken so far by `id`.
    pub fn steps(&self, id: ParamId) -> u64 {
        self.state.get(id.index()).map_or(0, |s| s.t)
    }

    /// First and second moments of `id`, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.state
            .get(id.index())
            .filter(|s| s.t > 0)
            .map(|s| (s.m.as_slice(), s.v.as_slice()))
    }

    /// Applies one update with learning rate `lr` to each listed parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, &Tensor)],
        lr: f64,
    ) -> Result<()> {
        if lr.is_nan() || lr < 0.0 {
            return Err(Error::invalid(format!("learning rate {lr} is negative")));
        }
        for &(id, g) in grads {
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if self.state.len() <= id.index() {
                self.state.resize_with(id.index() + 1, Moments::default);
            }
            let s = &mut self.state[id.index()];
            if s.t == 0 {
                s.m = vec![0.0; g.len()];
                s.v = vec![0.0; g.len()];
            }
            s.t += 1;
            let c1 = 1.0 - self.beta1.powi(s.t as i32);
            let c2 = 1.0 - self.beta2.powi(s.t as i32);
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            for (((pv, &gv), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(&mut s.m)
                .zip(&mut s.v)
            {
                *m = b1 * *m + (1.0 - b1) * gv;
                *v = b2 * *v + (1.0 - b2) * gv * gv;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *pv -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *pv);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::from_vec(vec![value])).unwrap();
        (s, id)
    }

    fn cfg(eps: f64, wd: f64) -> OptimConfig {
        OptimConfig {
            eps,
            weight_decay: wd,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = one(0.37);
        let mut opt = AdamW::new(&cfg(1e-8, 0.0));
        let g = Tensor::from_vec(vec![0.0]);
        opt.step(&mut s, &[(id, &g)], 0.1).unwrap();
        assert_eq!(s.get(id).data(), [0.37]);
    }

    #[test]
    fn first_step_has_unit_magnitude() {
        let (mut s, id) = one(2.0);
        let mut opt = AdamW::new(&cfg(0.0, 0.0));
        let g = Tensor::from_vec(vec![1.0]);
        opt.step(&mut s, &[(id, &g)], 0.01).unwrap();
        assert!((s.get(id).data()[0] - 1.99).abs() < 1e-15);
    }

    #[test]
    fn decay_is_decoupled() {
        let (mut s, id) = one(3.0);
        let mut opt = AdamW::new(&cfg(1e-8, 0.1));
        let g = Tensor::from_vec(vec![0.0]);
        opt.step(&mut s, &[(id, &g)], 0.5).unwrap();
        assert!((s.get(id).data()[0] - 3.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn two_step_trace_matches_closed_form() {
        let (mut s, id) = one(1.0);
        let c = cfg(1e-8, 0.0);
        let mut opt = AdamW::new(&c);
        let (g1, g2, lr) = (0.5, -2.0, 0.01);
        opt.step(&mut s, &[(id, &Tensor::from_vec(vec![g1]))], lr)
            .unwrap();
        opt.step(&mut s, &[(id, &Tensor::from_vec(vec![g2]))], lr)
            .unwrap();
        let (b1, b2) = (0.9f64, 0.999f64);
        let step = |m: f64, v: f64, t: i32| {
            (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + 1e-8)
        };
        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        let expected = 1.0 - lr * step(m1, v1, 1) - lr * step(m2, v2, 2);
        assert!((s.get(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(opt.steps(id), 2);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at(0, 10, 0.2).unwrap(), 0.2);
        assert_eq!(lr_at(10, 10, 0.2).unwrap(), 0.0);
        assert_eq!(lr_at(5, 10, 0.2).unwrap(), 0.1);
        assert!(lr_at(11, 10, 0.2).is_err());
        assert!(lr_at(0, 0, 0.2).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut s, id) = one(1.0);
        let mut opt = AdamW::new(&cfg(1e-8, 0.0));
        let g = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(opt.step(&mut s, &[(id, &g)], 0.1).is_err());
    }
}

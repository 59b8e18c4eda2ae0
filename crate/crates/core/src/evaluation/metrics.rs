use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Official metric of a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    /// F1 of the task's positive label.
    F1Positive,
    /// Unweighted mean of per-class F1.
    F1Macro,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1Positive => "f1_positive",
            Metric::F1Macro => "f1_macro",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accuracy" => Some(Metric::Accuracy),
            "f1_positive" => Some(Metric::F1Positive),
            "f1_macro" => Some(Metric::F1Macro),
            _ => None,
        }
    }

    /// Scores predictions; `positive` is used only by [`Metric::F1Positive`].
    pub fn score(self, preds: &[usize], golds: &[usize], positive: usize) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(preds, golds),
            Metric::F1Positive => f1_positive(preds, golds, positive),
            Metric::F1Macro => f1_macro(preds, golds),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One-vs-rest counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn for_class(preds: &[usize], golds: &[usize], class: usize) -> Result<Self> {
        check(preds, golds)?;
        let mut c = ConfusionCounts::default();
        for (&p, &g) in preds.iter().zip(golds) {
            match (p == class, g == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptySequence("metric input"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn f1_positive(preds: &[usize], golds: &[usize], positive: usize) -> Result<f64> {
    Ok(ConfusionCounts::for_class(preds, golds, positive)?.f1())
}

/// Mean F1 over every class that occurs in either vector, and at least
/// classes 0 and 1.
pub fn f1_macro(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check(preds, golds)?;
    let classes = preds.iter().chain(golds).copied().max().unwrap_or(0).max(1) + 1;
    let mut total = 0.0;
    for c in 0..classes {
        total += ConfusionCounts::for_class(preds, golds, c)?.f1();
    }
    Ok(total / classes as f64)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Metric;

/// Identity of a classification task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Task description (TD) prepended to the text for task-aware input.
    pub description: String,
    /// Label names; a label's position is its class index.
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    pub metric: Metric,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        labels: &[&str],
        positive_label: Option<&str>,
        metric: Metric,
    ) -> Result<Self> {
        let spec = TaskSpec {
            name: name.into(),
            description: description.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            positive_label: positive_label.map(str::to_string),
            metric,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("task {:?}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Config("task name must not be empty".into()));
        }
        if self.description.trim().is_empty() {
            return fail("description must not be empty".into());
        }
        if self.labels.len() < 2 {
            return fail(format!(
                "needs at least 2 labels, got {}",
                self.labels.len()
            ));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return fail(format!("duplicate label {l:?}"));
            }
        }
        match (&self.positive_label, self.metric) {
            (Some(p), _) if !self.labels.contains(p) => {
                fail(format!("positive_label {p:?} is not one of the labels"))
            }
            (None, Metric::F1Positive) => fail("metric f1_positive requires positive_label".into()),
            _ => Ok(()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Class index used for positive-class F1 (the last label when unset).
    pub fn positive_index(&self) -> usize {
        self.positive_label
            .as_deref()
            .and_then(|p| self.label_index(p))
            .unwrap_or(self.labels.len() - 1)
    }

    /// EXIST-2021 sexism identification, scored by accuracy.
    pub fn exist2021() -> Self {
        TaskSpec::new(
            "exist2021",
            "Sexism detection",
            &["Not-Sexist", "Sexist"],
            Some("Sexist"),
            Metric::Accuracy,
        )
        .expect("valid preset")
    }

    /// DETOXIS-2021 toxicity detection, scored by F1 of the toxic class.
    pub fn detoxis2021() -> Self {
        TaskSpec::new(
            "detoxis2021",
            "Toxic Language detection",
            &["Not-Toxic", "Toxic"],
            Some("Toxic"),
            Metric::F1Positive,
        )
        .expect("valid preset")
    }

    /// HatEval-2019 hate speech detection, scored by macro F1.
    pub fn hateval2019() -> Self {
        TaskSpec::new(
            "hateval2019",
            "Hate Speech detection",
            &["Not-Hate", "Hate"],
            Some("Hate"),
            Metric::F1Macro,
        )
        .expect("valid preset")
    }
}

/// A labeled text row as read from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub label: usize,
}

/// A sample after tokenization and vocabulary lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub token_ids: Vec<usize>,
    pub label: usize,
    pub task_index: usize,
}

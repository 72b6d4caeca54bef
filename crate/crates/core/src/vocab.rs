use crate::CoreError;

/// Index of the CTC blank in every label space.
pub const BLANK: usize = 0;

/// Gloss names plus the reserved blank at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    glosses: Vec<String>,
}

impl Vocabulary {
    pub const BLANK_NAME: &'static str = "<blank>";

    pub fn new(glosses: Vec<String>) -> Result<Self, CoreError> {
        for (i, g) in glosses.iter().enumerate() {
            if g.is_empty() || g == Self::BLANK_NAME || g.chars().any(char::is_whitespace) {
                return Err(CoreError::Vocabulary(format!("invalid gloss name '{g}'")));
            }
            if glosses[..i].contains(g) {
                return Err(CoreError::Vocabulary(format!("duplicate gloss '{g}'")));
            }
        }
        Ok(Vocabulary { glosses })
    }

    /// |V| including the blank.
    pub fn size(&self) -> usize {
        self.glosses.len() + 1
    }

    pub fn glosses(&self) -> &[String] {
        &self.glosses
    }

    pub fn name(&self, label: usize) -> &str {
        if label == BLANK {
            Self::BLANK_NAME
        } else {
            &self.glosses[label - 1]
        }
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.glosses.iter().position(|g| g == name).map(|i| i + 1)
    }

    /// Data-side 0-based gloss ids to labels (blank excluded).
    pub fn labels_from_ids(ids: &[usize]) -> Vec<usize> {
        ids.iter().map(|&g| g + 1).collect()
    }

    pub fn render(&self, labels: &[usize]) -> String {
        labels.iter().map(|&l| self.name(l)).collect::<Vec<_>>().join(" ")
    }
}

/// Row-stochastic `[T', |V|]` label posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSequence {
    steps: usize,
    labels: usize,
    data: Vec<f64>,
}

impl PosteriorSequence {
    pub fn new(steps: usize, labels: usize, data: Vec<f64>) -> Result<Self, CoreError> {
        if labels < 2 || data.len() != steps * labels {
            return Err(CoreError::Shape(format!("{} values for [{steps}, {labels}]", data.len())));
        }
        for row in data.chunks(labels) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(CoreError::Shape(format!("row is not a distribution (sum {s})")));
            }
        }
        Ok(PosteriorSequence { steps, labels, data })
    }

    /// Softmax of each row of `logits`.
    pub fn from_logits(steps: usize, labels: usize, logits: &[f64]) -> Result<Self, CoreError> {
        if logits.len() != steps * labels {
            return Err(CoreError::Shape(format!("{} logits for [{steps}, {labels}]", logits.len())));
        }
        let mut data = logits.to_vec();
        for row in data.chunks_mut(labels) {
            stmc_tensor::tape::softmax_in_place(row);
        }
        Ok(PosteriorSequence { steps, labels, data })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.labels..(t + 1) * self.labels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Natural log with zero probabilities floored at [`crate::ctc::LOG_ZERO`].
    pub fn log_data(&self) -> Vec<f64> {
        self.data.iter().map(|&p| crate::ctc::safe_ln(p)).collect()
    }
}

/// Merge adjacent duplicates, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

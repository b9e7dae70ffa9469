use serde::{Deserialize, Serialize};

use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    pub values: Vec<f64>,
}

/// Labelled samples, one group per condition. Group order is preserved and
/// drives the order of pairwise comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupedSamples {
    pub groups: Vec<Group>,
}

impl GroupedSamples {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) {
        self.groups.push(Group { label: label.into(), values });
    }

    pub fn with(mut self, label: impl Into<String>, values: Vec<f64>) -> Self {
        self.push(label, values);
        self
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    /// Applies `f` to every value, keeping labels.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .map(|g| Group { label: g.label.clone(), values: g.values.iter().map(|&v| f(v)).collect() })
                .collect(),
        }
    }

    /// Checks the shape required by the omnibus tests: at least two groups,
    /// each with at least two finite values.
    pub(crate) fn check_omnibus(&self) -> Result<(), StatsError> {
        if self.groups.len() < 2 {
            return Err(StatsError::TooFewGroups { needed: 2, found: self.groups.len() });
        }
        for g in &self.groups {
            if g.values.len() < 2 {
                return Err(StatsError::GroupTooSmall {
                    label: g.label.clone(),
                    size: g.values.len(),
                    needed: 2,
                });
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite { label: g.label.clone() });
            }
        }
        let first = self.groups[0].values[0];
        if self.groups.iter().all(|g| g.values.iter().all(|&v| v == first)) {
            return Err(StatsError::DegenerateInput);
        }
        Ok(())
    }
}

impl<S: Into<String>> FromIterator<(S, Vec<f64>)> for GroupedSamples {
    fn from_iter<T: IntoIterator<Item = (S, Vec<f64>)>>(iter: T) -> Self {
        let mut out = Self::new();
        for (label, values) in iter {
            out.push(label, values);
        }
        out
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

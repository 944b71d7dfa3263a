//! Finite label spaces with optional numeric embeddings.
//!
//! Every random quantity in the lab (cost-relevant state ω₀, observations,
//! actions, Markov states, noise atoms) lives in a finite, ordered label
//! space. Action and state spaces additionally carry one real value per
//! label — the embedding used to form empirical means like ū = (1/N)Σ u^i.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Result, TeamError};

/// An ordered finite set of distinct labels, optionally embedded in ℝ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSpace {
    labels: Vec<String>,
    values: Option<Vec<f64>>,
}

impl FiniteSpace {
    /// A label-only space (no numeric embedding).
    pub fn new<S: Into<String>>(labels: Vec<S>) -> Result<Self> {
        Self::build(labels.into_iter().map(Into::into).collect(), None)
    }

    /// A space whose labels carry numeric values (one finite real each).
    pub fn with_values<S: Into<String>>(labels: Vec<S>, values: Vec<f64>) -> Result<Self> {
        Self::build(labels.into_iter().map(Into::into).collect(), Some(values))
    }

    fn build(labels: Vec<String>, values: Option<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(TeamError::Config("space: labels must be nonempty".into()));
        }
        let distinct: HashSet<&str> = labels.iter().map(String::as_str).collect();
        if distinct.len() != labels.len() {
            return Err(TeamError::Config("space: labels must be distinct".into()));
        }
        if let Some(v) = &values {
            if v.len() != labels.len() {
                return Err(TeamError::Config(format!(
                    "space: {} labels but {} values",
                    labels.len(),
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(TeamError::Config(format!("space: non-finite value {bad}")));
            }
        }
        Ok(Self { labels, values })
    }

    /// Convenience: the binary action space {0, 1} embedded as 0.0 / 1.0.
    pub fn binary_actions() -> Self {
        Self::with_values(vec!["u0", "u1"], vec![0.0, 1.0]).expect("static construction")
    }

    /// Convenience: a single uninformative label (trivial σ-field).
    pub fn singleton(label: &str) -> Self {
        Self::new(vec![label]).expect("static construction")
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false // construction guarantees nonempty
    }

    #[must_use]
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[must_use]
    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    #[must_use]
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The numeric embedding, if one was supplied.
    #[must_use]
    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    /// Embedded value of label `i`; errors when the space carries none.
    pub fn value(&self, i: usize) -> Result<f64> {
        self.values
            .as_ref()
            .map(|v| v[i])
            .ok_or_else(|| TeamError::Config("space: numeric embedding required but absent".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_duplicate_and_mismatched_inputs() {
        assert!(FiniteSpace::new(Vec::<String>::new()).is_err());
        assert!(FiniteSpace::new(vec!["a", "a"]).is_err());
        assert!(FiniteSpace::with_values(vec!["a", "b"], vec![1.0]).is_err());
        assert!(FiniteSpace::with_values(vec!["a"], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn lookup_and_embedding_roundtrip() {
        let s = FiniteSpace::binary_actions();
        assert_eq!(s.len(), 2);
        assert_eq!(s.index_of("u1"), Some(1));
        assert_eq!(s.value(1).unwrap(), 1.0);
        let t = FiniteSpace::singleton("y");
        assert!(t.value(0).is_err(), "no embedding on a label-only space");
    }
}

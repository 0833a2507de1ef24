//! Domain values shared by every module: fingerprints, structures, latent
//! codes and the append-only evaluation dataset.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-length vector of non-negative integer feature counts.
///
/// Ordering is lexicographic on the counts, which is the canonical order used
/// for tie-breaking during batch selection.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(Vec<u32>);

impl Fingerprint {
    pub fn new(counts: Vec<u32>) -> Self {
        Fingerprint(counts)
    }

    pub fn zeros(len: usize) -> Self {
        Fingerprint(vec![0; len])
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Exact integer dot product.
    pub fn dot(&self, other: &Fingerprint) -> u64 {
        self.0.iter().zip(&other.0).map(|(&a, &b)| u64::from(a) * u64::from(b)).sum()
    }

    pub fn norm_sq(&self) -> u64 {
        self.dot(self)
    }

    pub fn into_counts(self) -> Vec<u32> {
        self.0
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint{:?}", self.0)
    }
}

impl From<Vec<u32>> for Fingerprint {
    fn from(v: Vec<u32>) -> Self {
        Fingerprint(v)
    }
}

/// A decoded design: its fingerprint plus an optional opaque label.
///
/// Equality and hashing look only at the fingerprint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Structure {
    pub fingerprint: Fingerprint,
    pub label: Option<String>,
}

impl Structure {
    pub fn new(fingerprint: Fingerprint) -> Self {
        Structure { fingerprint, label: None }
    }

    pub fn with_label(fingerprint: Fingerprint, label: impl Into<String>) -> Self {
        Structure { fingerprint, label: Some(label.into()) }
    }
}

impl PartialEq for Structure {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
    }
}

impl Eq for Structure {}

impl Hash for Structure {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.fingerprint.hash(state);
    }
}

/// A point in the generative model's latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    /// Fails if any coordinate is not finite.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidStructure(format!("latent coordinate {bad} is not finite")));
        }
        Ok(LatentVector(coords))
    }

    pub(crate) fn from_finite(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        LatentVector(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        LatentVector(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }
}

/// One objective evaluation together with the latent that generated it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub structure: Structure,
    pub y: f64,
    pub iteration: usize,
    pub batch_index: usize,
    pub latent: LatentVector,
}

/// Incumbent value `f*` of a dataset.
pub fn dataset_best(dataset: &[Evaluation]) -> Result<f64> {
    dataset
        .iter()
        .map(|e| e.y)
        .fold(None, |best: Option<f64>, y| Some(best.map_or(y, |b| b.max(y))))
        .ok_or(Error::NoIncumbent)
}

/// Append-only evaluation log for one run.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    evaluations: Vec<Evaluation>,
    incumbent: Option<usize>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects zero fingerprints and non-finite values.
    pub fn push(&mut self, evaluation: Evaluation) -> Result<()> {
        if evaluation.structure.fingerprint.is_zero() {
            return Err(Error::InvalidStructure("all-zero fingerprint cannot enter the dataset".into()));
        }
        if !evaluation.y.is_finite() {
            return Err(Error::Objective(format!("objective returned non-finite value {}", evaluation.y)));
        }
        // Strict comparison keeps the earliest incumbent on ties.
        let better = match self.incumbent {
            None => true,
            Some(i) => evaluation.y > self.evaluations[i].y,
        };
        if better {
            self.incumbent = Some(self.evaluations.len());
        }
        self.evaluations.push(evaluation);
        Ok(())
    }

    pub fn evaluations(&self) -> &[Evaluation] {
        &self.evaluations
    }

    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    pub fn best(&self) -> Result<f64> {
        self.incumbent().map(|e| e.y).ok_or(Error::NoIncumbent)
    }

    /// Earliest evaluation attaining the maximum.
    pub fn incumbent(&self) -> Option<&Evaluation> {
        self.incumbent.map(|i| &self.evaluations[i])
    }

    pub fn into_evaluations(self) -> Vec<Evaluation> {
        self.evaluations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(y: f64) -> Evaluation {
        Evaluation {
            structure: Structure::new(Fingerprint::new(vec![1, 0])),
            y,
            iteration: 0,
            batch_index: 0,
            latent: LatentVector::zeros(1),
        }
    }

    #[test]
    fn best_of_list() {
        let data = [eval(1.0), eval(3.5), eval(2.0)];
        assert_eq!(dataset_best(&data).unwrap(), 3.5);
        assert_eq!(dataset_best(&[eval(-2.0)]).unwrap(), -2.0);
    }

    #[test]
    fn empty_dataset_has_no_incumbent() {
        assert!(matches!(dataset_best(&[]), Err(Error::NoIncumbent)));
        assert!(matches!(Dataset::new().best(), Err(Error::NoIncumbent)));
    }

    #[test]
    fn zero_fingerprint_rejected() {
        let mut d = Dataset::new();
        let mut e = eval(1.0);
        e.structure = Structure::new(Fingerprint::zeros(3));
        assert!(d.push(e).is_err());
        assert!(d.is_empty());
    }

    #[test]
    fn incumbent_keeps_earliest_tie() {
        let mut d = Dataset::new();
        for (i, y) in [1.0, 4.0, 4.0, 2.0].into_iter().enumerate() {
            let mut e = eval(y);
            e.iteration = i;
            d.push(e).unwrap();
        }
        assert_eq!(d.incumbent().unwrap().iteration, 1);
        assert_eq!(d.best().unwrap(), 4.0);
    }

    #[test]
    fn structure_equality_ignores_label() {
        let a = Structure::with_label(Fingerprint::new(vec![1, 2]), "a");
        let b = Structure::with_label(Fingerprint::new(vec![1, 2]), "b");
        assert_eq!(a, b);
    }

    #[test]
    fn latent_rejects_nan() {
        assert!(LatentVector::new(vec![0.0, f64::NAN]).is_err());
    }
}

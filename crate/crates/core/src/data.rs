//! Labeled samples, datasets and class histograms.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    pub uid: u64,
    pub features: Vec<T>,
    pub label: usize,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<LabeledSample<T>>,
    num_classes: usize,
    feature_dim: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        samples: Vec<LabeledSample<T>>,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes", "must be positive"));
        }
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    context: "sample features",
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if let Some(index) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            if s.label >= num_classes {
                return Err(Error::invalid(
                    "label",
                    format!("sample {} has label {} >= {}", s.uid, s.label, num_classes),
                ));
            }
            if !seen.insert(s.uid) {
                return Err(Error::invalid("uid", format!("duplicate uid {}", s.uid)));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn empty(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            samples: Vec::new(),
            num_classes,
            feature_dim,
        }
    }

    pub fn samples(&self) -> &[LabeledSample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample<T>> {
        self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn histogram(&self) -> ClassHistogram {
        ClassHistogram::from_labels(self.samples.iter().map(|s| s.label))
    }

    pub fn uids(&self) -> BTreeSet<u64> {
        self.samples.iter().map(|s| s.uid).collect()
    }

    /// Concatenation; fails on uid collisions.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.feature_dim != other.feature_dim {
            return Err(Error::DimensionMismatch {
                context: "dataset union",
                expected: self.feature_dim,
                actual: other.feature_dim,
            });
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Self::new(
            samples,
            self.num_classes.max(other.num_classes),
            self.feature_dim,
        )
    }

    /// Same samples, with a larger declared class count.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(s) = self.samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::invalid(
                "num_classes",
                format!("sample {} has label {}", s.uid, s.label),
            ));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Row-major feature matrix of the selected sample indices.
    pub fn feature_matrix(&self, indices: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].features);
        }
        Matrix::from_vec(indices.len(), self.feature_dim, data)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.samples.len()).collect()
    }
}

/// Per-class sample counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    counts: BTreeMap<usize, usize>,
}

impl ClassHistogram {
    pub fn from_labels(labels: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        for y in labels {
            *counts.entry(y).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut h = Self::default();
        for (y, n) in counts {
            h.add(y, n);
        }
        h
    }

    pub fn add(&mut self, class: usize, n: usize) {
        if n > 0 {
            *self.counts.entry(class).or_insert(0) += n;
        }
    }

    pub fn get(&self, class: usize) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Classes with a positive count, ascending.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&y, &n)| (y, n))
    }

    pub fn classes(&self) -> Vec<usize> {
        self.iter().map(|(y, _)| y).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Elementwise sum over many histograms.
    pub fn sum<'a>(hists: impl IntoIterator<Item = &'a ClassHistogram>) -> Self {
        let mut out = Self::default();
        for h in hists {
            for (y, n) in h.iter() {
                out.add(y, n);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(uid: u64, label: usize) -> LabeledSample<f64> {
        LabeledSample {
            uid,
            features: vec![0.0, 1.0],
            label,
            domain: 0,
        }
    }

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![sample(0, 0), sample(1, 1)], 2, 2).is_ok());
        assert!(Dataset::new(vec![sample(0, 0), sample(0, 1)], 2, 2).is_err());
        assert!(Dataset::new(vec![sample(0, 2)], 2, 2).is_err());
        let mut bad = sample(0, 0);
        bad.features.push(1.0);
        assert!(Dataset::new(vec![bad], 2, 2).is_err());
        let mut nan = sample(0, 0);
        nan.features[1] = f64::NAN;
        assert!(matches!(
            Dataset::new(vec![nan], 2, 2),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn histogram_matches_recount() {
        let labels = [0usize, 3, 3, 1, 0, 3, 2, 2, 3];
        let ds = Dataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &y)| sample(i as u64, y))
                .collect(),
            4,
            2,
        )
        .unwrap();
        let h = ds.histogram();
        for y in 0..4 {
            let brute = labels.iter().filter(|&&l| l == y).count();
            assert_eq!(h.get(y), brute);
        }
        assert_eq!(h.total(), labels.len());
    }

    #[test]
    fn union_rejects_collisions() {
        let a = Dataset::new(vec![sample(0, 0)], 2, 2).unwrap();
        let b = Dataset::new(vec![sample(1, 1)], 2, 2).unwrap();
        assert_eq!(a.union(&b).unwrap().len(), 2);
        assert!(a.union(&a).is_err());
    }
}

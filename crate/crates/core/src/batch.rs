use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Feature vectors observed at one time step, one row per sample.
///
/// Labels are present for the labelled source batch and for synthetic or
/// ingested streams where ground truth is known.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl FeatureBatch {
    pub fn new(features: Matrix) -> Self {
        Self {
            features,
            labels: None,
        }
    }

    pub fn labelled(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        Ok(Self {
            features,
            labels: Some(labels),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// One-hot encodes labels into a `classes x n` table.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(classes, labels.len());
    for (j, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        m[(y, j)] = 1.0;
    }
    Ok(m)
}

/// Index of the largest entry in each column; ties go to the lower class.
pub fn argmax_columns(probs: &Matrix) -> Vec<usize> {
    (0..probs.cols())
        .map(|j| {
            let mut best = 0;
            for k in 1..probs.rows() {
                if probs[(k, j)] > probs[(best, j)] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Largest entry in each column.
pub fn max_columns(probs: &Matrix) -> Vec<f64> {
    (0..probs.cols())
        .map(|j| {
            (0..probs.rows())
                .map(|k| probs[(k, j)])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

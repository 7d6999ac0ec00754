//! Confidence-based label-free accuracy estimators used for comparison.
//!
//! All estimators take class-probability tables laid out `K x n` (one column
//! per sample) and return a value in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::{argmax_columns, max_columns};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Source-side statistics every baseline is fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCalibration {
    pub source_confidences: Vec<f64>,
    pub source_correct: Vec<bool>,
    pub source_accuracy: f64,
    pub atc_threshold: f64,
    pub classes: usize,
}

impl SourceCalibration {
    pub fn fit(source_probs: &Matrix, source_labels: &[usize]) -> Result<Self> {
        if source_probs.cols() != source_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: source_probs.cols(),
                got: source_labels.len(),
            });
        }
        if source_labels.is_empty() {
            return Err(Error::Empty("source batch"));
        }
        let confidences = max_columns(source_probs);
        let correct: Vec<bool> = argmax_columns(source_probs)
            .iter()
            .zip(source_labels)
            .map(|(p, y)| p == y)
            .collect();
        let accuracy = mean_bool(&correct);
        let atc_threshold = atc_fit(&confidences, accuracy);
        Ok(Self {
            source_confidences: confidences,
            source_correct: correct,
            source_accuracy: accuracy,
            atc_threshold,
            classes: source_probs.rows(),
        })
    }

    pub fn mean_confidence(&self) -> f64 {
        mean(&self.source_confidences)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_bool(xs: &[bool]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().filter(|&&b| b).count() as f64 / xs.len() as f64
}

/// Average confidence of the predicted class.
pub fn ac(target_probs: &Matrix) -> f64 {
    mean(&max_columns(target_probs))
}

/// Source accuracy shifted by the change in mean confidence, clamped to `[0, 1]`.
pub fn doc(cal: &SourceCalibration, target_probs: &Matrix) -> f64 {
    let shifted = cal.source_accuracy + ac(target_probs) - cal.mean_confidence();
    shifted.clamp(0.0, 1.0)
}

/// Confidence threshold whose exceedance rate on the source (strictly
/// greater) best matches the source accuracy.
///
/// Candidates are every distinct confidence plus one value below the
/// minimum; on equal mismatch the higher threshold wins.
pub fn atc_fit(source_confidences: &[f64], source_accuracy: f64) -> f64 {
    let n = source_confidences.len();
    if n == 0 {
        return 0.0;
    }
    let mut sorted = source_confidences.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let below_min = sorted[n - 1].next_down();
    let mut best = (libm::fabs(1.0 - source_accuracy), below_min);
    // sorted descending: the count strictly above sorted[i] is the number of
    // entries before the first occurrence of that value.
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let above = i;
        let gap = libm::fabs(above as f64 / n as f64 - source_accuracy);
        if gap <= best.0 {
            best = (gap, v);
        }
        while i < n && sorted[i] == v {
            i += 1;
        }
    }
    best.1
}

/// Fraction of target confidences strictly above the threshold.
pub fn atc_estimate(threshold: f64, target_confidences: &[f64]) -> f64 {
    if target_confidences.is_empty() {
        return 0.0;
    }
    target_confidences.iter().filter(|&&c| c > threshold).count() as f64
        / target_confidences.len() as f64
}

pub const IM_DEFAULT_BINS: usize = 10;

fn bin_of(conf: f64, lo: f64, bins: usize) -> usize {
    let width = (1.0 - lo) / bins as f64;
    if !(width > 0.0) {
        return 0;
    }
    let b = libm::floor((conf - lo) / width);
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

/// Importance reweighting over equal-width confidence bins on `[1/K, 1]`:
/// per-bin source accuracy weighted by target bin frequency. Bins holding
/// target mass but no source samples use the overall source accuracy.
pub fn im_estimate(cal: &SourceCalibration, target_confidences: &[f64], bins: usize) -> Result<f64> {
    if bins < 1 {
        return Err(crate::error::invalid("bins", "must be at least 1"));
    }
    if target_confidences.is_empty() {
        return Err(Error::Empty("target batch"));
    }
    let lo = 1.0 / cal.classes.max(1) as f64;
    let mut src_count = vec![0usize; bins];
    let mut src_hits = vec![0usize; bins];
    for (&c, &ok) in cal.source_confidences.iter().zip(&cal.source_correct) {
        let b = bin_of(c, lo, bins);
        src_count[b] += 1;
        src_hits[b] += ok as usize;
    }
    let mut tgt_count = vec![0usize; bins];
    for &c in target_confidences {
        tgt_count[bin_of(c, lo, bins)] += 1;
    }
    // Accumulate expected hit counts so that identical bin histograms
    // reproduce the source accuracy without rounding.
    let mut hits = 0.0;
    for b in 0..bins {
        if tgt_count[b] == 0 {
            continue;
        }
        hits += if src_count[b] == 0 {
            tgt_count[b] as f64 * cal.source_accuracy
        } else {
            (tgt_count[b] * src_hits[b]) as f64 / src_count[b] as f64
        };
    }
    Ok((hits / target_confidences.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_probs(confs_for_class0: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(2, confs_for_class0.len());
        for (j, &c) in confs_for_class0.iter().enumerate() {
            m[(0, j)] = c;
            m[(1, j)] = 1.0 - c;
        }
        m
    }

    fn cal(confs: &[f64], correct: &[bool]) -> SourceCalibration {
        let acc = mean_bool(correct);
        SourceCalibration {
            source_confidences: confs.to_vec(),
            source_correct: correct.to_vec(),
            source_accuracy: acc,
            atc_threshold: atc_fit(confs, acc),
            classes: 2,
        }
    }

    #[test]
    fn ac_examples() {
        assert!((ac(&binary_probs(&[0.9, 0.2])) - 0.85).abs() < 1e-12);
        assert_eq!(ac(&binary_probs(&[1.0, 1.0])), 1.0);
        assert_eq!(ac(&binary_probs(&[0.5, 0.5, 0.5])), 0.5);
    }

    #[test]
    fn fit_from_probs() {
        let probs = binary_probs(&[0.9, 0.8, 0.3, 0.45]);
        let c = SourceCalibration::fit(&probs, &[0, 1, 1, 0]).unwrap();
        assert_eq!(c.source_correct, vec![true, false, true, false]);
        assert_eq!(c.source_accuracy, 0.5);
        assert!(SourceCalibration::fit(&probs, &[0, 1]).is_err());
    }

    #[test]
    fn doc_examples() {
        let c = cal(&[0.9, 0.7], &[true, false]);
        assert_eq!(doc(&c, &binary_probs(&[0.9, 0.7])), c.source_accuracy);

        let mut c = cal(&[0.88, 0.88], &[true, true]);
        c.source_accuracy = 0.9;
        assert!((doc(&c, &binary_probs(&[0.78, 0.78])) - 0.80).abs() < 1e-12);

        let mut c = cal(&[0.7, 0.7], &[true, true]);
        c.source_accuracy = 0.95;
        assert_eq!(doc(&c, &binary_probs(&[0.9, 0.9])), 1.0);
    }

    #[test]
    fn atc_fit_examples() {
        let confs = [0.9, 0.8, 0.6, 0.4];
        let th = atc_fit(&confs, 0.5);
        assert_eq!(th, 0.6);
        assert_eq!(atc_estimate(th, &confs), 0.5);

        let th = atc_fit(&confs, 1.0);
        assert!(th < 0.4);
        assert_eq!(atc_estimate(th, &confs), 1.0);

        let th = atc_fit(&confs, 0.0);
        assert!(th >= 0.9);
        assert_eq!(atc_estimate(th, &confs), 0.0);
    }

    #[test]
    fn atc_estimate_examples() {
        assert_eq!(atc_estimate(0.6, &[0.7, 0.5]), 0.5);
        assert_eq!(atc_estimate(0.95, &[0.7, 0.5]), 0.0);
    }

    #[test]
    fn im_examples() {
        let c = cal(&[0.55, 0.65, 0.75, 0.95, 0.95], &[true, false, true, true, true]);
        let est = im_estimate(&c, &c.source_confidences.clone(), IM_DEFAULT_BINS).unwrap();
        assert_eq!(est, c.source_accuracy);

        // All target mass in a bin with source accuracy 0.2.
        let c = cal(
            &[0.55, 0.55, 0.55, 0.55, 0.55, 0.95],
            &[true, false, false, false, false, true],
        );
        assert!((im_estimate(&c, &[0.56, 0.57], 10).unwrap() - 0.2).abs() < 1e-12);

        // Two bins on [0.5, 1]: [0.5, 0.75) with accuracy 0.4, [0.75, 1] with 0.8.
        let mut confs = vec![0.6; 5];
        confs.extend([0.9; 5]);
        let correct = [
            true, true, false, false, false, true, true, true, true, false,
        ];
        let c = cal(&confs, &correct);
        let target = [0.6, 0.9, 0.9, 0.9];
        assert!((im_estimate(&c, &target, 2).unwrap() - 0.7).abs() < 1e-12);

        assert!(im_estimate(&c, &target, 0).is_err());
    }

    #[test]
    fn im_empty_source_bin_falls_back() {
        let c = cal(&[0.95, 0.95], &[true, false]);
        assert_eq!(im_estimate(&c, &[0.55], 10).unwrap(), 0.5);
    }
}

//! When to ask for labels and which samples to ask about.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::engine::LabelBelief;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sample-selection rule for a labeling round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Largest per-sample uncertainty first.
    Uncertainty,
    /// Largest expected cross-entropy of the model under the belief first.
    CrossEntropy,
    /// Uniformly random.
    Random,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Uncertainty => "UI",
            Strategy::CrossEntropy => "CEI",
            Strategy::Random => "RI",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionPolicy {
    /// Labels are requested when the total uncertainty is strictly above this.
    pub threshold: f64,
    /// Share of the current batch to label in one round, in `(0, 1]`.
    pub budget_fraction: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            budget_fraction: 0.5,
            strategy: Strategy::Uncertainty,
            seed: 0,
        }
    }
}

impl InterventionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(crate::error::invalid("threshold", "must be >= 0"));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(crate::error::invalid("budget_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[inline]
pub fn should_trigger(total_uncertainty: f64, policy: &InterventionPolicy) -> bool {
    total_uncertainty > policy.threshold
}

/// Number of samples to label: `ceil(fraction * n)` clamped to `[1, n]`.
pub fn budget(n: usize, policy: &InterventionPolicy) -> usize {
    if n == 0 {
        return 0;
    }
    let m = libm::ceil(policy.budget_fraction * n as f64) as usize;
    m.clamp(1, n)
}

/// Indices of the `m` largest scores; equal scores go to the lower index.
fn top_m(scores: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(m);
    idx
}

fn check_m(n: usize, m: usize) -> Result<()> {
    if m > n {
        return Err(crate::error::invalid(
            "m",
            alloc::format!("{m} exceeds batch size {n}"),
        ));
    }
    Ok(())
}

/// Top-`m` samples by per-sample uncertainty. Pinned samples have zero
/// uncertainty and so are only reached once every other sample is exhausted.
pub fn select_ui(per_sample_sd: &[f64], m: usize) -> Result<Vec<usize>> {
    check_m(per_sample_sd.len(), m)?;
    Ok(top_m(per_sample_sd, m))
}

/// Floor applied to model probabilities before taking logs.
pub const CEI_LOG_FLOOR: f64 = 1e-12;

/// Expected cross-entropy `-sum_k belief[k][j] * ln(model[k][j])` per sample.
pub fn cross_entropy_scores(belief: &LabelBelief, model_probs: &Matrix) -> Result<Vec<f64>> {
    let b = belief.probs();
    if b.rows() != model_probs.rows() || b.cols() != model_probs.cols() {
        return Err(Error::DimensionMismatch {
            expected: b.cols(),
            got: model_probs.cols(),
        });
    }
    Ok((0..b.cols())
        .map(|j| {
            -(0..b.rows())
                .map(|k| b[(k, j)] * libm::log(model_probs[(k, j)].max(CEI_LOG_FLOOR)))
                .sum::<f64>()
        })
        .collect())
}

pub fn select_cei(belief: &LabelBelief, model_probs: &Matrix, m: usize) -> Result<Vec<usize>> {
    let scores = cross_entropy_scores(belief, model_probs)?;
    check_m(scores.len(), m)?;
    Ok(top_m(&scores, m))
}

/// `m` distinct indices drawn uniformly without replacement, ascending.
pub fn select_ri<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_m(n, m)?;
    let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(threshold: f64, frac: f64) -> InterventionPolicy {
        InterventionPolicy {
            threshold,
            budget_fraction: frac,
            ..Default::default()
        }
    }

    #[test]
    fn trigger_is_strict() {
        assert!(should_trigger(0.12, &policy(0.1, 0.5)));
        assert!(!should_trigger(0.10, &policy(0.1, 0.5)));
        assert!(!should_trigger(0.0, &policy(0.1, 0.5)));
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget(200, &policy(0.1, 0.5)), 100);
        assert_eq!(budget(3, &policy(0.1, 0.5)), 2);
        assert_eq!(budget(5, &policy(0.1, 1.0)), 5);
        assert_eq!(budget(10, &policy(0.1, 0.01)), 1);
    }

    #[test]
    fn policy_validation() {
        assert!(policy(0.1, 0.5).validate().is_ok());
        assert!(policy(-0.1, 0.5).validate().is_err());
        assert!(policy(0.1, 0.0).validate().is_err());
        assert!(policy(0.1, 1.5).validate().is_err());
    }

    #[test]
    fn ui_examples() {
        let mut s = select_ui(&[0.1, 0.4, 0.3], 2).unwrap();
        s.sort();
        assert_eq!(s, vec![1, 2]);
        assert_eq!(select_ui(&[0.2, 0.2, 0.2], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_ui(&[0.0, 0.5, 0.0], 1).unwrap(), vec![1]);
        assert!(select_ui(&[0.1], 2).is_err());
    }

    #[test]
    fn cei_examples() {
        let one_hot = LabelBelief::from_probs(Matrix::from_rows(&[[1.0], [0.0]]).unwrap()).unwrap();
        let s = cross_entropy_scores(&one_hot, &Matrix::from_rows(&[[1.0], [0.0]]).unwrap()).unwrap();
        assert_eq!(s[0], 0.0);
        let s = cross_entropy_scores(&one_hot, &Matrix::from_rows(&[[0.5], [0.5]]).unwrap()).unwrap();
        assert!((s[0] - core::f64::consts::LN_2).abs() < 1e-12);
        let other = LabelBelief::from_probs(Matrix::from_rows(&[[0.0], [1.0]]).unwrap()).unwrap();
        let s = cross_entropy_scores(&other, &Matrix::from_rows(&[[1.0], [0.0]]).unwrap()).unwrap();
        assert!((s[0] - 27.631_021_115_928_547).abs() < 1e-9);

        let belief =
            LabelBelief::from_probs(Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap()).unwrap();
        let model = Matrix::from_rows(&[[1.0, 0.6], [0.0, 0.4]]).unwrap();
        assert_eq!(select_cei(&belief, &model, 1).unwrap(), vec![1]);
    }

    #[test]
    fn ri_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(select_ri(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        let a = select_ri(50, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = select_ri(50, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(select_ri(3, 4, &mut rng).is_err());
    }

    #[test]
    fn ri_is_uniform() {
        // Binomial(10000, 0.25): sd = sqrt(10000 * 0.25 * 0.75) ~ 43.3
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[select_ri(4, 1, &mut rng).unwrap()[0]] += 1;
        }
        let sd = libm::sqrt(10_000.0 * 0.25 * 0.75);
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }
}

//! Incremental label-belief propagation and the resulting accuracy and
//! uncertainty estimates.
//!
//! The engine keeps the `K x n_t` belief `B_t = onehot(y_0) * Psi_t`, where
//! `Psi_t` is the product of the conditional couplings of all consecutive
//! batch pairs seen so far. Updating `B_t = B_{t-1} * G_t` is the same
//! product regrouped, so `Psi_t` itself is only built on request.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::{one_hot, FeatureBatch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ot::{self, ConditionalCoupling, SinkhornParams};

/// Column `j` is the estimated label distribution of sample `j` of the
/// current batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBelief {
    probs: Matrix,
    pinned: Vec<bool>,
}

impl LabelBelief {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        Ok(Self {
            probs: one_hot(labels, classes)?,
            pinned: vec![false; labels.len()],
        })
    }

    /// Wraps a column-stochastic table. Nothing is pinned.
    pub fn from_probs(probs: Matrix) -> Result<Self> {
        for (j, s) in probs.col_sums().into_iter().enumerate() {
            if libm::fabs(s - 1.0) > 1e-8 {
                return Err(crate::error::invalid(
                    "belief",
                    alloc::format!("column {j} sums to {s}"),
                ));
            }
        }
        let n = probs.cols();
        Ok(Self {
            probs,
            pinned: vec![false; n],
        })
    }

    #[inline]
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    #[inline]
    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.probs.rows()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.cols()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.cols() == 0
    }

    /// Probability assigned to `class` for sample `j`.
    #[inline]
    pub fn prob(&self, class: usize, j: usize) -> f64 {
        self.probs[(class, j)]
    }

    /// Propagates the belief through a conditional coupling whose rows index
    /// the current samples. Pins are cleared: the columns now describe a new
    /// batch.
    pub fn propagate(&self, cond: &ConditionalCoupling) -> Result<Self> {
        let mut probs = self.probs.matmul(cond.matrix())?;
        // Keep columns on the simplex despite accumulated rounding.
        let sums = probs.col_sums();
        for k in 0..probs.rows() {
            for (v, s) in probs.row_mut(k).iter_mut().zip(&sums) {
                *v /= s;
            }
        }
        let n = probs.cols();
        Ok(Self {
            probs,
            pinned: vec![false; n],
        })
    }

    fn check_preds(&self, preds: &[usize]) -> Result<()> {
        if preds.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: preds.len(),
            });
        }
        if let Some(&bad) = preds.iter().find(|&&p| p >= self.classes()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.classes(),
            });
        }
        Ok(())
    }

    /// Estimated probability that each prediction is correct.
    pub fn correctness(&self, preds: &[usize]) -> Result<Vec<f64>> {
        self.check_preds(preds)?;
        Ok(preds
            .iter()
            .enumerate()
            .map(|(j, &p)| self.probs[(p, j)])
            .collect())
    }
}

/// Mean estimated probability that the model's prediction is correct.
pub fn estimate_accuracy(belief: &LabelBelief, preds: &[usize]) -> Result<f64> {
    let p = belief.correctness(preds)?;
    if p.is_empty() {
        return Err(Error::Empty("batch"));
    }
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

/// Standard deviation of the 0/1 correctness of each sample under the
/// belief, and its mean over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Uncertainty {
    pub total: f64,
    pub per_sample: Vec<f64>,
}

pub fn estimate_uncertainty(belief: &LabelBelief, preds: &[usize]) -> Result<Uncertainty> {
    let p = belief.correctness(preds)?;
    if p.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let per_sample: Vec<f64> = p
        .iter()
        .zip(belief.pinned())
        .map(|(&p, &pinned)| {
            if pinned {
                0.0
            } else {
                libm::sqrt((p * (1.0 - p)).max(0.0))
            }
        })
        .collect();
    let total = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(Uncertainty { total, per_sample })
}

/// Explicit composition of conditional couplings back to the source batch,
/// `n_0 x n_t`. Memory grows with `n_0 * n_t`; intended for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMap(Matrix);

impl TransitionMap {
    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn then(&self, cond: &ConditionalCoupling) -> Result<Self> {
        Ok(Self(self.0.matmul(cond.matrix())?))
    }

    /// Restricts column `j` to source samples carrying `label` and
    /// renormalizes. Leaves the column untouched when no such mass exists.
    fn restrict(&mut self, j: usize, label: usize, source_labels: &[usize]) {
        let mass: f64 = (0..self.0.rows())
            .filter(|&i| source_labels[i] == label)
            .map(|i| self.0[(i, j)])
            .sum();
        if mass > 0.0 {
            for (i, &y) in source_labels.iter().enumerate() {
                self.0[(i, j)] = if y == label {
                    self.0[(i, j)] / mass
                } else {
                    0.0
                };
            }
        }
    }
}

/// Diagnostics of one incremental coupling.
#[derive(Debug, Clone)]
pub struct StepTransition {
    pub conditional: ConditionalCoupling,
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Computes the conditional coupling from `prev` to `next`.
pub fn transition(
    prev: &FeatureBatch,
    next: &FeatureBatch,
    params: &SinkhornParams,
) -> Result<StepTransition> {
    if next.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let cost = ot::cost_matrix(prev, next)?;
    let coupling = ot::sinkhorn(&cost, params)?;
    let conditional = ot::conditional_coupling(&coupling)?;
    Ok(StepTransition {
        conditional,
        marginal_error: coupling.marginal_error,
        iterations: coupling.iterations,
        converged: coupling.converged,
    })
}

/// Running state of the incremental estimator for one monitored stream.
#[derive(Debug, Clone)]
pub struct Engine {
    prev: FeatureBatch,
    belief: LabelBelief,
    t: usize,
    params: SinkhornParams,
    source_labels: Vec<usize>,
    psi: Option<TransitionMap>,
}

impl Engine {
    /// Starts from the labelled source batch: the belief is the one-hot
    /// encoding of its labels.
    pub fn init(source: &FeatureBatch, classes: usize, params: SinkhornParams) -> Result<Self> {
        let labels = source
            .labels
            .as_ref()
            .ok_or(Error::Empty("source labels"))?;
        if source.is_empty() {
            return Err(Error::Empty("source batch"));
        }
        let belief = LabelBelief::from_labels(labels, classes)?;
        Ok(Self {
            prev: FeatureBatch::new(source.features.clone()),
            belief,
            t: 0,
            params,
            source_labels: labels.clone(),
            psi: None,
        })
    }

    /// Also maintains the explicit transition map from now on.
    pub fn with_transition_map(mut self) -> Self {
        if self.t == 0 {
            self.psi = Some(TransitionMap::identity(self.source_labels.len()));
        }
        self
    }

    #[inline]
    pub fn belief(&self) -> &LabelBelief {
        &self.belief
    }

    #[inline]
    pub fn step(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn params(&self) -> &SinkhornParams {
        &self.params
    }

    pub fn transition_map(&self) -> Option<&TransitionMap> {
        self.psi.as_ref()
    }

    pub fn source_onehots(&self) -> Matrix {
        one_hot(&self.source_labels, self.belief.classes()).expect("labels validated at init")
    }

    /// Couples the previous batch to `batch` and moves the belief forward.
    pub fn advance(&mut self, batch: &FeatureBatch) -> Result<StepTransition> {
        if batch.dim() != self.prev.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.prev.dim(),
                got: batch.dim(),
            });
        }
        let step = transition(&self.prev, batch, &self.params)?;
        self.advance_with(batch, &step.conditional)?;
        Ok(step)
    }

    /// Moves the belief forward through an already computed conditional
    /// coupling from the previous batch to `batch`.
    pub fn advance_with(&mut self, batch: &FeatureBatch, cond: &ConditionalCoupling) -> Result<()> {
        let m = cond.matrix();
        if m.rows() != self.prev.len() || m.cols() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: self.prev.len(),
                got: m.rows(),
            });
        }
        if batch.dim() != self.prev.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.prev.dim(),
                got: batch.dim(),
            });
        }
        let belief = self.belief.propagate(cond)?;
        if let Some(psi) = &self.psi {
            self.psi = Some(psi.then(cond)?);
        }
        self.belief = belief;
        self.prev = FeatureBatch::new(batch.features.clone());
        self.t += 1;
        Ok(())
    }

    /// Pins the belief of the queried samples to the supplied labels. The
    /// correction carries into later steps through the recurrence.
    pub fn apply_labels(&mut self, indices: &[usize], labels: &[usize]) -> Result<()> {
        if indices.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: labels.len(),
            });
        }
        let n = self.belief.len();
        let k = self.belief.classes();
        let mut seen = vec![false; n];
        for (&i, &y) in indices.iter().zip(labels) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(Error::DuplicateIndex(i));
            }
            seen[i] = true;
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: k,
                });
            }
        }
        for (&j, &y) in indices.iter().zip(labels) {
            for c in 0..k {
                self.belief.probs[(c, j)] = if c == y { 1.0 } else { 0.0 };
            }
            self.belief.pinned[j] = true;
            if let Some(psi) = &mut self.psi {
                psi.restrict(j, y, &self.source_labels);
            }
        }
        Ok(())
    }
}

/// Belief obtained by coupling the source batch directly to `target`, with
/// no intermediate steps.
pub fn nipm_belief(
    source: &FeatureBatch,
    target: &FeatureBatch,
    classes: usize,
    params: &SinkhornParams,
) -> Result<LabelBelief> {
    let labels = source
        .labels
        .as_ref()
        .ok_or(Error::Empty("source labels"))?;
    let step = transition(source, target, params)?;
    LabelBelief::from_labels(labels, classes)?.propagate(&step.conditional)
}

/// Non-incremental accuracy estimate: one coupling from source to target.
pub fn nipm_estimate(
    source: &FeatureBatch,
    target: &FeatureBatch,
    classes: usize,
    preds: &[usize],
    params: &SinkhornParams,
) -> Result<f64> {
    estimate_accuracy(&nipm_belief(source, target, classes, params)?, preds)
}

//! Empirical smoothness diagnostics for a monitored stream: per-step
//! Wasserstein shift, a Lipschitz lower bound from the closest pair of
//! differently labelled points, and permutation-tested correlation.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::FeatureBatch;
use crate::error::{Error, Result};
use crate::ot::{euclidean_cost_matrix, exact_wasserstein1};

/// 1-Wasserstein distance under Euclidean cost. When the sizes differ the
/// larger batch is subsampled (seeded, without replacement) to the smaller.
pub fn estimate_epsilon(prev: &FeatureBatch, cur: &FeatureBatch, seed: u64) -> Result<f64> {
    if prev.is_empty() || cur.is_empty() {
        return Err(Error::Empty("probe batch"));
    }
    let (a, b) = equalize(prev, cur, seed);
    let c = euclidean_cost_matrix(&a, &b)?;
    Ok(exact_wasserstein1(&c)?.cost)
}

fn equalize(prev: &FeatureBatch, cur: &FeatureBatch, seed: u64) -> (FeatureBatch, FeatureBatch) {
    let n = prev.len().min(cur.len());
    let shrink = |b: &FeatureBatch| {
        if b.len() == n {
            return FeatureBatch::new(b.features.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, b.len(), n).into_vec();
        idx.sort_unstable();
        FeatureBatch::new(b.features.select_rows(&idx))
    };
    (shrink(prev), shrink(cur))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub l_hat: f64,
    pub distance: f64,
    pub prev_index: usize,
    pub cur_index: usize,
}

/// Closest pair `(x_prev, x_cur)` with different labels; `L = 1 / distance`.
/// Ties go to the lowest `(cur_index, prev_index)`.
pub fn estimate_lipschitz(
    prev: &FeatureBatch,
    y_prev: &[usize],
    cur: &FeatureBatch,
    y_cur: &[usize],
) -> Result<LipschitzEstimate> {
    if y_prev.len() != prev.len() || y_cur.len() != cur.len() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            got: y_prev.len(),
        });
    }
    if prev.dim() != cur.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.dim(),
            got: cur.dim(),
        });
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (j, xc) in cur.features.iter_rows().enumerate() {
        for (i, xp) in prev.features.iter_rows().enumerate() {
            if y_prev[i] == y_cur[j] {
                continue;
            }
            let d2: f64 = xc.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|b| d2 < b.0) {
                best = Some((d2, i, j));
            }
        }
    }
    let (d2, i, j) = best.ok_or(Error::NoCrossLabelPair)?;
    if d2 == 0.0 {
        return Err(Error::ZeroCrossLabelDistance);
    }
    let distance = libm::sqrt(d2);
    Ok(LipschitzEstimate {
        l_hat: 1.0 / distance,
        distance,
        prev_index: i,
        cur_index: j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
}

fn rho(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation with a two-sided permutation p-value
/// `(1 + #{|rho_perm| >= |rho|}) / (1 + permutations)`.
pub fn pearson(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(crate::error::invalid("len", "need at least 3 pairs"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let r = rho(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if libm::fabs(rho(x, &shuffled)?) >= libm::fabs(r) - 1e-12 {
            extreme += 1;
        }
    }
    Ok(Correlation {
        rho: r,
        p_value: (1 + extreme) as f64 / (1 + permutations) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub eps_hat: Option<f64>,
    pub l_hat: Option<f64>,
    pub shift_strength: Option<f64>,
    pub cumulative_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmoothnessTrace {
    pub steps: Vec<TraceStep>,
}

/// Running probe over a stream. `push` takes each batch in order; the first
/// is the reference batch and yields no entry.
#[derive(Debug, Clone, Default)]
pub struct TraceBuilder {
    prev: Option<FeatureBatch>,
    cumulative: Option<f64>,
    seed: u64,
    trace: SmoothnessTrace,
}

impl TraceBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            prev: None,
            cumulative: Some(0.0),
            seed,
            trace: SmoothnessTrace::default(),
        }
    }

    /// Adds the next batch. `eps_hat` needs only features; the Lipschitz
    /// terms need labels on both sides and are `None` otherwise, which also
    /// ends the running sum.
    pub fn push(&mut self, batch: &FeatureBatch) -> Result<Option<TraceStep>> {
        let Some(prev) = self.prev.replace(batch.clone()) else {
            return Ok(None);
        };
        let t = self.trace.steps.len() + 1;
        let eps = estimate_epsilon(&prev, batch, crate::shift::derive_seed(self.seed, t as u64))?;
        let l_hat = match (&prev.labels, &batch.labels) {
            (Some(yp), Some(yc)) => Some(estimate_lipschitz(&prev, yp, batch, yc)?.l_hat),
            _ => None,
        };
        self.cumulative = match (self.cumulative, l_hat) {
            (Some(c), Some(l)) => Some(c + l * eps),
            _ => None,
        };
        let step = TraceStep {
            t,
            eps_hat: Some(eps),
            l_hat,
            shift_strength: l_hat.map(|l| (1.0 + l) * eps),
            cumulative_bound: self.cumulative,
        };
        self.trace.steps.push(step);
        Ok(Some(step))
    }

    pub fn trace(&self) -> &SmoothnessTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SmoothnessTrace {
        self.trace
    }
}

/// Probe over `batches[0]` (reference) followed by steps `1..`.
pub fn trace(batches: &[FeatureBatch], seed: u64) -> Result<SmoothnessTrace> {
    let mut b = TraceBuilder::new(seed);
    for batch in batches {
        b.push(batch)?;
    }
    Ok(b.into_trace())
}

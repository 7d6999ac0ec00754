//! Self-consistency check of a finished run directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::Method;
use crate::error::Result;
use crate::store::RunStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub steps: usize,
    pub recomputed_mae: BTreeMap<Method, f64>,
    pub summary_mae: BTreeMap<Method, f64>,
    /// Largest absolute difference between the two MAE tables; infinite
    /// when they disagree on which methods are present.
    pub max_discrepancy: f64,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.max_discrepancy == 0.0 && self.problems.is_empty()
    }
}

/// Recomputes the summary MAE straight from `steps.jsonl` and checks the
/// per-record invariants.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let store = RunStore::at(dir);
    let cfg = store.read_config()?;
    let records = store.read_records()?;
    let summary = store.read_summary()?;
    let mut problems = Vec::new();

    let mut sums: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    let mut scored = 0;
    for r in &records {
        for (m, v) in &r.estimates {
            if !(0.0..=1.0).contains(v) {
                problems.push(format!("step {}: {m} estimate {v} outside [0, 1]", r.t));
            }
        }
        let iv = &r.intervention;
        if iv.triggered && (iv.m == 0 || r.estimate_post.is_none()) {
            problems.push(format!("step {}: intervention without labels or post estimate", r.t));
        }
        if iv.indices.len() != iv.labels_used.len() {
            problems.push(format!("step {}: {} indices but {} labels", r.t, iv.indices.len(), iv.labels_used.len()));
        }
        let Some(truth) = r.acc_true else { continue };
        scored += 1;
        for &m in &cfg.methods {
            let est = if m == Method::Iupm && iv.triggered && !cfg.mae_uses_pre {
                r.estimate_post
            } else {
                r.estimates.get(&m).copied()
            };
            if let Some(e) = est {
                let s = sums.entry(m).or_insert((0.0, 0));
                s.0 += (e - truth).abs();
                s.1 += 1;
            }
        }
    }
    let recomputed: BTreeMap<Method, f64> = sums
        .into_iter()
        .filter(|(_, (_, n))| *n == scored)
        .map(|(m, (s, n))| (m, s / n as f64))
        .collect();
    let mut max = 0.0f64;
    if recomputed.keys().ne(summary.mae.keys()) {
        max = f64::INFINITY;
    } else {
        for (m, v) in &recomputed {
            max = max.max((v - summary.mae[m]).abs());
        }
    }
    if summary.steps != records.len() {
        problems.push(format!("summary counts {} steps, log has {}", summary.steps, records.len()));
    }
    let n_i = records.iter().filter(|r| r.intervention.triggered).count();
    if summary.n_interventions != n_i {
        problems.push(format!("summary counts {} interventions, log has {n_i}", summary.n_interventions));
    }
    Ok(VerifyReport {
        steps: records.len(),
        recomputed_mae: recomputed,
        summary_mae: summary.mae,
        max_discrepancy: max,
        problems,
    })
}

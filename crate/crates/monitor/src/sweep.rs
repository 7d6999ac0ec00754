//! Threshold sweeps over one prepared stream.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{Labeler, Method, PolicyConfig, RunConfig, StrategyName};
use crate::error::{MonitorError, Result};
use crate::prepare::Prepared;
use crate::run::Run;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub mae: f64,
    pub n_interventions: usize,
    /// MAE reduction per extra intervention relative to the previous row.
    pub delta_mae_per_intervention: Option<f64>,
}

/// Child config for one threshold. Its run directory sits under
/// `<output_dir>/<run_id>/sweep/`.
pub fn threshold_config(base: &RunConfig, threshold: f64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.output_dir = base.run_dir().join("sweep");
    cfg.run_id = format!("th-{threshold}");
    let keep = base.policy.clone().unwrap_or(PolicyConfig {
        threshold,
        budget_fraction: 0.5,
        strategy: StrategyName::Ui,
        force_steps: None,
    });
    cfg.policy = Some(PolicyConfig {
        // JSON has no infinity; the largest finite value never triggers either.
        threshold: if threshold.is_infinite() { f64::MAX } else { threshold },
        force_steps: None,
        ..keep
    });
    cfg
}

/// Runs `base` once per threshold, in the given order, sharing couplings.
pub fn sweep(base: &RunConfig, thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(MonitorError::Config("no thresholds given".into()));
    }
    if thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(MonitorError::Config("thresholds must be >= 0".into()));
    }
    if base.labeler != Labeler::Oracle {
        return Err(MonitorError::Config("sweeps need the oracle labeler".into()));
    }
    let mut base = base.clone();
    if !base.has(Method::Iupm) {
        base.methods.insert(0, Method::Iupm);
    }
    base.validate()?;
    let prep = Arc::new(Prepared::build(&base, None)?);
    prep.warm(base.has(Method::Nipm), false)?;
    let mut rows: Vec<SweepRow> = Vec::with_capacity(thresholds.len());
    for &th in thresholds {
        let mut run = Run::open_with(threshold_config(&base, th), Some(Arc::clone(&prep)))?;
        let summary = run.run_to_end()?;
        let mae = summary.mae.get(&Method::Iupm).copied().ok_or_else(|| {
            MonitorError::Data("the stream has no ground truth to score against".into())
        })?;
        let n = summary.n_interventions;
        let delta = rows.last().and_then(|prev| {
            (n != prev.n_interventions).then(|| (prev.mae - mae) / (n as f64 - prev.n_interventions as f64))
        });
        rows.push(SweepRow {
            threshold: th,
            mae,
            n_interventions: n,
            delta_mae_per_intervention: delta,
        });
    }
    std::fs::create_dir_all(base.run_dir())?;
    let mut buf = Vec::new();
    write_table(&mut buf, &rows)?;
    crate::store::write_atomic(&base.run_dir().join("sweep.csv"), &buf)?;
    Ok(rows)
}

pub fn write_table<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "threshold,mae,n_interventions,delta_mae_per_intervention")?;
    for r in rows {
        let d = r.delta_mae_per_intervention.map(|d| d.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.threshold, r.mae, r.n_interventions, d)?;
    }
    Ok(())
}

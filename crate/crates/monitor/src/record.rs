//! Per-step log records and run summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{Method, StrategyName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub triggered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyName>,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub indices: Vec<usize>,
    /// Class supplied for each entry of `indices`, in the same order.
    #[serde(default)]
    pub labels_used: Vec<usize>,
}

impl InterventionRecord {
    pub fn none() -> Self {
        Self {
            triggered: false,
            strategy: None,
            m: 0,
            indices: Vec::new(),
            labels_used: Vec::new(),
        }
    }
}

/// One line of `steps.jsonl`. `estimates` holds every method's estimate
/// before any intervention at this step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub n_t: usize,
    pub acc_true: Option<f64>,
    pub estimates: BTreeMap<Method, f64>,
    pub uncertainty_pre: Option<f64>,
    pub intervention: InterventionRecord,
    pub estimate_post: Option<f64>,
    pub uncertainty_post: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

impl StepRecord {
    /// Estimate that scores `method` at this step.
    pub fn scored(&self, method: Method, use_pre: bool) -> Option<f64> {
        let pre = self.estimates.get(&method).copied();
        if method == Method::Iupm && !use_pre && self.intervention.triggered {
            return self.estimate_post.or(pre);
        }
        pre
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("record serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub steps: usize,
    /// Steps that had ground truth and so entered the MAE.
    pub scored_steps: usize,
    pub mae: BTreeMap<Method, f64>,
    pub n_interventions: usize,
    pub labels_queried: usize,
    pub mae_uses_pre: bool,
}

impl Summary {
    pub fn from_records(run_id: &str, methods: &[Method], records: &[StepRecord], use_pre: bool) -> Self {
        let mut mae = BTreeMap::new();
        let scored: Vec<&StepRecord> = records.iter().filter(|r| r.acc_true.is_some()).collect();
        if !scored.is_empty() {
            for &m in methods {
                let errs: Vec<f64> = scored
                    .iter()
                    .filter_map(|r| Some((r.scored(m, use_pre)? - r.acc_true?).abs()))
                    .collect();
                if errs.len() == scored.len() {
                    mae.insert(m, errs.iter().sum::<f64>() / errs.len() as f64);
                }
            }
        }
        Self {
            run_id: run_id.to_string(),
            steps: records.len(),
            scored_steps: scored.len(),
            mae,
            n_interventions: records.iter().filter(|r| r.intervention.triggered).count(),
            labels_queried: records.iter().map(|r| r.intervention.indices.len()).sum(),
            mae_uses_pre: use_pre,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, truth: f64, iupm: f64, post: Option<f64>) -> StepRecord {
        let mut intervention = InterventionRecord::none();
        if post.is_some() {
            intervention = InterventionRecord {
                triggered: true,
                strategy: Some(StrategyName::Ui),
                m: 1,
                indices: vec![0],
                labels_used: vec![1],
            };
        }
        StepRecord {
            t,
            n_t: 4,
            acc_true: Some(truth),
            estimates: [(Method::Iupm, iupm), (Method::Ac, 0.5)].into_iter().collect(),
            uncertainty_pre: Some(0.2),
            intervention,
            estimate_post: post,
            uncertainty_post: post.map(|_| 0.0),
            wall_time_ms: None,
        }
    }

    #[test]
    fn summary_prefers_post_unless_asked() {
        let r = vec![rec(1, 0.8, 0.6, Some(0.75)), rec(2, 0.7, 0.7, None)];
        let s = Summary::from_records("x", &[Method::Iupm, Method::Ac], &r, false);
        assert!((s.mae[&Method::Iupm] - 0.025).abs() < 1e-15);
        assert!((s.mae[&Method::Ac] - 0.25).abs() < 1e-15);
        assert_eq!((s.n_interventions, s.labels_queried), (1, 1));
        let s = Summary::from_records("x", &[Method::Iupm], &r, true);
        assert!((s.mae[&Method::Iupm] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn record_json_uses_method_names() {
        let line = rec(1, 0.8, 0.6, None).to_line();
        assert!(line.contains(r#""estimates":{"IUPM":0.6,"AC":0.5}"#), "{line}");
        let back: StepRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec(1, 0.8, 0.6, None));
    }
}

//! The per-run state machine: `Init -> Running <-> AwaitingLabels -> Done`.

use std::sync::Arc;
use std::time::Instant;

use iupm_core::engine::{estimate_accuracy, estimate_uncertainty, Engine};
use iupm_core::intervention::{self, InterventionPolicy, Strategy};
use iupm_core::shift::{derive_seed, OracleLabeler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Labeler, Method, RunConfig, StrategyName};
use crate::error::{MonitorError, Result};
use crate::prepare::Prepared;
use crate::record::{InterventionRecord, StepRecord, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Init,
    Running,
    AwaitingLabels,
    Done,
}

/// A label request waiting for a human answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub run_id: String,
    pub step: usize,
    pub strategy: StrategyName,
    pub indices: Vec<usize>,
    pub classes: usize,
    /// Every sample of the current batch, row by row.
    pub features: Vec<Vec<f64>>,
    /// Model probabilities for each queried sample, in `indices` order.
    pub model_probs: Vec<Vec<f64>>,
    pub estimate_pre: f64,
    pub uncertainty_pre: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAnswer {
    pub index: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub step: usize,
    pub labels: Vec<LabelAnswer>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    Completed(StepRecord),
    AwaitingLabels(PendingQuery),
}

#[derive(Debug)]
struct Pending {
    query: PendingQuery,
    record: StepRecord,
    started: Option<Instant>,
}

pub struct RunSession {
    cfg: RunConfig,
    prep: Arc<Prepared>,
    policy: Option<InterventionPolicy>,
    force_steps: Option<Vec<usize>>,
    engine: Engine,
    records: Vec<StepRecord>,
    pending: Option<Pending>,
}

impl RunSession {
    pub fn new(cfg: RunConfig, prep: Arc<Prepared>) -> Result<Self> {
        cfg.validate()?;
        if cfg.labeler == Labeler::Oracle && cfg.policy.is_some() && prep.steps.iter().any(|s| s.raw.labels.is_none()) {
            return Err(MonitorError::Config(
                "the oracle labeler needs labels in every step file".into(),
            ));
        }
        let engine = Engine::init(&prep.init_matching, prep.classes, prep.params)?;
        Ok(Self {
            policy: cfg.intervention_policy(),
            force_steps: cfg.policy.as_ref().and_then(|p| p.force_steps.clone()),
            cfg,
            prep,
            engine,
            records: Vec::new(),
            pending: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn prepared(&self) -> &Arc<Prepared> {
        &self.prep
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref().map(|p| &p.query)
    }

    /// Steps completed so far.
    pub fn completed(&self) -> usize {
        self.records.len()
    }

    pub fn total_steps(&self) -> usize {
        self.prep.len()
    }

    pub fn state(&self) -> RunState {
        if self.pending.is_some() {
            RunState::AwaitingLabels
        } else if self.records.len() == self.prep.len() {
            RunState::Done
        } else if self.records.is_empty() {
            RunState::Init
        } else {
            RunState::Running
        }
    }

    pub fn summary(&self) -> Summary {
        Summary::from_records(&self.cfg.run_id, &self.cfg.methods, &self.records, self.cfg.mae_uses_pre)
    }

    fn triggers(&self, t: usize, uncertainty: f64) -> bool {
        let Some(policy) = &self.policy else {
            return false;
        };
        match &self.force_steps {
            Some(steps) => steps.contains(&t),
            None => intervention::should_trigger(uncertainty, policy),
        }
    }

    /// Processes the next step. With a human labeler a fired trigger leaves
    /// the run waiting for [`RunSession::submit_labels`].
    pub fn advance(&mut self) -> Result<Advance> {
        match self.state() {
            RunState::AwaitingLabels => {
                return Err(MonitorError::rejected(
                    "awaiting_labels",
                    format!("step {} is waiting for labels", self.pending.as_ref().unwrap().query.step),
                ))
            }
            RunState::Done => return Err(MonitorError::rejected("run_complete", "every step has been processed")),
            _ => {}
        }
        let started = self.cfg.record_wall_time.then(Instant::now);
        let t = self.records.len() + 1;
        let prep = Arc::clone(&self.prep);
        let step = prep.step(t);
        let cond = prep.coupling(t)?;
        let mut engine = self.engine.clone();
        engine.advance_with(&step.matching, &cond.conditional)?;

        let mut estimates = std::collections::BTreeMap::new();
        let mut uncertainty = None;
        for &m in &self.cfg.methods {
            let v = if m == Method::Iupm {
                let u = estimate_uncertainty(engine.belief(), &step.preds)?;
                uncertainty = Some(u);
                estimate_accuracy(engine.belief(), &step.preds)?
            } else {
                prep.baseline(m, t)?
            };
            estimates.insert(m, v);
        }
        let mut record = StepRecord {
            t,
            n_t: step.len(),
            acc_true: step.acc_true,
            estimates,
            uncertainty_pre: uncertainty.as_ref().map(|u| u.total),
            intervention: InterventionRecord::none(),
            estimate_post: None,
            uncertainty_post: None,
            wall_time_ms: None,
        };
        let fire = uncertainty.as_ref().is_some_and(|u| self.triggers(t, u.total));
        self.engine = engine;
        if !fire {
            return Ok(Advance::Completed(self.finish(record, started)));
        }
        let policy = self.policy.expect("trigger implies a policy");
        let u = uncertainty.expect("trigger implies IUPM");
        let m = intervention::budget(step.len(), &policy);
        let indices = match policy.strategy {
            Strategy::Uncertainty => intervention::select_ui(&u.per_sample, m)?,
            Strategy::CrossEntropy => intervention::select_cei(self.engine.belief(), &step.probs, m)?,
            Strategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(policy.seed, t as u64));
                intervention::select_ri(step.len(), m, &mut rng)?
            }
        };
        let strategy = self.cfg.policy.as_ref().expect("policy configured").strategy;
        record.intervention = InterventionRecord {
            triggered: true,
            strategy: Some(strategy),
            m,
            indices: indices.clone(),
            labels_used: Vec::new(),
        };
        match self.cfg.labeler {
            Labeler::Oracle => {
                let labels = OracleLabeler.query(&step.raw, &indices)?;
                self.resolve(record, &labels)?;
                let last = self.records.last_mut().expect("just pushed");
                last.wall_time_ms = started.map(|s| s.elapsed().as_secs_f64() * 1e3);
                Ok(Advance::Completed(last.clone()))
            }
            Labeler::Human => {
                let query = PendingQuery {
                    run_id: self.cfg.run_id.clone(),
                    step: t,
                    strategy,
                    classes: prep.classes,
                    features: step.raw.features.iter_rows().map(<[f64]>::to_vec).collect(),
                    model_probs: indices
                        .iter()
                        .map(|&j| (0..prep.classes).map(|c| step.probs[(c, j)]).collect())
                        .collect(),
                    indices,
                    estimate_pre: record.estimates[&Method::Iupm],
                    uncertainty_pre: u.total,
                };
                self.pending = Some(Pending {
                    query: query.clone(),
                    record,
                    started,
                });
                Ok(Advance::AwaitingLabels(query))
            }
        }
    }

    fn finish(&mut self, mut record: StepRecord, started: Option<Instant>) -> StepRecord {
        record.wall_time_ms = started.map(|s| s.elapsed().as_secs_f64() * 1e3);
        self.records.push(record.clone());
        record
    }

    /// Pins `labels` (aligned with the record's indices) and completes the step.
    fn resolve(&mut self, mut record: StepRecord, labels: &[usize]) -> Result<()> {
        let step = self.prep.step(record.t);
        self.engine.apply_labels(&record.intervention.indices, labels)?;
        record.intervention.labels_used = labels.to_vec();
        record.estimate_post = Some(estimate_accuracy(self.engine.belief(), &step.preds)?);
        record.uncertainty_post = Some(estimate_uncertainty(self.engine.belief(), &step.preds)?.total);
        self.records.push(record);
        Ok(())
    }

    /// Answers the pending query. The submission must name the pending step
    /// and cover exactly the queried indices, each once, with valid classes;
    /// anything else is rejected and leaves the run untouched.
    pub fn submit_labels(&mut self, sub: &LabelSubmission) -> Result<StepRecord> {
        let Some(p) = &self.pending else {
            return Err(MonitorError::rejected("no_pending", "no label query is pending"));
        };
        let q = &p.query;
        if sub.step != q.step {
            return Err(MonitorError::rejected(
                "stale_step",
                format!("labels are for step {}, pending step is {}", sub.step, q.step),
            ));
        }
        let mut by_index = std::collections::BTreeMap::new();
        for a in &sub.labels {
            if a.class >= q.classes {
                return Err(MonitorError::rejected(
                    "invalid_labels",
                    format!("class {} for index {} is outside 0..{}", a.class, a.index, q.classes),
                ));
            }
            if by_index.insert(a.index, a.class).is_some() {
                return Err(MonitorError::rejected("invalid_labels", format!("index {} labelled twice", a.index)));
            }
        }
        if let Some(extra) = by_index.keys().find(|i| !q.indices.contains(i)) {
            return Err(MonitorError::rejected("invalid_labels", format!("index {extra} was not queried")));
        }
        let missing = q.indices.iter().filter(|i| !by_index.contains_key(i)).count();
        if missing > 0 {
            return Err(MonitorError::rejected(
                "invalid_labels",
                format!("{missing} of {} queried samples have no label", q.indices.len()),
            ));
        }
        let labels: Vec<usize> = q.indices.iter().map(|i| by_index[i]).collect();
        let p = self.pending.take().expect("checked above");
        let saved = self.engine.clone();
        if let Err(e) = self.resolve(p.record.clone(), &labels) {
            self.engine = saved;
            self.pending = Some(p);
            return Err(e);
        }
        let last = self.records.last_mut().expect("just pushed");
        last.wall_time_ms = p.started.map(|s| s.elapsed().as_secs_f64() * 1e3);
        Ok(last.clone())
    }

    /// Runs every remaining step with the oracle labeler.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.state() != RunState::Done {
            if let Advance::AwaitingLabels(q) = self.advance()? {
                return Err(MonitorError::rejected(
                    "awaiting_labels",
                    format!("step {} needs human labels", q.step),
                ));
            }
        }
        Ok(())
    }

    /// Rebuilds the state from logged records. Each record must match what
    /// this session recomputes, apart from wall time.
    pub fn replay(&mut self, records: &[StepRecord]) -> Result<()> {
        for r in records {
            let outcome = self.advance()?;
            let mut got = match outcome {
                Advance::Completed(rec) => rec,
                Advance::AwaitingLabels(q) => {
                    let labels = q
                        .indices
                        .iter()
                        .zip(&r.intervention.labels_used)
                        .map(|(&index, &class)| LabelAnswer { index, class })
                        .collect();
                    self.submit_labels(&LabelSubmission { step: q.step, labels })?
                }
            };
            got.wall_time_ms = r.wall_time_ms;
            if &got != r {
                return Err(MonitorError::Data(format!(
                    "logged step {} does not match its recomputation",
                    r.t
                )));
            }
            *self.records.last_mut().expect("replayed step") = got;
        }
        Ok(())
    }
}

//! A session bound to its run directory: every state change is written
//! before it is reported, so a restart resumes from the last completed step.

use std::sync::Arc;

use crate::config::{Method, RunConfig};
use crate::error::{MonitorError, Result};
use crate::prepare::Prepared;
use crate::record::{StepRecord, Summary};
use crate::session::{Advance, LabelSubmission, RunSession, RunState};
use crate::store::RunStore;

pub struct Run {
    session: RunSession,
    store: RunStore,
}

impl Run {
    /// Creates the run directory or resumes the run found there.
    pub fn open(cfg: RunConfig) -> Result<Self> {
        Self::open_with(cfg, None)
    }

    /// As [`Run::open`], reusing already prepared data when given.
    pub fn open_with(cfg: RunConfig, prep: Option<Arc<Prepared>>) -> Result<Self> {
        cfg.validate()?;
        let store = RunStore::open(&cfg)?;
        let prep = match prep {
            Some(p) => p,
            None => {
                let stored = store.read_model()?;
                let had_model = stored.is_some();
                let p = Prepared::build(&cfg, stored)?;
                if !had_model {
                    if let Some(m) = &p.model {
                        store.write_model(m)?;
                    }
                }
                Arc::new(p)
            }
        };
        let mut session = RunSession::new(cfg, prep)?;
        let records = store.read_records()?;
        session.replay(&records)?;
        if let Some(logged) = store.read_pending()?.filter(|q| q.step > records.len()) {
            match session.advance()? {
                Advance::AwaitingLabels(q) if q == logged => {}
                _ => {
                    return Err(MonitorError::Data(
                        "pending query on disk does not match its recomputation".into(),
                    ))
                }
            }
        }
        if session.pending().is_none() {
            store.clear_pending()?;
        }
        let mut run = Self { session, store };
        run.finalize_if_done()?;
        Ok(run)
    }

    pub fn session(&self) -> &RunSession {
        &self.session
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn state(&self) -> RunState {
        self.session.state()
    }

    fn finalize_if_done(&mut self) -> Result<()> {
        if self.session.state() != RunState::Done {
            return Ok(());
        }
        self.store.write_summary(&self.session.summary())?;
        if self.session.config().probe {
            self.store.write_trace(self.session.prepared().trace()?)?;
        }
        Ok(())
    }

    pub fn advance(&mut self) -> Result<Advance> {
        let out = self.session.advance()?;
        match &out {
            Advance::Completed(rec) => {
                self.store.append_record(rec)?;
                self.finalize_if_done()?;
            }
            Advance::AwaitingLabels(q) => self.store.write_pending(q)?,
        }
        Ok(out)
    }

    pub fn submit_labels(&mut self, sub: &LabelSubmission) -> Result<StepRecord> {
        let rec = self.session.submit_labels(sub)?;
        self.store.append_record(&rec)?;
        self.store.clear_pending()?;
        self.finalize_if_done()?;
        Ok(rec)
    }

    pub fn run_to_end(&mut self) -> Result<Summary> {
        while self.state() != RunState::Done {
            if let Advance::AwaitingLabels(q) = self.advance()? {
                return Err(MonitorError::rejected(
                    "awaiting_labels",
                    format!("step {} needs human labels", q.step),
                ));
            }
        }
        Ok(self.session.summary())
    }
}

/// Runs a configuration to completion with the oracle labeler and writes
/// all artifacts.
pub fn run_batch(cfg: RunConfig) -> Result<Summary> {
    if cfg.labeler != crate::config::Labeler::Oracle {
        return Err(MonitorError::Config("batch runs need the oracle labeler".into()));
    }
    let mut run = Run::open(cfg)?;
    let prep = run.session().prepared().clone();
    prep.warm(run.session().config().has(Method::Nipm), false)?;
    run.run_to_end()
}

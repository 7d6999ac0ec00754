//! Everything a run needs before its first step: data, the trained model,
//! predictions and source calibration. Couplings, NIPM estimates and the
//! probe trace depend only on data, so they are cached here and shared by
//! every policy run over the same stream.

use std::sync::{Arc, OnceLock};

use iupm_core::baselines::{self, SourceCalibration};
use iupm_core::batch::{accuracy, argmax_columns, max_columns};
use iupm_core::engine::{self, StepTransition};
use iupm_core::mlp::{self, MlpModel, TrainConfig};
use iupm_core::ot::SinkhornParams;
use iupm_core::probe::{SmoothnessTrace, TraceBuilder};
use iupm_core::shift::GeneratedStream;
use iupm_core::{FeatureBatch, Matrix};

use crate::config::{DataSource, MatchingSpace, Method, RunConfig};
use crate::data;
use crate::error::{MonitorError, Result};

/// One monitored step after the classifier has seen it.
#[derive(Debug, Clone)]
pub struct StepData {
    /// Input features; labels when ground truth exists.
    pub raw: FeatureBatch,
    /// Features the transport plan is computed on.
    pub matching: FeatureBatch,
    /// `K x n` model probabilities.
    pub probs: Matrix,
    pub preds: Vec<usize>,
    pub confidences: Vec<f64>,
    pub acc_true: Option<f64>,
}

impl StepData {
    fn new(raw: FeatureBatch, matching: FeatureBatch, probs: Matrix) -> Self {
        let preds = argmax_columns(&probs);
        let confidences = max_columns(&probs);
        let acc_true = raw.labels.as_ref().map(|y| accuracy(&preds, y));
        Self {
            raw,
            matching: FeatureBatch::new(matching.features),
            probs,
            preds,
            confidences,
            acc_true,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

type Cached<T> = OnceLock<std::result::Result<T, iupm_core::Error>>;

#[derive(Debug)]
pub struct Prepared {
    pub classes: usize,
    /// Labelled initial batch in input space.
    pub init_raw: FeatureBatch,
    /// Labelled initial batch in matching space.
    pub init_matching: FeatureBatch,
    /// `K x n` model probabilities on the initial batch.
    pub init_probs: Matrix,
    pub steps: Vec<StepData>,
    pub calibration: SourceCalibration,
    pub params: SinkhornParams,
    pub im_bins: usize,
    /// Present when the classifier was trained here.
    pub model: Option<MlpModel>,
    probe_seed: u64,
    couplings: Vec<Cached<Arc<StepTransition>>>,
    nipm: Vec<Cached<f64>>,
    trace: Cached<SmoothnessTrace>,
}

impl Prepared {
    /// Generates or reads the data and trains the classifier. A previously
    /// trained `model` is used as is when given.
    pub fn build(cfg: &RunConfig, model: Option<MlpModel>) -> Result<Self> {
        let seeds = cfg.seeds();
        match &cfg.data {
            DataSource::Synthetic(s) => {
                let stream = GeneratedStream::generate(&s.stream(seeds.data))?;
                let train_y = stream.train.labels.as_ref().expect("generated data is labelled");
                let model = match model {
                    Some(m) => m,
                    None => mlp::train(
                        &stream.train.features,
                        train_y,
                        2,
                        &TrainConfig {
                            learning_rate: cfg.classifier.learning_rate,
                            epochs: cfg.classifier.epochs,
                            hidden: cfg.classifier.hidden,
                            seed: seeds.classifier,
                        },
                    )?,
                };
                if model.inputs() != stream.init.dim() || model.classes() != 2 {
                    return Err(MonitorError::Config("stored model does not match the data".into()));
                }
                let embed = |b: &FeatureBatch| -> Result<FeatureBatch> {
                    Ok(match cfg.matching {
                        MatchingSpace::Raw => b.clone(),
                        MatchingSpace::Hidden => FeatureBatch {
                            features: model.hidden_features(&b.features)?,
                            labels: b.labels.clone(),
                        },
                    })
                };
                let init_probs = model.predict_proba(&stream.init.features)?;
                let init_matching = embed(&stream.init)?;
                let mut steps = Vec::with_capacity(stream.steps.len());
                for b in &stream.steps {
                    let probs = model.predict_proba(&b.features)?;
                    steps.push(StepData::new(b.clone(), embed(b)?, probs));
                }
                Self::assemble(cfg, stream.init, init_matching, init_probs, steps, Some(model))
            }
            DataSource::External(e) => {
                let (init, files) = data::ingest(&e.init, &e.steps)?;
                let init_probs = init.probs.expect("ingest checks init probabilities");
                let steps = files
                    .into_iter()
                    .map(|f| {
                        let probs = f.probs.expect("ingest checks step probabilities");
                        StepData::new(f.batch.clone(), f.batch, probs)
                    })
                    .collect();
                Self::assemble(cfg, init.batch.clone(), init.batch, init_probs, steps, None)
            }
        }
    }

    fn assemble(
        cfg: &RunConfig,
        init_raw: FeatureBatch,
        init_matching: FeatureBatch,
        init_probs: Matrix,
        steps: Vec<StepData>,
        model: Option<MlpModel>,
    ) -> Result<Self> {
        let labels = init_raw.labels.as_ref().expect("initial batch is labelled");
        let calibration = SourceCalibration::fit(&init_probs, labels)?;
        let n = steps.len();
        Ok(Self {
            classes: init_probs.rows(),
            init_probs,
            init_raw,
            init_matching,
            steps,
            calibration,
            params: SinkhornParams::new(cfg.ot_lambda),
            im_bins: cfg.im_bins,
            model,
            probe_seed: cfg.seeds().subsampling,
            couplings: (0..n).map(|_| OnceLock::new()).collect(),
            nipm: (0..n).map(|_| OnceLock::new()).collect(),
            trace: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step `t`, counted from 1.
    pub fn step(&self, t: usize) -> &StepData {
        &self.steps[t - 1]
    }

    fn matching_before(&self, t: usize) -> &FeatureBatch {
        if t == 1 {
            &self.init_matching
        } else {
            &self.steps[t - 2].matching
        }
    }

    /// Coupling from step `t - 1` to step `t`.
    pub fn coupling(&self, t: usize) -> Result<Arc<StepTransition>> {
        Ok(self.couplings[t - 1]
            .get_or_init(|| {
                engine::transition(self.matching_before(t), &self.steps[t - 1].matching, &self.params).map(Arc::new)
            })
            .clone()?)
    }

    /// Direct coupling from the initial batch to step `t`.
    pub fn nipm(&self, t: usize) -> Result<f64> {
        Ok(*self.nipm[t - 1]
            .get_or_init(|| {
                let s = &self.steps[t - 1];
                engine::nipm_estimate(&self.init_matching, &s.matching, self.classes, &s.preds, &self.params)
            })
            .as_ref()
            .map_err(Clone::clone)?)
    }

    /// Probe over the input-space stream, initial batch first.
    pub fn trace(&self) -> Result<&SmoothnessTrace> {
        self.trace
            .get_or_init(|| {
                let mut b = TraceBuilder::new(self.probe_seed);
                b.push(&self.init_raw)?;
                for s in &self.steps {
                    b.push(&s.raw)?;
                }
                Ok(b.into_trace())
            })
            .as_ref()
            .map_err(|e| MonitorError::Numerical(e.clone()))
    }

    /// Label-free baseline estimate for step `t`.
    pub fn baseline(&self, method: Method, t: usize) -> Result<f64> {
        let s = self.step(t);
        let cal = &self.calibration;
        Ok(match method {
            Method::Ac => baselines::ac(&s.probs),
            Method::Doc => baselines::doc(cal, &s.probs),
            Method::Atc => baselines::atc_estimate(cal.atc_threshold, &s.confidences),
            Method::Im => baselines::im_estimate(cal, &s.confidences, self.im_bins)?,
            Method::Nipm => self.nipm(t)?,
            Method::Iupm => unreachable!("IUPM comes from the engine"),
        })
    }

    /// Computes every coupling (and NIPM estimate when asked) on a pool of
    /// threads. Later lookups are then free.
    pub fn warm(&self, with_nipm: bool, with_trace: bool) -> Result<()> {
        let n = self.len();
        let threads = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let jobs = if with_nipm { 2 * n } else { n };
        std::thread::scope(|scope| {
            if with_trace {
                scope.spawn(|| {
                    let _ = self.trace();
                });
            }
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let j = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if j >= jobs {
                        break;
                    }
                    if j < n {
                        let _ = self.coupling(j + 1);
                    } else {
                        let _ = self.nipm(j - n + 1);
                    }
                });
            }
        });
        for t in 1..=n {
            self.coupling(t)?;
            if with_nipm {
                self.nipm(t)?;
            }
        }
        if with_trace {
            self.trace()?;
        }
        Ok(())
    }
}

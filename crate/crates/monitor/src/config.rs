//! Run configuration as read from JSON.

use std::fmt;
use std::path::{Path, PathBuf};

use iupm_core::intervention::{InterventionPolicy, Strategy};
use iupm_core::shift::{Dataset, Pivot, ShiftKind, ShiftStream};
use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Master seed; every random concern gets its own stream derived from it.
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub matching: MatchingSpace,
    #[serde(default = "default_lambda")]
    pub ot_lambda: f64,
    #[serde(default = "Method::all")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub labeler: Labeler,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    /// Score the intervened IUPM trace by its pre-intervention estimate.
    #[serde(default)]
    pub mae_uses_pre: bool,
    #[serde(default = "default_true")]
    pub probe: bool,
    /// Fill `wall_time_ms` in step records. Off by default so that replays
    /// produce byte-identical logs.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_bins")]
    pub im_bins: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_lambda() -> f64 {
    1e-4
}

fn default_true() -> bool {
    true
}

fn default_bins() -> usize {
    iupm_core::baselines::IM_DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    External(ExternalSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub dataset: DatasetName,
    pub shift: ShiftName,
    pub magnitude: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub pivot: PivotName,
}

fn default_steps() -> usize {
    100
}

fn default_samples() -> usize {
    200
}

/// Per-step CSV files produced elsewhere (features plus model
/// probabilities). `init` must carry labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSource {
    pub init: PathBuf,
    pub steps: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Clusters,
    Moons,
    Circles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftName {
    Rotation,
    Translation,
    Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotName {
    #[default]
    Origin,
    TrainingMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingSpace {
    #[default]
    Raw,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IUPM")]
    Iupm,
    #[serde(rename = "NIPM")]
    Nipm,
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "DOC")]
    Doc,
    #[serde(rename = "ATC")]
    Atc,
    #[serde(rename = "IM")]
    Im,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Iupm,
        Method::Nipm,
        Method::Ac,
        Method::Doc,
        Method::Atc,
        Method::Im,
    ];

    pub fn all() -> Vec<Method> {
        Self::ALL.to_vec()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Iupm => "IUPM",
            Method::Nipm => "NIPM",
            Method::Ac => "AC",
            Method::Doc => "DOC",
            Method::Atc => "ATC",
            Method::Im => "IM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyName {
    #[serde(rename = "UI")]
    Ui,
    #[serde(rename = "CEI")]
    Cei,
    #[serde(rename = "RI")]
    Ri,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub threshold: f64,
    #[serde(default = "default_budget")]
    pub budget_fraction: f64,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyName,
    /// Intervene at exactly these steps, ignoring the threshold.
    #[serde(default)]
    pub force_steps: Option<Vec<usize>>,
}

fn default_budget() -> f64 {
    0.5
}

fn default_strategy() -> StrategyName {
    StrategyName::Ui
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeler {
    #[default]
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_hidden() -> usize {
    128
}

fn default_epochs() -> usize {
    2000
}

fn default_lr() -> f64 {
    1e-3
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
        }
    }
}

/// Independent seeds per random concern, so that enabling one feature never
/// shifts another's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub classifier: u64,
    pub random_intervention: u64,
    pub subsampling: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let d = |k| iupm_core::shift::derive_seed(seed, k);
        Self {
            data: d(1),
            classifier: d(2),
            random_intervention: d(3),
            subsampling: d(4),
        }
    }
}

impl From<DatasetName> for Dataset {
    fn from(d: DatasetName) -> Self {
        match d {
            DatasetName::Clusters => Dataset::Clusters,
            DatasetName::Moons => Dataset::Moons,
            DatasetName::Circles => Dataset::Circles,
        }
    }
}

impl From<ShiftName> for ShiftKind {
    fn from(s: ShiftName) -> Self {
        match s {
            ShiftName::Rotation => ShiftKind::Rotation,
            ShiftName::Translation => ShiftKind::Translation,
            ShiftName::Scaling => ShiftKind::Scaling,
        }
    }
}

impl From<StrategyName> for Strategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Ui => Strategy::Uncertainty,
            StrategyName::Cei => Strategy::CrossEntropy,
            StrategyName::Ri => Strategy::Random,
        }
    }
}

impl SyntheticSource {
    pub fn stream(&self, seed: u64) -> ShiftStream {
        ShiftStream {
            dataset: self.dataset.into(),
            shift: self.shift.into(),
            magnitude: self.magnitude,
            steps: self.steps,
            samples_per_step: self.samples_per_step,
            seed,
            noise: self.noise,
            pivot: match self.pivot {
                PivotName::Origin => Pivot::Origin,
                PivotName::TrainingMean => Pivot::TrainingMean,
            },
        }
    }
}

impl PolicyConfig {
    pub fn policy(&self, seed: u64) -> InterventionPolicy {
        InterventionPolicy {
            threshold: self.threshold,
            budget_fraction: self.budget_fraction,
            strategy: self.strategy.into(),
            seed,
        }
    }
}

fn config_err(msg: impl Into<String>) -> MonitorError {
    MonitorError::Config(msg.into())
}

impl RunConfig {
    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return Err(config_err(format!(
                "run_id {:?} must be non-empty ASCII letters, digits, '-', '_' or '.'",
                self.run_id
            )));
        }
        if self.methods.is_empty() {
            return Err(config_err("at least one method is required"));
        }
        if !(self.ot_lambda > 0.0 && self.ot_lambda.is_finite()) {
            return Err(config_err("ot_lambda must be positive and finite"));
        }
        if self.im_bins == 0 {
            return Err(config_err("im_bins must be at least 1"));
        }
        if let Some(p) = &self.policy {
            if !self.has(Method::Iupm) {
                return Err(config_err("an intervention policy needs the IUPM method"));
            }
            if p.threshold.is_nan() || p.threshold < 0.0 {
                return Err(config_err("policy.threshold must be >= 0"));
            }
            self.policy_for(p)
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }
        match &self.data {
            DataSource::Synthetic(s) => {
                s.stream(0).validate().map_err(|e| config_err(e.to_string()))?;
                if let Some(p) = &self.policy {
                    if let Some(bad) = p.force_steps.iter().flatten().find(|&&k| k == 0 || k > s.steps) {
                        return Err(config_err(format!("force_steps entry {bad} outside 1..={}", s.steps)));
                    }
                }
            }
            DataSource::External(e) => {
                if e.steps.is_empty() {
                    return Err(config_err("external data needs at least one step file"));
                }
                if self.matching == MatchingSpace::Hidden {
                    return Err(config_err(
                        "hidden matching needs the built-in classifier; external data carries its own features",
                    ));
                }
            }
        }
        Ok(())
    }

    fn policy_for(&self, p: &PolicyConfig) -> InterventionPolicy {
        p.policy(self.seeds().random_intervention)
    }

    pub fn intervention_policy(&self) -> Option<InterventionPolicy> {
        self.policy.as_ref().map(|p| self.policy_for(p))
    }

    /// Parses and validates a config file. Relative external data paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::External(ext) = &mut cfg.data {
            ext.init = base.join(&ext.init);
            for s in &mut ext.steps {
                *s = base.join(&*s);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON text: fixed field order, pretty printed.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}

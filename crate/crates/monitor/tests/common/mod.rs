#![allow(dead_code)]

use std::path::Path;

use iupm_monitor::config::{
    ClassifierConfig, DataSource, DatasetName, Labeler, Method, PolicyConfig, RunConfig, ShiftName, StrategyName,
    SyntheticSource,
};

/// A short moons rotation run that trains in well under a second.
pub fn small(out: &Path, id: &str) -> RunConfig {
    let text = format!(
        r#"{{"run_id": "{id}", "output_dir": {out:?}, "seed": 3,
            "data": {{"kind": "synthetic", "dataset": "moons", "shift": "rotation", "magnitude": 6.0,
                      "steps": 8, "samples_per_step": 40}},
            "classifier": {{"hidden": 16, "epochs": 300, "learning_rate": 0.01}}}}"#
    );
    let cfg: RunConfig = serde_json::from_str(&text).unwrap();
    cfg.validate().unwrap();
    cfg
}

pub fn with_policy(mut cfg: RunConfig, threshold: f64, strategy: StrategyName, labeler: Labeler) -> RunConfig {
    cfg.policy = Some(PolicyConfig {
        threshold,
        budget_fraction: 0.25,
        strategy,
        force_steps: None,
    });
    cfg.labeler = labeler;
    cfg
}

pub fn moons(seed: u64, steps: usize) -> RunConfig {
    RunConfig {
        run_id: format!("moons-{seed}"),
        output_dir: "runs".into(),
        seed,
        data: DataSource::Synthetic(SyntheticSource {
            dataset: DatasetName::Moons,
            shift: ShiftName::Rotation,
            magnitude: 2.0,
            steps,
            samples_per_step: 200,
            noise: None,
            pivot: Default::default(),
        }),
        matching: Default::default(),
        ot_lambda: 1e-4,
        methods: Method::all(),
        policy: None,
        labeler: Labeler::Oracle,
        classifier: ClassifierConfig::default(),
        mae_uses_pre: false,
        probe: true,
        record_wall_time: false,
        im_bins: 10,
    }
}

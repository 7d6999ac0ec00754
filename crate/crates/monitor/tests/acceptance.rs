//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use iupm_core::engine::{Engine, LabelBelief};
use iupm_core::mlp::{grad_check, grad_check_against, train, MlpModel, TrainConfig};
use iupm_core::ot::{cost_matrix, exact_wasserstein1, sinkhorn, SinkhornParams};
use iupm_core::probe::{estimate_lipschitz, pearson, trace};
use iupm_core::shift::make_moons;
use iupm_core::{FeatureBatch, Matrix};
use iupm_monitor::config::{
    DataSource, DatasetName, ExternalSource, Method, PolicyConfig, RunConfig, ShiftName, StrategyName,
    SyntheticSource,
};
use iupm_monitor::prepare::Prepared;
use iupm_monitor::record::{StepRecord, Summary};
use iupm_monitor::session::RunSession;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn stream_config(seed: u64, dataset: DatasetName, shift: ShiftName, magnitude: f64) -> RunConfig {
    let mut cfg = common::moons(seed, 100);
    cfg.run_id = format!("{dataset:?}-{seed}").to_lowercase();
    cfg.data = DataSource::Synthetic(SyntheticSource {
        dataset,
        shift,
        magnitude,
        steps: 100,
        samples_per_step: 200,
        noise: None,
        pivot: Default::default(),
    });
    cfg
}

fn policy(threshold: f64, strategy: StrategyName, force_steps: Option<Vec<usize>>) -> Option<PolicyConfig> {
    Some(PolicyConfig {
        threshold,
        budget_fraction: 0.5,
        strategy,
        force_steps,
    })
}

struct Outcome {
    summary: Summary,
    records: Vec<StepRecord>,
}

fn run(prep: &Arc<Prepared>, base: &RunConfig, pol: Option<PolicyConfig>) -> Outcome {
    let mut cfg = base.clone();
    cfg.policy = pol;
    let mut s = RunSession::new(cfg, Arc::clone(prep)).unwrap();
    s.run_to_end().unwrap();
    Outcome {
        summary: s.summary(),
        records: s.records().to_vec(),
    }
}

fn mae(o: &Outcome) -> f64 {
    o.summary.mae[&Method::Iupm]
}

// ---------------------------------------------------------------- oracles

/// Minimum mean matched cost over all permutations, by recursion.
fn brute_w1(c: &Matrix) -> f64 {
    fn go(c: &Matrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = c.rows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c[(row, j)], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.rows()], 0.0, &mut best);
    best / c.rows() as f64
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> FeatureBatch {
    let data = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    FeatureBatch::labelled(Matrix::from_vec(n, 2, data).unwrap(), labels).unwrap()
}

fn column_deviation(b: &LabelBelief) -> f64 {
    b.probs().col_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- criteria

fn ot_oracle(r: &mut Report) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut exact_ok, mut worst) = (true, 0.0f64);
    for case in 0..200 {
        let n = 1 + case % 8;
        let (a, b) = (random_batch(&mut rng, n, 2), random_batch(&mut rng, n, 2));
        let c = cost_matrix(&a, &b).unwrap();
        let oracle = brute_w1(c.values());
        exact_ok &= exact_wasserstein1(&c).unwrap().cost == oracle;
        let g = sinkhorn(&c, &SinkhornParams::new(1e-4 * c.mean())).unwrap();
        worst = worst.max((g.cost(&c) - oracle).abs() / oracle.max(f64::MIN_POSITIVE));
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check(
        "OT oracle equivalence",
        exact_ok && worst < 0.01 && secs < 30.0,
        format!("200 instances, exact assignment equal: {exact_ok}, worst Sinkhorn gap {:.3e}, {secs:.1}s", worst),
    );
}

fn stochasticity(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let classes = rng.random_range(2..4);
        let n0 = rng.random_range(3..12);
        let source = random_batch(&mut rng, n0, classes);
        let lambda = [1e-3, 1e-2, 0.1, 1.0][rng.random_range(0..4)];
        let mut e = Engine::init(&source, classes, SinkhornParams::new(lambda)).unwrap();
        for _ in 0..rng.random_range(1..6) {
            if e.step() == 0 || rng.random_bool(0.6) {
                let n = rng.random_range(2..12);
                e.advance(&random_batch(&mut rng, n, classes)).unwrap();
            } else {
                let n = e.belief().len();
                let m = rng.random_range(1..=n);
                let idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
                let y: Vec<usize> = idx.iter().map(|_| rng.random_range(0..classes)).collect();
                e.apply_labels(&idx, &y).unwrap();
            }
            worst = worst.max(column_deviation(e.belief()));
        }
    }
    let a = make_moons(200, 0.2, 1).unwrap();
    let b = make_moons(200, 0.2, 2).unwrap();
    let g = sinkhorn(&cost_matrix(&a, &b).unwrap(), &SinkhornParams::new(1e-4)).unwrap();
    r.check(
        "Stochasticity invariants",
        worst <= 1e-8 && g.marginal_error <= 1e-8,
        format!(
            "1000 sequences, worst column-sum deviation {worst:.2e}; n=200 lambda=1e-4 marginal error {:.2e}",
            g.marginal_error
        ),
    );
}

fn zero_shift(r: &mut Report, dir: &Path, model: &MlpModel) {
    let b = make_moons(200, 0.2, 99).unwrap();
    let probs = model.predict_proba(&b.features).unwrap();
    let mut buf = Vec::new();
    iupm_monitor::data::write_step(&mut buf, &b, Some(&probs)).unwrap();
    let data = dir.join("zero");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("batch.csv"), &buf).unwrap();
    let mut cfg = common::moons(0, 20);
    cfg.run_id = "zero-shift".into();
    cfg.output_dir = dir.join("runs");
    cfg.data = DataSource::External(ExternalSource {
        init: data.join("batch.csv"),
        steps: vec![data.join("batch.csv"); 20],
    });
    cfg.policy = policy(0.1, StrategyName::Ui, None);
    let summary = iupm_monitor::run_batch(cfg.clone()).unwrap();
    let log = std::fs::read_to_string(cfg.run_dir().join("steps.jsonl")).unwrap();
    let recs: Vec<StepRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let worst = recs
        .iter()
        .map(|r| (r.estimates[&Method::Iupm] - r.acc_true.unwrap()).abs())
        .fold(0.0, f64::max);
    let others = summary
        .mae
        .iter()
        .map(|(m, v)| format!("{m} {v:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    r.check(
        "Zero-shift fidelity",
        recs.len() == 20 && worst <= 0.02 && summary.n_interventions == 0,
        format!(
            "20 identical steps, max |IUPM - truth| {worst:.2e}, interventions {}; MAE {others}",
            summary.n_interventions
        ),
    );
}

struct Streams {
    moons: Vec<(RunConfig, Arc<Prepared>)>,
    circles: Vec<(RunConfig, Arc<Prepared>)>,
    moons_secs: f64,
}

fn prepare(dataset: DatasetName, shift: ShiftName, magnitude: f64, nipm: bool) -> Vec<(RunConfig, Arc<Prepared>)> {
    (0..SEEDS)
        .map(|seed| {
            let cfg = stream_config(seed, dataset, shift, magnitude);
            let prep = Arc::new(Prepared::build(&cfg, None).unwrap());
            prep.warm(nipm, nipm).unwrap();
            (cfg, prep)
        })
        .collect()
}

fn moons_reproduction(r: &mut Report, s: &Streams) -> Vec<Outcome> {
    let t0 = Instant::now();
    let outs: Vec<Outcome> = s.moons.iter().map(|(cfg, p)| run(p, cfg, None)).collect();
    let secs = s.moons_secs + t0.elapsed().as_secs_f64();
    let m = |k: Method| mean(outs.iter().map(|o| o.summary.mae[&k]));
    let (iupm, nipm) = (m(Method::Iupm), m(Method::Nipm));
    let base = [Method::Ac, Method::Doc, Method::Atc, Method::Im].map(m);
    let best_base = base.iter().copied().fold(f64::INFINITY, f64::min);
    r.check(
        "Moons rotation reproduction",
        iupm < nipm
            && nipm < best_base
            && (0.05..=0.17).contains(&iupm)
            && (0.15..=0.32).contains(&nipm)
            && secs < 600.0,
        format!(
            "5 seeds MAE IUPM {iupm:.4} NIPM {nipm:.4} AC {:.4} DOC {:.4} ATC {:.4} IM {:.4}, {secs:.0}s",
            base[0], base[1], base[2], base[3]
        ),
    );
    outs
}

fn intervention_efficacy(r: &mut Report, s: &Streams) {
    let runs = |st: StrategyName| -> Vec<Outcome> {
        s.moons.iter().map(|(cfg, p)| run(p, cfg, policy(0.1, st, None))).collect()
    };
    let (ui, ri, cei) = (runs(StrategyName::Ui), runs(StrategyName::Ri), runs(StrategyName::Cei));
    let n_i = |o: &[Outcome]| mean(o.iter().map(|x| x.summary.n_interventions as f64));
    let ui_mae = mean(ui.iter().map(mae));
    let post_max = ui
        .iter()
        .flat_map(|o| o.records.iter().filter_map(|r| r.uncertainty_post))
        .fold(0.0, f64::max);
    let (a, b, c) = (n_i(&ui), n_i(&ri), n_i(&cei));
    r.check(
        "Intervention efficacy",
        ui_mae <= 0.05 && a < b && a < c && a <= 14.0 && post_max <= 0.1,
        format!(
            "UI MAE {ui_mae:.4} (RI {:.4}, CEI {:.4}); n_I UI {a:.1} RI {b:.1} CEI {c:.1}; max post-intervention uncertainty {post_max:.4}",
            mean(ri.iter().map(mae)),
            mean(cei.iter().map(mae))
        ),
    );
}

fn equal_budget(r: &mut Report, name: &str, streams: &[(RunConfig, Arc<Prepared>)]) {
    let mut maes = [Vec::new(), Vec::new(), Vec::new()];
    let mut forced = 0;
    for (cfg, p) in streams {
        let ui = run(p, cfg, policy(0.1, StrategyName::Ui, None));
        let steps: Vec<usize> = ui.records.iter().filter(|r| r.intervention.triggered).map(|r| r.t).collect();
        forced += steps.len();
        for (k, st) in [StrategyName::Ui, StrategyName::Ri, StrategyName::Cei].into_iter().enumerate() {
            let o = run(p, cfg, policy(0.1, st, Some(steps.clone())));
            maes[k].push(mae(&o));
        }
    }
    let [ui, ri, cei] = maes.map(mean);
    r.check(
        &format!("Equal-budget ablation ({name})"),
        ui <= ri && ui <= cei,
        format!(
            "{forced} forced steps over {SEEDS} seeds; MAE UI {ui:.4} RI {ri:.4} CEI {cei:.4}"
        ),
    );
}

fn threshold_sweep(r: &mut Report, s: &Streams) {
    let thresholds = [0.2, 0.1, 0.02];
    let mut rows = Vec::new();
    for &th in &thresholds {
        let outs: Vec<Outcome> = s
            .moons
            .iter()
            .map(|(cfg, p)| run(p, cfg, policy(th, StrategyName::Ui, None)))
            .collect();
        rows.push((
            th,
            mean(outs.iter().map(mae)),
            mean(outs.iter().map(|o| o.summary.n_interventions as f64)),
        ));
    }
    let ok = rows.windows(2).all(|w| w[1].2 >= w[0].2 && w[1].1 <= w[0].1 + 0.01);
    let text = rows
        .iter()
        .map(|(t, m, n)| format!("th {t}: MAE {m:.4} n_I {n:.1}"))
        .collect::<Vec<_>>()
        .join("; ");
    r.check("Threshold sweep", ok, text);
}

fn probe(r: &mut Report, s: &Streams, plain: &[Outcome]) {
    // Hand-built stream against enumeration.
    let lab = |rows: &[[f64; 2]], y: &[usize]| FeatureBatch::labelled(Matrix::from_rows(rows).unwrap(), y.to_vec()).unwrap();
    let stream = [
        lab(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], &[0, 1, 0]),
        lab(&[[0.5, 0.0], [2.0, 1.0], [0.0, 2.5]], &[0, 1, 1]),
        lab(&[[0.5, 0.5], [3.0, 1.0], [1.0, 2.5]], &[1, 1, 0]),
        lab(&[[0.5, 0.5], [3.0, 1.5], [1.0, 2.5]], &[1, 0, 0]),
    ];
    let tr = trace(&stream, 0).unwrap();
    let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut exact = tr.steps.len() == 3;
    for (k, st) in tr.steps.iter().enumerate() {
        let (p, c) = (&stream[k], &stream[k + 1]);
        let euclid = Matrix::from_vec(
            3,
            3,
            (0..9).map(|i| dist(p.features.row(i / 3), c.features.row(i % 3))).collect(),
        )
        .unwrap();
        let eps = brute_w1(&euclid);
        let (yp, yc) = (p.labels.as_ref().unwrap(), c.labels.as_ref().unwrap());
        let mut closest = f64::INFINITY;
        for i in 0..3 {
            for j in 0..3 {
                if yp[i] != yc[j] {
                    closest = closest.min(dist(p.features.row(i), c.features.row(j)));
                }
            }
        }
        exact &= (st.eps_hat.unwrap() - eps).abs() <= 1e-12 && st.l_hat == Some(1.0 / closest);
        exact &= estimate_lipschitz(p, yp, c, yc).unwrap().l_hat == 1.0 / closest;
    }

    let mut rhos = Vec::new();
    for ((_, p), o) in s.moons.iter().zip(plain) {
        let bound: Vec<f64> = p.trace().unwrap().steps.iter().map(|t| t.cumulative_bound.unwrap()).collect();
        let err: Vec<f64> = o
            .records
            .iter()
            .map(|r| (r.acc_true.unwrap() - r.estimates[&Method::Iupm]).abs())
            .collect();
        rhos.push(pearson(&bound, &err, 1000, 0).unwrap().rho);
    }
    let rho = mean(rhos.iter().copied());
    r.check(
        "Lipschitz probe",
        exact && rho > 0.5,
        format!(
            "hand-built stream matches enumeration: {exact}; moons rotation rho(cumulative bound, |error|) mean {rho:.3} per seed {}",
            rhos.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/")
        ),
    );
}

fn gradient_check(r: &mut Report) {
    let b = make_moons(200, 0.2, 8).unwrap();
    let y = b.labels.clone().unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        ..Default::default()
    };
    let model = train(&b.features, &y, 2, &cfg).unwrap();
    let worst = (0..5).map(|s| grad_check(&model, &b.features, &y, 50, s).unwrap()).fold(0.0, f64::max);
    let mut grad = model.gradient(&b.features, &y).unwrap();
    let k = (0..grad.len()).max_by(|&a, &c| grad[a].abs().total_cmp(&grad[c].abs())).unwrap();
    grad[k] *= 2.0;
    let mutated = grad_check_against(&model, &b.features, &y, &grad, &[k]).unwrap();
    r.check(
        "Classifier gradient check",
        worst < 1e-4 && mutated > 0.4,
        format!("max relative error {worst:.2e}; corrupted term error {mutated:.3}"),
    );
}

fn determinism(r: &mut Report, dir: &Path) {
    let mut logs = Vec::new();
    let mut discrepancy = f64::INFINITY;
    for sub in ["first", "second"] {
        let mut cfg = common::moons(11, 30);
        cfg.output_dir = dir.join(sub);
        cfg.policy = policy(0.05, StrategyName::Ri, None);
        iupm_monitor::run_batch(cfg.clone()).unwrap();
        logs.push(std::fs::read(cfg.run_dir().join("steps.jsonl")).unwrap());
        let rep = iupm_monitor::verify::verify(&cfg.run_dir()).unwrap();
        discrepancy = if rep.ok() { rep.max_discrepancy } else { f64::INFINITY };
    }
    r.check(
        "Determinism",
        logs[0] == logs[1] && discrepancy == 0.0,
        format!(
            "two batch runs byte-identical: {} ({} bytes); verify discrepancy {discrepancy}",
            logs[0] == logs[1],
            logs[0].len()
        ),
    );
}

fn no_secondary(r: &mut Report) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut found = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            let name = e.file_name().to_string_lossy().into_owned();
            if p.is_dir() {
                if !matches!(name.as_str(), "target" | ".git") {
                    stack.push(p);
                }
            } else if name == "package.json" || name.ends_with(".ts") || name.ends_with(".tsx") {
                found.push(p);
            }
        }
    }
    r.check(
        "Suite runs without the labelling console",
        found.is_empty(),
        format!("oracle labeler only; front-end sources in the workspace: {}", found.len()),
    );
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Report { failed: 0 };
    ot_oracle(&mut r);
    stochasticity(&mut r);

    let t0 = Instant::now();
    let moons = prepare(DatasetName::Moons, ShiftName::Rotation, 2.0, true);
    let moons_secs = t0.elapsed().as_secs_f64();
    let circles = prepare(DatasetName::Circles, ShiftName::Translation, 0.02, false);
    let s = Streams {
        moons,
        circles,
        moons_secs,
    };

    zero_shift(&mut r, dir.path(), s.moons[0].1.model.as_ref().unwrap());
    let plain = moons_reproduction(&mut r, &s);
    intervention_efficacy(&mut r, &s);
    equal_budget(&mut r, "moons", &s.moons);
    equal_budget(&mut r, "circles", &s.circles);
    threshold_sweep(&mut r, &s);
    probe(&mut r, &s, &plain);
    gradient_check(&mut r);
    determinism(&mut r, dir.path());
    no_secondary(&mut r);

    if r.failed > 0 {
        println!("{} acceptance criteria failed", r.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

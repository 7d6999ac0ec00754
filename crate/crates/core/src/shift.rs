//! Two-class toy datasets and the gradual shifts applied to them.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::batch::FeatureBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dataset {
    Clusters,
    Moons,
    Circles,
}

impl Dataset {
    /// Noise level used when a stream does not override it.
    pub fn default_noise(self) -> f64 {
        match self {
            Dataset::Clusters => 1.0,
            Dataset::Moons | Dataset::Circles => 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftKind {
    /// Degrees per step, clockwise about the stream pivot.
    Rotation,
    /// Offset per step along x, applied to class 1 only.
    Translation,
    /// Log scale per step about the stream pivot: step `k` scales by
    /// `exp(k * magnitude)`.
    Scaling,
}

/// Fixed point of rotation and scaling streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Pivot {
    #[default]
    Origin,
    TrainingMean,
}

pub const CIRCLE_FACTOR: f64 = 0.3;
pub const TRAIN_SIZE: usize = 800;
pub const INIT_SIZE: usize = 200;
/// Class moved by translation streams (the inner circle for circles).
pub const TRANSLATED_CLASS: usize = 1;

fn class_sizes(n: usize) -> (usize, usize) {
    (n - n / 2, n / 2)
}

fn noise_dist(sd: f64) -> Result<Option<Normal<f64>>> {
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(crate::error::invalid("noise", "must be finite and >= 0"));
    }
    if sd == 0.0 {
        return Ok(None);
    }
    Ok(Some(Normal::new(0.0, sd).expect("sd checked")))
}

fn finish(mut rows: Vec<([f64; 2], usize)>, noise: f64, rng: &mut ChaCha8Rng) -> Result<FeatureBatch> {
    if let Some(d) = noise_dist(noise)? {
        for (p, _) in rows.iter_mut() {
            p[0] += d.sample(rng);
            p[1] += d.sample(rng);
        }
    }
    rows.shuffle(rng);
    let labels = rows.iter().map(|r| r.1).collect();
    let data = rows.iter().flat_map(|r| r.0).collect();
    FeatureBatch::labelled(Matrix::from_vec(rows.len(), 2, data)?, labels)
}

/// Noise-free point of a moon at arc parameter `theta`.
pub fn moon_point(class: usize, theta: f64) -> [f64; 2] {
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    if class == 0 {
        [c, s]
    } else {
        [1.0 - c, 0.5 - s]
    }
}

pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<FeatureBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n0, n1) = class_sizes(n);
    let mut rows = Vec::with_capacity(n);
    for (class, count) in [(0, n0), (1, n1)] {
        for _ in 0..count {
            let theta = rng.random_range(0.0..=PI);
            rows.push((moon_point(class, theta), class));
        }
    }
    finish(rows, noise, &mut rng)
}

pub fn make_circles(n: usize, noise: f64, factor: f64, seed: u64) -> Result<FeatureBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n0, n1) = class_sizes(n);
    let mut rows = Vec::with_capacity(n);
    for (class, count, r) in [(0, n0, 1.0), (1, n1, factor)] {
        for _ in 0..count {
            let a = rng.random_range(0.0..2.0 * PI);
            rows.push(([r * libm::cos(a), r * libm::sin(a)], class));
        }
    }
    finish(rows, noise, &mut rng)
}

/// One center per class, uniform on `[-10, 10]^2`.
pub fn cluster_centers(seed: u64) -> [[f64; 2]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || [rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0)];
    [draw(), draw()]
}

pub fn make_clusters_around(
    n: usize,
    std: f64,
    centers: [[f64; 2]; 2],
    seed: u64,
) -> Result<FeatureBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n0, n1) = class_sizes(n);
    let mut rows = Vec::with_capacity(n);
    for (class, count) in [(0, n0), (1, n1)] {
        rows.extend(core::iter::repeat_n((centers[class], class), count));
    }
    finish(rows, std, &mut rng)
}

pub fn make_clusters(n: usize, std: f64, seed: u64) -> Result<FeatureBatch> {
    make_clusters_around(n, std, cluster_centers(seed), seed.wrapping_add(1))
}

/// Rotates every row about `center`, counter-clockwise.
pub fn apply_rotation(x: &Matrix, degrees: f64, center: [f64; 2]) -> Result<Matrix> {
    check_2d(x)?;
    let a = degrees.to_radians();
    let (c, s) = (libm::cos(a), libm::sin(a));
    let mut out = x.clone();
    for i in 0..x.rows() {
        let (dx, dy) = (x[(i, 0)] - center[0], x[(i, 1)] - center[1]);
        out[(i, 0)] = center[0] + c * dx - s * dy;
        out[(i, 1)] = center[1] + s * dx + c * dy;
    }
    Ok(out)
}

/// Adds `(dx, 0)` to the rows whose label is in `classes`.
pub fn apply_translation(x: &Matrix, labels: &[usize], classes: &[usize], dx: f64) -> Result<Matrix> {
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: labels.len(),
        });
    }
    let mut out = x.clone();
    for (i, y) in labels.iter().enumerate() {
        if classes.contains(y) {
            out[(i, 0)] += dx;
        }
    }
    Ok(out)
}

pub fn apply_scaling(x: &Matrix, factor: f64, center: [f64; 2]) -> Result<Matrix> {
    check_2d(x)?;
    let mut out = x.clone();
    for i in 0..x.rows() {
        for (d, c) in center.iter().enumerate() {
            out[(i, d)] = c + factor * (x[(i, d)] - c);
        }
    }
    Ok(out)
}

fn check_2d(x: &Matrix) -> Result<()> {
    if x.cols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.cols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftStream {
    pub dataset: Dataset,
    pub shift: ShiftKind,
    pub magnitude: f64,
    pub steps: usize,
    pub samples_per_step: usize,
    pub seed: u64,
    /// Overrides [`Dataset::default_noise`].
    pub noise: Option<f64>,
    pub pivot: Pivot,
}

impl ShiftStream {
    pub fn new(dataset: Dataset, shift: ShiftKind, magnitude: f64) -> Self {
        Self {
            dataset,
            shift,
            magnitude,
            steps: 100,
            samples_per_step: 200,
            seed: 0,
            noise: None,
            pivot: Pivot::Origin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(crate::error::invalid("steps", "must be >= 1"));
        }
        if self.samples_per_step < 2 {
            return Err(crate::error::invalid("samples_per_step", "must be >= 2"));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::NonFinite("magnitude"));
        }
        noise_dist(self.noise())?;
        Ok(())
    }

    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or(self.dataset.default_noise())
    }
}

/// Training split, the labelled initialization batch, and the shifted
/// batches for steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub train: FeatureBatch,
    pub init: FeatureBatch,
    pub steps: Vec<FeatureBatch>,
    /// Fixed point of rotation and scaling.
    pub center: [f64; 2],
}

/// Independent seed for the `k`-th draw of a stream.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.next_u64()
}

impl GeneratedStream {
    pub fn generate(cfg: &ShiftStream) -> Result<Self> {
        cfg.validate()?;
        let noise = cfg.noise();
        let centers = cluster_centers(derive_seed(cfg.seed, u64::MAX));
        let draw = |n: usize, seed: u64| match cfg.dataset {
            Dataset::Moons => make_moons(n, noise, seed),
            Dataset::Circles => make_circles(n, noise, CIRCLE_FACTOR, seed),
            Dataset::Clusters => make_clusters_around(n, noise, centers, seed),
        };
        let all = draw(TRAIN_SIZE, derive_seed(cfg.seed, 0))?;
        let mean = all.features.col_sums();
        let center = match cfg.pivot {
            Pivot::Origin => [0.0, 0.0],
            Pivot::TrainingMean => [mean[0] / all.len() as f64, mean[1] / all.len() as f64],
        };
        let train_idx: Vec<usize> = (0..TRAIN_SIZE - INIT_SIZE).collect();
        let init_idx: Vec<usize> = (TRAIN_SIZE - INIT_SIZE..TRAIN_SIZE).collect();
        let mut steps = Vec::with_capacity(cfg.steps);
        for k in 1..=cfg.steps {
            let fresh = draw(cfg.samples_per_step, derive_seed(cfg.seed, k as u64))?;
            steps.push(shifted(cfg, &fresh, k, center)?);
        }
        Ok(Self {
            train: all.select(&train_idx),
            init: all.select(&init_idx),
            steps,
            center,
        })
    }
}

/// Applies the cumulative shift of step `k` in one shot.
pub fn shifted(cfg: &ShiftStream, batch: &FeatureBatch, k: usize, center: [f64; 2]) -> Result<FeatureBatch> {
    let amount = k as f64 * cfg.magnitude;
    let features = match cfg.shift {
        ShiftKind::Rotation => apply_rotation(&batch.features, -amount, center)?,
        ShiftKind::Scaling => apply_scaling(&batch.features, libm::exp(amount), center)?,
        ShiftKind::Translation => {
            let labels = batch
                .labels
                .as_ref()
                .ok_or(Error::Empty("labels for translation"))?;
            apply_translation(&batch.features, labels, &[TRANSLATED_CLASS], amount)?
        }
    };
    Ok(FeatureBatch {
        features,
        labels: batch.labels.clone(),
    })
}

/// Answers label queries with the generated ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleLabeler;

impl OracleLabeler {
    pub fn query(&self, batch: &FeatureBatch, indices: &[usize]) -> Result<Vec<usize>> {
        let labels = batch.labels.as_ref().ok_or(Error::Empty("oracle labels"))?;
        indices
            .iter()
            .map(|&i| {
                labels.get(i).copied().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: labels.len(),
                })
            })
            .collect()
    }
}

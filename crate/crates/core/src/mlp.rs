//! Single-hidden-layer rectifier network with a softmax output, trained
//! full-batch with Adam on mean cross-entropy.
//!
//! Parameters live in one flat vector laid out as `W1 (d x h)`, `b1 (h)`,
//! `W2 (h x K)`, `b2 (K)`, all row-major. The same layout is used for
//! gradients and for the binary model file.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    inputs: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 2000,
            hidden: 128,
            seed: 0,
        }
    }
}

struct Forward {
    pre: Matrix,
    hidden: Matrix,
    probs: Matrix,
}

impl MlpModel {
    /// Uniform fan-in scaled weights, zero biases.
    pub fn init(inputs: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(inputs, hidden, classes);
        let r1 = 1.0 / libm::sqrt(inputs.max(1) as f64);
        let r2 = 1.0 / libm::sqrt(hidden.max(1) as f64);
        let (w1, _, w2, _) = m.offsets();
        for v in &mut m.params[w1.0..w1.1] {
            *v = rng.random_range(-r1..=r1);
        }
        for v in &mut m.params[w2.0..w2.1] {
            *v = rng.random_range(-r2..=r2);
        }
        m
    }

    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        let len = inputs * hidden + hidden + hidden * classes + classes;
        Self {
            inputs,
            hidden,
            classes,
            params: vec![0.0; len],
        }
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    #[inline]
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[inline]
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[allow(clippy::type_complexity)]
    fn offsets(&self) -> ((usize, usize), (usize, usize), (usize, usize), (usize, usize)) {
        let w1 = (0, self.inputs * self.hidden);
        let b1 = (w1.1, w1.1 + self.hidden);
        let w2 = (b1.1, b1.1 + self.hidden * self.classes);
        let b2 = (w2.1, w2.1 + self.classes);
        (w1, b1, w2, b2)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &Matrix) -> Forward {
        let (w1, b1, w2, b2) = self.offsets();
        let w1 = &self.params[w1.0..w1.1];
        let b1 = &self.params[b1.0..b1.1];
        let w2 = &self.params[w2.0..w2.1];
        let b2 = &self.params[b2.0..b2.1];
        let n = x.rows();
        let (h, k) = (self.hidden, self.classes);
        let mut pre = Matrix::zeros(n, h);
        let mut hid = Matrix::zeros(n, h);
        let mut probs = Matrix::zeros(n, k);
        for i in 0..n {
            let xi = x.row(i);
            let zi = pre.row_mut(i);
            zi.copy_from_slice(b1);
            for (f, &xv) in xi.iter().enumerate() {
                for (z, w) in zi.iter_mut().zip(&w1[f * h..(f + 1) * h]) {
                    *z += xv * w;
                }
            }
            let hi = hid.row_mut(i);
            for (hv, &z) in hi.iter_mut().zip(pre.row(i)) {
                *hv = z.max(0.0);
            }
            let pi = probs.row_mut(i);
            pi.copy_from_slice(b2);
            for (u, &hv) in hid.row(i).iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                for (p, w) in pi.iter_mut().zip(&w2[u * k..(u + 1) * k]) {
                    *p += hv * w;
                }
            }
            softmax_in_place(pi);
        }
        Forward {
            pre,
            hidden: hid,
            probs,
        }
    }

    /// Class probabilities, `K x n`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward(x).probs.transpose())
    }

    /// Most probable class per row of `x`; ties go to the lower class.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(crate::batch::argmax_columns(&self.predict_proba(x)?))
    }

    /// Post-activation hidden layer, `n x h`.
    pub fn hidden_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward(x).hidden)
    }

    /// Mean cross-entropy of the labels under the model.
    pub fn loss(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        self.check_batch(x, y)?;
        let fwd = self.forward(x);
        Ok(cross_entropy(&fwd.probs, y))
    }

    fn check_batch(&self, x: &Matrix, y: &[usize]) -> Result<()> {
        self.check_input(x)?;
        if y.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: y.len(),
            });
        }
        if x.rows() == 0 {
            return Err(Error::Empty("training set"));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Analytic gradient of the mean cross-entropy, in parameter layout.
    pub fn gradient(&self, x: &Matrix, y: &[usize]) -> Result<Vec<f64>> {
        self.check_batch(x, y)?;
        let fwd = self.forward(x);
        Ok(self.backward(x, y, &fwd))
    }

    fn backward(&self, x: &Matrix, y: &[usize], fwd: &Forward) -> Vec<f64> {
        let n = x.rows();
        let (h, k) = (self.hidden, self.classes);
        let (w1o, b1o, w2o, b2o) = self.offsets();
        let w2 = &self.params[w2o.0..w2o.1];
        let mut grad = vec![0.0; self.params.len()];
        let inv_n = 1.0 / n as f64;
        let mut dz2 = vec![0.0; k];
        let mut dz1 = vec![0.0; h];
        for i in 0..n {
            for (c, d) in dz2.iter_mut().enumerate() {
                let target = if y[i] == c { 1.0 } else { 0.0 };
                *d = (fwd.probs[(i, c)] - target) * inv_n;
            }
            let hi = fwd.hidden.row(i);
            for (u, &hv) in hi.iter().enumerate() {
                if hv != 0.0 {
                    let g = &mut grad[w2o.0 + u * k..w2o.0 + (u + 1) * k];
                    for (gv, d) in g.iter_mut().zip(&dz2) {
                        *gv += hv * d;
                    }
                }
            }
            for (gv, d) in grad[b2o.0..b2o.1].iter_mut().zip(&dz2) {
                *gv += d;
            }
            let pre = fwd.pre.row(i);
            for u in 0..h {
                dz1[u] = if pre[u] > 0.0 {
                    w2[u * k..(u + 1) * k]
                        .iter()
                        .zip(&dz2)
                        .map(|(w, d)| w * d)
                        .sum()
                } else {
                    0.0
                };
            }
            for (f, &xv) in x.row(i).iter().enumerate() {
                let g = &mut grad[w1o.0 + f * h..w1o.0 + (f + 1) * h];
                for (gv, d) in g.iter_mut().zip(&dz1) {
                    *gv += xv * d;
                }
            }
            for (gv, d) in grad[b1o.0..b1o.1].iter_mut().zip(&dz1) {
                *gv += d;
            }
        }
        grad
    }

    /// Flat little-endian file image: magic, version, three `u32` dims, then
    /// the parameters as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        for d in [self.inputs, self.hidden, self.classes] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = MODEL_MAGIC.len() + 16;
        if bytes.len() < header || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(Error::Format("bad magic"));
        }
        let word = |k: usize| {
            let at = MODEL_MAGIC.len() + 4 * k;
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
        };
        if word(0) != MODEL_VERSION {
            return Err(Error::Format("unsupported version"));
        }
        let (d, h, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let mut m = Self::zeros(d, h, k);
        if bytes.len() != header + 8 * m.params.len() {
            return Err(Error::Format("length does not match dimensions"));
        }
        for (p, chunk) in m.params.iter_mut().zip(bytes[header..].chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if m.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter"));
        }
        Ok(m)
    }
}

pub const MODEL_MAGIC: &[u8; 8] = b"IUPMMLP\0";
pub const MODEL_VERSION: u32 = 1;

fn softmax_in_place(z: &mut [f64]) {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - mx);
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn cross_entropy(probs: &Matrix, y: &[usize]) -> f64 {
    let n = y.len() as f64;
    -y.iter()
        .enumerate()
        .map(|(i, &c)| libm::log(probs[(i, c)].max(f64::MIN_POSITIVE)))
        .sum::<f64>()
        / n
}

/// Trains a fresh model and returns it with the loss recorded before every
/// update (plus the final loss).
pub fn train_with_history(
    x: &Matrix,
    y: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<f64>)> {
    if !(cfg.learning_rate > 0.0) {
        return Err(crate::error::invalid("learning_rate", "must be positive"));
    }
    let mut model = MlpModel::init(x.cols(), cfg.hidden, classes, cfg.seed);
    model.check_batch(x, y)?;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; model.params.len()];
    let mut m2 = vec![0.0; model.params.len()];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let (mut p1, mut p2) = (1.0, 1.0);
    for epoch in 0..cfg.epochs {
        let fwd = model.forward(x);
        let loss = cross_entropy(&fwd.probs, y);
        if !loss.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        history.push(loss);
        let grad = model.backward(x, y, &fwd);
        p1 *= b1;
        p2 *= b2;
        for (((p, g), m), v) in model.params.iter_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / (1.0 - p1);
            let vhat = *v / (1.0 - p2);
            *p -= cfg.learning_rate * mhat / (libm::sqrt(vhat) + eps);
        }
    }
    let last = model.loss(x, y)?;
    if !last.is_finite() {
        return Err(Error::Diverged(cfg.epochs));
    }
    history.push(last);
    Ok((model, history))
}

pub fn train(x: &Matrix, y: &[usize], classes: usize, cfg: &TrainConfig) -> Result<MlpModel> {
    Ok(train_with_history(x, y, classes, cfg)?.0)
}

/// Central finite-difference check of `grad` on the given parameter indices.
/// Returns the largest relative error `|a - n| / max(|a|, |n|)`; entries
/// where both are below `1e-10` count as exact.
pub fn grad_check_against(
    model: &MlpModel,
    x: &Matrix,
    y: &[usize],
    grad: &[f64],
    indices: &[usize],
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &p in indices {
        if p >= probe.params.len() {
            return Err(Error::IndexOutOfRange {
                index: p,
                len: probe.params.len(),
            });
        }
        let orig = probe.params[p];
        probe.params[p] = orig + STEP;
        let up = probe.loss(x, y)?;
        probe.params[p] = orig - STEP;
        let down = probe.loss(x, y)?;
        probe.params[p] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grad[p];
        let scale = libm::fabs(numeric).max(libm::fabs(analytic));
        if scale > 1e-10 {
            worst = worst.max(libm::fabs(numeric - analytic) / scale);
        }
    }
    Ok(worst)
}

/// Checks the analytic gradient on `subset` randomly chosen parameters.
pub fn grad_check(
    model: &MlpModel,
    x: &Matrix,
    y: &[usize],
    subset: usize,
    seed: u64,
) -> Result<f64> {
    let grad = model.gradient(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.params.len();
    let take = subset.min(n);
    let indices = rand::seq::index::sample(&mut rng, n, take).into_vec();
    grad_check_against(model, x, y, &grad, &indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            rows.push([cx + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
            labels.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separates_blobs() {
        let (x, y) = blobs();
        let cfg = TrainConfig {
            epochs: 500,
            hidden: 16,
            ..Default::default()
        };
        let m = train(&x, &y, 2, &cfg).unwrap();
        let pred = m.predict(&x).unwrap();
        assert_eq!(crate::batch::accuracy(&pred, &y), 1.0);
    }

    #[test]
    fn zero_epochs_is_near_uniform() {
        let (x, y) = blobs();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (m, hist) = train_with_history(&x, &y, 2, &cfg).unwrap();
        assert_eq!(m, MlpModel::init(2, 128, 2, 0));
        assert!((hist[0] - core::f64::consts::LN_2).abs() < 0.1, "{}", hist[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs();
        let cfg = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let a = train(&x, &y, 2, &cfg).unwrap();
        let b = train(&x, &y, 2, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn predict_proba_columns_sum_to_one() {
        let m = MlpModel::init(2, 8, 3, 1);
        let x = Matrix::from_rows(&[[0.1, 0.2], [0.1, 0.2], [-3.0, 5.0]]).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for s in p.col_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.column(0), p.column(1));

        let z = MlpModel::zeros(2, 4, 2);
        let p = z.predict_proba(&x).unwrap();
        assert_eq!(p.column(2), vec![0.5, 0.5]);
    }

    #[test]
    fn hidden_features_examples() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [1.0, -2.0]]).unwrap();
        let z = MlpModel::zeros(2, 4, 2);
        assert!(z.hidden_features(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let m = MlpModel::init(2, 16, 2, 3);
        let h = m.hidden_features(&x).unwrap();
        assert!(h.as_slice().iter().all(|&v| v >= 0.0));
        assert_eq!(h.row(0), h.row(1));
        assert!(m.hidden_features(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs();
        let m = MlpModel::init(2, 12, 2, 7);
        assert!(grad_check(&m, &x, &y, 50, 1).unwrap() < 1e-4);
        assert_eq!(grad_check_against(&m, &x, &y, &[], &[]).unwrap(), 0.0);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (x, y) = blobs();
        let m = MlpModel::init(2, 12, 2, 7);
        let grad: Vec<f64> = m.gradient(&x, &y).unwrap().iter().map(|g| 2.0 * g).collect();
        let all: Vec<usize> = (0..m.params().len()).collect();
        assert!(grad_check_against(&m, &x, &y, &grad, &all).unwrap() > 0.4);
    }

    #[test]
    fn model_bytes_round_trip() {
        let m = MlpModel::init(3, 5, 2, 11);
        let bytes = m.to_bytes();
        assert_eq!(MlpModel::from_bytes(&bytes).unwrap(), m);
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn rejects_bad_labels() {
        let (x, _) = blobs();
        let y = vec![3; x.rows()];
        assert!(train(&x, &y, 2, &TrainConfig::default()).is_err());
    }
}

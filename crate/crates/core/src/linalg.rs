//! Small dense symmetric solver used by the Newton refinement in `ot`.

use alloc::vec::Vec;

use crate::matrix::Matrix;

/// In-place Cholesky factorization of a symmetric positive definite matrix.
/// Returns `None` when a pivot is not positive.
pub(crate) fn cholesky(mut a: Matrix) -> Option<Matrix> {
    let n = a.rows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = libm::sqrt(d);
        a[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            let (ri, rj) = (i * n, j * n);
            let data = a.as_slice();
            for k in 0..j {
                s -= data[ri + k] * data[rj + k];
            }
            a[(i, j)] = s / d;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

/// Solves `L L^T x = b` given the lower factor `L`.
pub(crate) fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y: Vec<f64> = b.to_vec();
    for i in 0..n {
        let row = l.row(i);
        let mut s = y[i];
        for k in 0..i {
            s -= row[k] * y[k];
        }
        y[i] = s / row[i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]).unwrap();
        let l = cholesky(a.clone()).unwrap();
        let x = cholesky_solve(&l, &[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|k| a[(i, k)] * x[k]).sum();
            assert!((ax - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(cholesky(a).is_none());
    }
}

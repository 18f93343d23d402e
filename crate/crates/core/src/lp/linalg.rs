//! Small dense kernels for the normal equations.

use nalgebra::{DMatrix, DVector};

use crate::exec::Execution;

const COLUMN_CHUNK: usize = 512;

/// `A diag(d) A'`, accumulated over fixed column chunks so that every
/// execution policy produces the same bits.
pub(crate) fn scaled_gram(a: &DMatrix<f64>, d: &DVector<f64>, exec: Execution) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let partials = exec.map_chunks(n, COLUMN_CHUNK, |range| {
        let width = range.len();
        let mut scaled = a.columns(range.start, width).clone_owned();
        for (k, j) in range.clone().enumerate() {
            let w = d[j].sqrt();
            scaled.column_mut(k).scale_mut(w);
        }
        &scaled * scaled.transpose()
    });
    let mut out = DMatrix::zeros(m, m);
    for p in partials {
        out += p;
    }
    out
}

/// Cholesky factor of a symmetric positive semidefinite matrix. Pivots that
/// collapse below `rel_tol` times the largest diagonal are replaced by a huge
/// value, which zeroes the corresponding component of every solve; this is
/// the usual safeguard for the rank-deficient normal matrices met near an
/// interior-point optimum.
pub(crate) struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub(crate) fn new(mut m: DMatrix<f64>, rel_tol: f64) -> Self {
        let n = m.nrows();
        let scale = (0..n)
            .map(|i| m[(i, i)].abs())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        for j in 0..n {
            let mut djj = m[(j, j)];
            for k in 0..j {
                djj -= m[(j, k)] * m[(j, k)];
            }
            if djj <= rel_tol * scale {
                m[(j, j)] = 1e64;
                for i in j + 1..n {
                    m[(i, j)] = 0.0;
                }
                continue;
            }
            let ljj = djj.sqrt();
            m[(j, j)] = ljj;
            for i in j + 1..n {
                let mut v = m[(i, j)];
                for k in 0..j {
                    v -= m[(i, k)] * m[(j, k)];
                }
                m[(i, j)] = v / ljj;
            }
        }
        Cholesky { l: m }
    }

    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.l.nrows();
        let mut z = rhs.clone();
        for i in 0..n {
            let mut v = z[i];
            for k in 0..i {
                v -= self.l[(i, k)] * z[k];
            }
            z[i] = v / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = z[i];
            for k in i + 1..n {
                v -= self.l[(k, i)] * z[k];
            }
            z[i] = v / self.l[(i, i)];
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_dense_product() {
        let a = DMatrix::from_fn(3, 1100, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let d = DVector::from_fn(1100, |j, _| 1.0 + (j % 5) as f64);
        let want = &a * DMatrix::from_diagonal(&d) * a.transpose();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = scaled_gram(&a, &d, exec);
            assert!((got - &want).amax() < 1e-9);
        }
    }

    #[test]
    fn cholesky_solves_and_tolerates_singular() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = Cholesky::new(m.clone(), 1e-14).solve(&b);
        assert!((&m * x - &b).amax() < 1e-12);

        // rank one: the solve stays finite
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let s = &v * v.transpose();
        let x = Cholesky::new(s, 1e-12).solve(&DVector::from_vec(vec![1.0, 2.0]));
        assert!(x.iter().all(|v| v.is_finite()));
    }
}

//! Removal of linearly dependent equality rows.

use nalgebra::{DMatrix, DVector};

/// Outcome of [`independent_rows`].
#[derive(Debug, Clone, PartialEq)]
pub enum RowCleanup {
    /// Indices of a maximal independent set of rows, ascending.
    Keep(Vec<usize>),
    /// A dependent row whose right-hand side contradicts the others.
    Inconsistent(usize),
}

/// Row-pivoted modified Gram–Schmidt on the rows of `A` (a QR factorization
/// of `A'` with column pivoting), carrying `b` along. Rows whose residual
/// norm falls below `rel_tol` times the largest row norm are dependent; their
/// carried right-hand side must then vanish as well.
pub fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> RowCleanup {
    let m = a.nrows();
    let mut w: Vec<DVector<f64>> = (0..m).map(|i| a.row(i).transpose()).collect();
    let mut wb: Vec<f64> = b.iter().copied().collect();
    let scale = w.iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    let b_scale = 1.0 + b.amax();
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut kept = Vec::new();
    if scale == 0.0 {
        return match remaining.iter().find(|&&i| wb[i].abs() > rel_tol.sqrt() * b_scale) {
            Some(&i) => RowCleanup::Inconsistent(i),
            None => RowCleanup::Keep(kept),
        };
    }
    while !remaining.is_empty() {
        let (pos, norm) = remaining
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, w[i].norm()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if norm <= rel_tol * scale {
            break;
        }
        let k = remaining.swap_remove(pos);
        w[k] /= norm;
        wb[k] /= norm;
        kept.push(k);
        let (qk, bk) = (w[k].clone(), wb[k]);
        for &i in &remaining {
            let coef = w[i].dot(&qk);
            w[i].axpy(-coef, &qk, 1.0);
            wb[i] -= coef * bk;
        }
    }
    // dependent rows: their residual right-hand side is the inconsistency
    let b_tol = rel_tol.sqrt() * b_scale;
    remaining.sort_unstable();
    if let Some(&i) = remaining.iter().find(|&&i| wb[i].abs() > b_tol) {
        return RowCleanup::Inconsistent(i);
    }
    kept.sort_unstable();
    RowCleanup::Keep(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_duplicate_and_combination_rows() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0, 1.0, 3.0, 1.0]);
        let b = DVector::from_vec(vec![3.0, 2.0, 3.0, 5.0]);
        match independent_rows(&a, &b, 1e-10) {
            RowCleanup::Keep(rows) => assert_eq!(rows.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_inconsistent_duplicate() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(independent_rows(&a, &b, 1e-10), RowCleanup::Inconsistent(_)));
    }

    #[test]
    fn full_rank_keeps_everything() {
        let a = DMatrix::<f64>::identity(3, 5);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(independent_rows(&a, &b, 1e-10), RowCleanup::Keep(vec![0, 1, 2]));
    }
}

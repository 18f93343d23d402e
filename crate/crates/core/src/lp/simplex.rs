//! Two-phase dense tableau simplex with Bland's rule.
//!
//! Slow and exact up to the pivot tolerance; used only to cross-check the
//! interior-point solver.

use nalgebra::{DMatrix, DVector};

use super::presolve::{independent_rows, RowCleanup};
use super::{LpSolution, LpStandardForm, LpStatus};

/// Documented size limit (columns after splitting free variables).
pub const SIMPLEX_SOFT_LIMIT: usize = 500;

const PIVOT_TOL: f64 = 1e-10;
const ROW_RANK_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 50_000;

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, j: usize) {
        let piv = self.t[(r, j)];
        self.t.row_mut(r).unscale_mut(piv);
        let prow = self.t.row(r).clone_owned();
        for i in 0..self.t.nrows() {
            if i != r {
                let f = self.t[(i, j)];
                if f != 0.0 {
                    let mut row = self.t.row_mut(i);
                    row -= f * &prow;
                }
            }
        }
        self.basis[r] = j;
    }

    /// Minimizes `cost` over the columns in `allowed` with Bland's rule.
    /// Returns `false` on an unbounded ray.
    fn run(&mut self, cost: &DVector<f64>, allowed: usize, pivots: &mut usize) -> Option<bool> {
        let (m, rhs) = (self.t.nrows(), self.t.ncols() - 1);
        loop {
            if *pivots >= MAX_PIVOTS {
                return None;
            }
            // reduced costs c_j - c_B B^-1 A_j, read off the tableau
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut rc = cost[j];
                for i in 0..m {
                    rc -= cost[self.basis[i]] * self.t[(i, j)];
                }
                if rc < -PIVOT_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Some(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let aij = self.t[(i, j)];
                if aij > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r]) {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Some(false);
            };
            self.pivot(r, j);
            *pivots += 1;
        }
    }
}

/// Exact vertex solution of `lp`. Dependent equality rows are removed first.
pub fn solve_simplex_reference(lp: &LpStandardForm) -> LpSolution {
    let (a_split, c, neg) = lp.split_free();
    let n_orig = lp.cols();
    let rows = match independent_rows(&a_split, lp.b(), ROW_RANK_TOL) {
        RowCleanup::Keep(rows) => rows,
        RowCleanup::Inconsistent(_) => return LpSolution::failed(lp, LpStatus::Infeasible, 0),
    };
    let n = a_split.ncols();
    let m = rows.len();
    let mut a = a_split.select_rows(rows.iter());
    let mut b = lp.b().select_rows(rows.iter());
    for i in 0..m {
        if b[i] < 0.0 {
            a.row_mut(i).neg_mut();
            b[i] = -b[i];
        }
    }

    // phase 1 tableau [A | I | b]
    let mut t = DMatrix::zeros(m, n + m + 1);
    t.view_mut((0, 0), (m, n)).copy_from(&a);
    for i in 0..m {
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = b[i];
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
    };
    let mut pivots = 0;
    let mut phase1_cost = DVector::zeros(n + m);
    phase1_cost.rows_mut(n, m).fill(1.0);
    if tab.run(&phase1_cost, n + m, &mut pivots).is_none() {
        return LpSolution::failed(lp, LpStatus::IterationLimit, pivots);
    }
    let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= n).map(|i| tab.t[(i, n + m)]).sum();
    if infeas > 1e-9 * (1.0 + b.amax()) {
        return LpSolution::failed(lp, LpStatus::Infeasible, pivots);
    }
    // drive artificials out of the basis
    let mut redundant = Vec::new();
    for i in 0..m {
        if tab.basis[i] >= n {
            match (0..n).find(|&j| tab.t[(i, j)].abs() > PIVOT_TOL && !tab.basis.contains(&j)) {
                Some(j) => {
                    tab.pivot(i, j);
                    pivots += 1;
                }
                None => redundant.push(i),
            }
        }
    }

    let mut cost = DVector::zeros(n + m);
    cost.rows_mut(0, n).copy_from(&c);
    match tab.run(&cost, n, &mut pivots) {
        None => return LpSolution::failed(lp, LpStatus::IterationLimit, pivots),
        Some(false) => return LpSolution::failed(lp, LpStatus::Unbounded, pivots),
        Some(true) => {}
    }

    let mut x = DVector::zeros(n);
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.t[(i, n + m)];
        }
    }
    // duals from B' y = c_B on the non-redundant rows
    let live: Vec<usize> = (0..m).filter(|i| !redundant.contains(i)).collect();
    let bmat = DMatrix::from_fn(live.len(), live.len(), |r, k| a[(live[r], tab.basis[live[k]])]);
    let cb = DVector::from_iterator(live.len(), live.iter().map(|&k| c[tab.basis[k]]));
    let y_live = bmat
        .transpose()
        .lu()
        .solve(&cb)
        .unwrap_or_else(|| DVector::zeros(live.len()));
    let mut y_full = DVector::zeros(lp.rows());
    for (k, &i) in live.iter().enumerate() {
        let sign = if lp.b()[rows[i]] < 0.0 { -1.0 } else { 1.0 };
        y_full[rows[i]] = sign * y_live[k];
    }
    let xo = DVector::from_iterator(n_orig, (0..n_orig).map(|j| x[j] - neg[j].map_or(0.0, |k| x[k])));
    LpSolution {
        status: LpStatus::Optimal,
        objective: lp.c().dot(&xo),
        residuals: lp.residuals(&xo, &y_full),
        primal: xo,
        dual: y_full,
        iterations: pivots,
        trace: Vec::new(),
    }
}

//! Dense linear programming in equality standard form:
//!
//! ```text
//! minimize c'x  subject to  A x = b,  x_j >= 0 (or free)
//! ```
//!
//! [`solve_ipm`] is a Mehrotra predictor–corrector interior-point method and
//! is what the fitter uses. [`solve_simplex_reference`] is a two-phase dense
//! tableau simplex with Bland's rule, kept as an independent check on small
//! instances.

mod ipm;
mod linalg;
mod presolve;
mod simplex;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use ipm::{solve_ipm, solve_ipm_from, IpmOptions, IpmStart};
pub use presolve::{independent_rows, RowCleanup};
pub use simplex::{solve_simplex_reference, SIMPLEX_SOFT_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpStandardForm {
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    free: Vec<bool>,
}

impl LpStandardForm {
    /// All variables nonnegative.
    pub fn new(c: Vec<f64>, a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        let n = c.len();
        Self::with_free(c, a, b, vec![false; n])
    }

    /// `free[j]` marks a variable without lower bound.
    pub fn with_free(c: Vec<f64>, a: DMatrix<f64>, b: Vec<f64>, free: Vec<bool>) -> Result<Self> {
        if a.ncols() != c.len() || free.len() != c.len() {
            return Err(Error::DimensionMismatch {
                expected: a.ncols(),
                got: c.len(),
            });
        }
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if c.is_empty() {
            return Err(Error::Empty("LP without variables".into()));
        }
        if !(c.iter().chain(&b).all(|v| v.is_finite()) && a.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("LP data must be finite".into()));
        }
        Ok(LpStandardForm {
            c: DVector::from_vec(c),
            a,
            b: DVector::from_vec(b),
            free,
        })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    /// Equivalent problem with every free variable split as `x+ - x-`;
    /// returns the split problem and, per original variable, the column of
    /// its negative part.
    pub(crate) fn split_free(&self) -> (DMatrix<f64>, DVector<f64>, Vec<Option<usize>>) {
        let extra: usize = self.free.iter().filter(|&&f| f).count();
        let n = self.cols();
        if extra == 0 {
            return (self.a.clone(), self.c.clone(), vec![None; n]);
        }
        let mut a = DMatrix::zeros(self.rows(), n + extra);
        a.columns_mut(0, n).copy_from(&self.a);
        let mut c = DVector::zeros(n + extra);
        c.rows_mut(0, n).copy_from(&self.c);
        let mut neg = vec![None; n];
        let mut k = n;
        for j in (0..n).filter(|&j| self.free[j]) {
            a.set_column(k, &(-self.a.column(j)));
            c[k] = -self.c[j];
            neg[j] = Some(k);
            k += 1;
        }
        (a, c, neg)
    }

    /// Relative primal, dual and gap residuals of a candidate solution.
    pub fn residuals(&self, x: &DVector<f64>, y: &DVector<f64>) -> Residuals {
        let rp = &self.b - &self.a * x;
        let reduced = &self.c - self.a.transpose() * y;
        // dual infeasibility: negative reduced cost on a bounded variable,
        // any reduced cost on a free one
        let dual = reduced
            .iter()
            .zip(&self.free)
            .map(|(&r, &f)| if f { r.abs() } else { (-r).max(0.0) })
            .fold(0.0f64, f64::max);
        let pobj = self.c.dot(x);
        let dobj = self.b.dot(y);
        let primal_inf = x
            .iter()
            .zip(&self.free)
            .map(|(&v, &f)| if f { 0.0 } else { (-v).max(0.0) })
            .fold(0.0f64, f64::max);
        Residuals {
            primal: (rp.amax().max(primal_inf)) / (1.0 + self.b.amax()),
            dual: dual / (1.0 + self.c.amax()),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
        }
    }
}

/// Relative residuals: `‖Ax - b‖∞ / (1 + ‖b‖∞)`, dual infeasibility
/// `/ (1 + ‖c‖∞)` and `|c'x - b'y| / (1 + |c'x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// One interior-point iterate, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `x's`
    pub complementarity: f64,
    /// `|y'(b - Ax)| + |x'(c - A'y - s)|`: how far infeasibility can move the gap.
    pub infeasibility_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: DVector<f64>,
    pub dual: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    pub trace: Vec<IterateRecord>,
}

impl LpSolution {
    pub(crate) fn failed(lp: &LpStandardForm, status: LpStatus, iterations: usize) -> Self {
        LpSolution {
            status,
            primal: DVector::zeros(lp.cols()),
            dual: DVector::zeros(lp.rows()),
            objective: f64::NAN,
            iterations,
            residuals: Residuals::default(),
            trace: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[cfg(test)]
mod tests;

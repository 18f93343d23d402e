//! Mehrotra predictor–corrector interior-point method.
//!
//! Infeasible primal–dual path following on the normal equations
//! `A X S⁻¹ A' Δy = r`, factored densely once per iteration and reused for
//! the predictor and the corrector. Equality rows are equilibrated and
//! dependent rows removed before the first iteration; residuals and the
//! termination test are always evaluated on the caller's original problem.

use nalgebra::{DMatrix, DVector};

use super::linalg::{scaled_gram, Cholesky};
use super::presolve::{independent_rows, RowCleanup};
use super::{IterateRecord, LpSolution, LpStandardForm, LpStatus};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Execution,
    /// Record an [`IterateRecord`] per iteration.
    pub trace: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-8,
            max_iter: 200,
            exec: Execution::default(),
            trace: false,
        }
    }
}

const STEP_FRACTION: f64 = 0.995;
const PIVOT_TOL: f64 = 1e-28;
const ROW_RANK_TOL: f64 = 1e-10;
const DIVERGENCE: f64 = 1e10;

fn mehrotra_start(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    exec: Execution,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = a.ncols();
    let start = Normal::new(a, DVector::from_element(n, 1.0), exec);
    let x_ls = a.transpose() * start.solve_m(b);
    let y = start.solve_m(&(a * c));
    let s_ls = c - a.transpose() * &y;
    let dx0 = (-1.5 * x_ls.min()).max(0.0);
    let ds0 = (-1.5 * s_ls.min()).max(0.0);
    let mut x = x_ls.add_scalar(dx0);
    let mut s = s_ls.add_scalar(ds0);
    let xs = x.dot(&s);
    let (sx, ss) = (x.sum(), s.sum());
    if xs > 0.0 && sx > 0.0 && ss > 0.0 {
        x = x.add_scalar(0.5 * xs / ss);
        s = s.add_scalar(0.5 * xs / sx);
    } else {
        x = x.add_scalar(1.0);
        s = s.add_scalar(1.0);
    }
    (x, y, s)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

struct Normal<'a> {
    a: &'a DMatrix<f64>,
    d: DVector<f64>,
    chol: Cholesky,
    m: DMatrix<f64>,
}

impl<'a> Normal<'a> {
    fn new(a: &'a DMatrix<f64>, d: DVector<f64>, exec: Execution) -> Self {
        let m = scaled_gram(a, &d, exec);
        let chol = Cholesky::new(m.clone(), PIVOT_TOL);
        Normal { a, d, chol, m }
    }

    /// Solves `M z = rhs` with one step of iterative refinement.
    fn solve_m(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let z = self.chol.solve(rhs);
        let r = rhs - &self.m * &z;
        z + self.chol.solve(&r)
    }

    /// Newton direction for the given primal/dual residuals and
    /// complementarity right-hand side.
    fn direction(
        &self,
        x: &DVector<f64>,
        s: &DVector<f64>,
        rp: &DVector<f64>,
        rd: &DVector<f64>,
        rxs: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let inner = self.d.component_mul(rd) - rxs.component_div(s);
        let rhs = rp + self.a * inner;
        let dy = self.solve_m(&rhs);
        let ds = rd - self.a.transpose() * &dy;
        let dx = (rxs - x.component_mul(&ds)).component_div(s);
        (dx, dy, ds)
    }
}

/// Strictly positive primal `x` and dual slack `s` with dual multipliers
/// `y`, in the coordinates of the caller's problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IpmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
}

/// Solves `lp` to relative tolerance `opts.tol` on primal feasibility, dual
/// feasibility and duality gap. Starts from Mehrotra's heuristic point.
pub fn solve_ipm(lp: &LpStandardForm, opts: IpmOptions) -> Result<LpSolution> {
    solve(lp, opts, None)
}

/// As [`solve_ipm`], from a given interior point. A strictly feasible start
/// keeps every iterate feasible up to rounding, which avoids the stalls of
/// infeasible starts on highly degenerate problems. Free variables are not
/// supported here.
pub fn solve_ipm_from(lp: &LpStandardForm, opts: IpmOptions, start: &IpmStart) -> Result<LpSolution> {
    if lp.free().iter().any(|&f| f) {
        return Err(Error::InvalidArgument("explicit start with free variables".into()));
    }
    if start.x.len() != lp.cols() || start.s.len() != lp.cols() || start.y.len() != lp.rows() {
        return Err(Error::DimensionMismatch {
            expected: lp.cols(),
            got: start.x.len(),
        });
    }
    if start
        .x
        .iter()
        .chain(start.s.iter())
        .any(|&v| !(v > 0.0) || !v.is_finite())
    {
        return Err(Error::InvalidArgument("start must be strictly positive".into()));
    }
    solve(lp, opts, Some(start))
}

fn solve(lp: &LpStandardForm, opts: IpmOptions, given: Option<&IpmStart>) -> Result<LpSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let (a_split, c, neg) = lp.split_free();
    let n_orig = lp.cols();

    let rows = match independent_rows(&a_split, lp.b(), ROW_RANK_TOL) {
        RowCleanup::Keep(rows) => rows,
        RowCleanup::Inconsistent(_) => return Ok(LpSolution::failed(lp, LpStatus::Infeasible, 0)),
    };
    let n = a_split.ncols();
    let mut a = a_split.select_rows(rows.iter());
    let mut b = lp.b().select_rows(rows.iter());
    let row_scale: DVector<f64> = DVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|i| a.row(i).amax().max(f64::MIN_POSITIVE)),
    );
    for i in 0..a.nrows() {
        let r = row_scale[i];
        a.row_mut(i).unscale_mut(r);
        b[i] /= r;
    }

    let to_original = |x: &DVector<f64>, y: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let xo = DVector::from_iterator(n_orig, (0..n_orig).map(|j| x[j] - neg[j].map_or(0.0, |k| x[k])));
        let mut yo = DVector::zeros(lp.rows());
        for (k, &i) in rows.iter().enumerate() {
            yo[i] = y[k] / row_scale[k];
        }
        (xo, yo)
    };

    if a.nrows() == 0 {
        // only x >= 0 remains
        if c.iter().any(|&v| v < 0.0) {
            return Ok(LpSolution::failed(lp, LpStatus::Unbounded, 0));
        }
        let (x, y) = to_original(&DVector::zeros(n), &DVector::zeros(0));
        return Ok(LpSolution {
            status: LpStatus::Optimal,
            residuals: lp.residuals(&x, &y),
            objective: lp.c().dot(&x),
            primal: x,
            dual: y,
            iterations: 0,
            trace: Vec::new(),
        });
    }

    let (mut x, mut y, mut s) = match given {
        Some(st) => (
            st.x.clone(),
            DVector::from_iterator(rows.len(), rows.iter().zip(row_scale.iter()).map(|(&i, r)| st.y[i] * r)),
            st.s.clone(),
        ),
        None => mehrotra_start(&a, &b, &c, opts.exec),
    };

    let mut trace = Vec::new();
    let a_norm = a.amax();
    let (b_norm, c_norm) = (b.amax(), c.amax());
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;

    for iter in 0..=opts.max_iter {
        let rp = &b - &a * &x;
        let rd = &c - a.transpose() * &y - &s;
        let mu = x.dot(&s) / n as f64;

        if opts.trace {
            trace.push(IterateRecord {
                primal_objective: c.dot(&x),
                dual_objective: b.dot(&y),
                complementarity: x.dot(&s),
                infeasibility_slack: y.dot(&rp).abs() + x.dot(&rd).abs(),
            });
        }

        let (xo, yo) = to_original(&x, &y);
        let res = lp.residuals(&xo, &yo);
        if best.as_ref().is_none_or(|bst| res.max() < bst.0) {
            best = Some((res.max(), xo.clone(), yo.clone()));
        }
        if res.max() <= opts.tol {
            return Ok(LpSolution {
                status: LpStatus::Optimal,
                objective: lp.c().dot(&xo),
                primal: xo,
                dual: yo,
                iterations: iter,
                residuals: res,
                trace,
            });
        }

        // Divergence along a certificate ray.
        let y_norm = y.amax();
        if y_norm > DIVERGENCE * (1.0 + c_norm) {
            let yh = &y / y_norm;
            let aty = (a.transpose() * &yh).max();
            if b.dot(&yh) > 1e-8 * (1.0 + b_norm) && aty <= 1e-6 * a_norm {
                let mut sol = LpSolution::failed(lp, LpStatus::Infeasible, iter);
                sol.trace = trace;
                return Ok(sol);
            }
        }
        let x_norm = x.amax();
        if x_norm > DIVERGENCE * (1.0 + b_norm) {
            let xh = &x / x_norm;
            if (&a * &xh).amax() <= 1e-6 * a_norm && c.dot(&xh) < -1e-8 * (1.0 + c_norm) {
                let mut sol = LpSolution::failed(lp, LpStatus::Unbounded, iter);
                sol.trace = trace;
                return Ok(sol);
            }
        }
        if iter == opts.max_iter || !mu.is_finite() {
            break;
        }

        let normal = Normal::new(&a, x.component_div(&s), opts.exec);

        // predictor
        let rxs_aff = -x.component_mul(&s);
        let (dx_a, _, ds_a) = normal.direction(&x, &s, &rp, &rd, &rxs_aff);
        let ap = max_step(&x, &dx_a).min(1.0);
        let ad = max_step(&s, &ds_a).min(1.0);
        let mu_aff = (&x + ap * &dx_a).dot(&(&s + ad * &ds_a)) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rxs = rxs_aff - dx_a.component_mul(&ds_a) + DVector::from_element(n, sigma * mu);
        let (dx, dy, ds) = normal.direction(&x, &s, &rp, &rd, &rxs);
        let ap = (STEP_FRACTION * max_step(&x, &dx)).min(1.0);
        let ad = (STEP_FRACTION * max_step(&s, &ds)).min(1.0);
        x += ap * dx;
        y += ad * dy;
        s += ad * ds;
    }

    let (_, xo, yo) = best.expect("at least one iterate");
    Ok(LpSolution {
        status: LpStatus::IterationLimit,
        objective: lp.c().dot(&xo),
        residuals: lp.residuals(&xo, &yo),
        primal: xo,
        dual: yo,
        iterations: opts.max_iter,
        trace,
    })
}

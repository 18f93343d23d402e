//! Local refinement by single shooting and global-optimality certification.
//!
//! Controls are piecewise constant on `N` equal segments of the horizon;
//! with a free final time the duration is a decision variable and the
//! segments stretch with it. The cost plus a quadratic penalty on terminal
//! and path violations is minimized by a projected quasi-Newton method on
//! central finite differences, the penalty growing tenfold per round.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::oracle::{FinalTime, OcpProblem, SampledProcess};

pub const DEFAULT_SEGMENTS: usize = 40;
pub const DEFAULT_STEPS_PER_SEGMENT: usize = 20;
pub const DEFAULT_CERT_TOL: f64 = 1e-2;
/// States beyond this multiple of the state-box diameter abort a simulation.
pub const EXPLOSION_FACTOR: f64 = 1e3;

/// Piecewise-constant controls on equal segments of `[t_i, t_i + duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParameterization {
    pub controls: Vec<Vec<f64>>,
    pub duration: f64,
}

impl ControlParameterization {
    pub fn new(controls: Vec<Vec<f64>>, duration: f64) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Empty("control segments".into()));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "duration must be positive, got {duration}"
            )));
        }
        let m = controls[0].len();
        if controls.iter().any(|u| u.len() != m) {
            return Err(Error::InvalidArgument("ragged control segments".into()));
        }
        Ok(ControlParameterization { controls, duration })
    }

    pub fn segments(&self) -> usize {
        self.controls.len()
    }

    /// Constant control `u` on `segments` pieces.
    pub fn constant(u: &[f64], segments: usize, duration: f64) -> Result<Self> {
        Self::new(vec![u.to_vec(); segments.max(1)], duration)
    }

    /// Segment averages of the (piecewise-constant) controls of `init`, its
    /// time axis stretched onto the segments. Controls are clamped into the
    /// box; the duration is that of `init` for free final time.
    pub fn from_process(prob: &OcpProblem, init: &SampledProcess, segments: usize) -> Result<Self> {
        if init.n_controls() != prob.controls() || init.n_states() != prob.states() {
            return Err(Error::DimensionMismatch {
                expected: prob.controls(),
                got: init.n_controls(),
            });
        }
        let segments = segments.max(1);
        let times = init.times();
        let (a, span) = (times[0], init.duration());
        let mut controls = Vec::with_capacity(segments);
        for k in 0..segments {
            let lo = a + span * k as f64 / segments as f64;
            let hi = a + span * (k + 1) as f64 / segments as f64;
            let mut acc = vec![0.0; prob.controls()];
            for i in 0..times.len() - 1 {
                let overlap = times[i + 1].min(hi) - times[i].max(lo);
                if overlap > 0.0 {
                    for (c, u) in acc.iter_mut().zip(&init.controls()[i]) {
                        *c += overlap * u;
                    }
                }
            }
            controls.push(
                acc.iter()
                    .zip(prob.u_box())
                    .map(|(c, iv)| iv.clamp(c / (hi - lo)))
                    .collect(),
            );
        }
        let duration = match prob.final_time() {
            FinalTime::Free => span,
            FinalTime::Fixed(tf) => tf - prob.t_initial(),
        };
        Self::new(controls, duration)
    }
}

/// Simulated trajectory: RK4 samples with the control of the segment that
/// starts at each sample, and the integrated running cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub process: SampledProcess,
    pub cost: f64,
}

fn state_bound(prob: &OcpProblem) -> f64 {
    let d: f64 = prob
        .x_box()
        .iter()
        .map(|iv| iv.width() * iv.width())
        .sum::<f64>()
        .sqrt();
    EXPLOSION_FACTOR * d
}

/// Fixed-step RK4 over all segments. `visit` sees the time, state and
/// control of every sample, the initial one included; the last sample
/// carries the control of the last segment. Returns the integrated cost.
fn integrate<'c>(
    prob: &OcpProblem,
    controls: impl Fn(usize) -> &'c [f64],
    segments: usize,
    duration: f64,
    steps: usize,
    mut visit: impl FnMut(f64, &[f64], &[f64]),
) -> Result<f64> {
    let n = prob.states();
    let m = prob.controls();
    let dt = duration / (segments * steps) as f64;
    let t0 = prob.t_initial();
    let bound = state_bound(prob);
    let mut x = prob.x_initial().to_vec();
    let mut cost = 0.0;
    let mut z = vec![0.0; 1 + m + n];
    let mut rhs = |t: f64, x: &[f64], u: &[f64], dx: &mut [f64]| -> f64 {
        z[0] = t;
        z[1..1 + m].copy_from_slice(u);
        z[1 + m..].copy_from_slice(x);
        for (d, f) in dx.iter_mut().zip(prob.dynamics()) {
            *d = f.eval(&z);
        }
        prob.running_cost().eval(&z)
    };
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    for s in 0..segments {
        let u = controls(s);
        for j in 0..steps {
            let step = s * steps + j;
            let t = t0 + step as f64 * dt;
            visit(t, &x, u);
            let h0 = rhs(t, &x, u, &mut k[0]);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * dt * k[0][i];
            }
            let h1 = rhs(t + 0.5 * dt, &tmp, u, &mut k[1]);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * dt * k[1][i];
            }
            let h2 = rhs(t + 0.5 * dt, &tmp, u, &mut k[2]);
            for i in 0..n {
                tmp[i] = x[i] + dt * k[2][i];
            }
            let h3 = rhs(t + dt, &tmp, u, &mut k[3]);
            for i in 0..n {
                x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            cost += dt / 6.0 * (h0 + 2.0 * h1 + 2.0 * h2 + h3);
            if x.iter().any(|v| !v.is_finite() || v.abs() > bound) {
                return Err(Error::StateExplosion {
                    time: t0 + (step + 1) as f64 * dt,
                });
            }
        }
    }
    visit(t0 + duration, &x, controls(segments - 1));
    Ok(cost)
}

/// Fixed-step RK4 with `steps_per_segment` steps per segment (at least 20),
/// the running cost integrated as an extra state.
pub fn simulate(prob: &OcpProblem, ctrl: &ControlParameterization, steps_per_segment: usize) -> Result<Trajectory> {
    let steps = steps_per_segment.max(DEFAULT_STEPS_PER_SEGMENT);
    if ctrl.controls[0].len() != prob.controls() {
        return Err(Error::DimensionMismatch {
            expected: prob.controls(),
            got: ctrl.controls[0].len(),
        });
    }
    let total = ctrl.segments() * steps + 1;
    let mut times = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(total);
    let mut controls = Vec::with_capacity(total);
    let cost = integrate(
        prob,
        |s| &ctrl.controls[s],
        ctrl.segments(),
        ctrl.duration,
        steps,
        |t, x, u| {
            times.push(t);
            states.push(x.to_vec());
            controls.push(u.to_vec());
        },
    )?;
    Ok(Trajectory {
        process: SampledProcess::new(times, controls, states)?,
        cost,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub segments: usize,
    pub steps_per_segment: usize,
    /// Terminal and path violation accepted as feasible, in box-scaled units.
    pub feas_tol: f64,
    /// Projected-gradient tolerance relative to `1 + |J|`.
    pub opt_tol: f64,
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    /// Iteration budget per penalty round.
    pub max_iter: usize,
    /// Constraints are penalized below this level rather than below zero, so
    /// that the small residual violation of a penalty method lands on the
    /// feasible side.
    pub path_margin: f64,
    pub exec: Execution,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            segments: DEFAULT_SEGMENTS,
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
            feas_tol: 1e-4,
            opt_tol: 1e-6,
            penalty_start: 1e2,
            penalty_growth: 10.0,
            penalty_rounds: 5,
            max_iter: 100,
            path_margin: 1e-4,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub params: ControlParameterization,
    pub trajectory: SampledProcess,
    pub cost: f64,
    /// `max_i |x_i(T) - x_f,i| / width_i`.
    pub terminal_violation: f64,
    /// Largest constraint or state-box violation over all samples.
    pub path_violation: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Worst violation at one sample: constraints below `margin`, and the state
/// box in width-scaled units.
fn sample_violation(prob: &OcpProblem, z: &[f64], margin: f64) -> f64 {
    let m = prob.controls();
    let mut worst = 0.0f64;
    for g in prob.constraints() {
        worst = worst.max(margin - g.eval(z));
    }
    for (x, iv) in z[1 + m..].iter().zip(prob.x_box()) {
        worst = worst.max((iv.lo - x).max(x - iv.hi) / iv.width());
    }
    worst
}

fn terminal_errors<'a>(prob: &'a OcpProblem, x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    x.iter()
        .zip(prob.x_final())
        .zip(prob.x_box())
        .map(|((x, xf), iv)| (x - xf) / iv.width())
}

fn time_overrun(prob: &OcpProblem, duration: f64) -> f64 {
    (prob.t_initial() + duration - prob.t_box().hi) / prob.t_box().width()
}

/// One shooting evaluation: the cost and the residual vector whose squared
/// norm is penalized. Layout: terminal errors, one entry per sample for the
/// path (weighted so that their squares average), the time-box overrun.
struct Eval {
    cost: f64,
    r: DVector<f64>,
}

/// Decision vector layout: controls segment by segment, then the duration
/// when the final time is free.
struct Shooting<'a> {
    prob: &'a OcpProblem,
    opts: RefineOptions,
    segments: usize,
    steps: usize,
    free_time: bool,
    fixed_duration: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Shooting<'a> {
    fn new(prob: &'a OcpProblem, opts: RefineOptions, segments: usize, fixed_duration: f64) -> Self {
        let free_time = prob.final_time() == FinalTime::Free;
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for _ in 0..segments {
            for iv in prob.u_box() {
                lo.push(iv.lo);
                hi.push(iv.hi);
            }
        }
        if free_time {
            let span = prob.t_box().hi - prob.t_initial();
            lo.push(1e-3 * span);
            hi.push(span);
        }
        Shooting {
            prob,
            opts,
            segments,
            steps: opts.steps_per_segment.max(DEFAULT_STEPS_PER_SEGMENT),
            free_time,
            fixed_duration,
            lo,
            hi,
        }
    }

    fn pack(&self, c: &ControlParameterization) -> Vec<f64> {
        let mut p: Vec<f64> = c.controls.iter().flatten().copied().collect();
        if self.free_time {
            p.push(c.duration);
        }
        self.project(&mut p);
        p
    }

    fn unpack(&self, p: &[f64]) -> ControlParameterization {
        let m = self.prob.controls();
        let controls = (0..self.segments).map(|k| p[k * m..(k + 1) * m].to_vec()).collect();
        ControlParameterization {
            controls,
            duration: self.duration(p),
        }
    }

    fn duration(&self, p: &[f64]) -> f64 {
        if self.free_time {
            p[p.len() - 1]
        } else {
            self.fixed_duration
        }
    }

    fn project(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn residual_len(&self) -> usize {
        self.prob.states() + self.segments * self.steps + 2
    }

    fn eval(&self, p: &[f64]) -> Option<Eval> {
        let (n, m) = (self.prob.states(), self.prob.controls());
        let samples = self.segments * self.steps + 1;
        let duration = self.duration(p);
        let weight = 1.0;
        let mut r = DVector::zeros(self.residual_len());
        let mut z = vec![0.0; 1 + m + n];
        let mut k = 0;
        let cost = integrate(
            self.prob,
            |s| &p[s * m..(s + 1) * m],
            self.segments,
            duration,
            self.steps,
            |t, x, u| {
                z[0] = t;
                z[1..1 + m].copy_from_slice(u);
                z[1 + m..].copy_from_slice(x);
                r[n + k] = weight * sample_violation(self.prob, &z, self.opts.path_margin).max(0.0);
                k += 1;
                if k == samples {
                    for (ri, e) in r.iter_mut().zip(terminal_errors(self.prob, x)) {
                        *ri = e;
                    }
                }
            },
        )
        .ok()?;
        r[n + samples] = time_overrun(self.prob, duration).max(0.0);
        Some(Eval { cost, r })
    }

    fn merit(e: &Eval, rho: f64) -> f64 {
        e.cost + rho * e.r.norm_squared()
    }

    /// Central differences of the cost and of the residuals, one-sided
    /// where a neighbour fails to simulate.
    fn derivatives(&self, p: &[f64], at: &Eval) -> (DVector<f64>, DMatrix<f64>) {
        let cols = self.opts.exec.map(p.len(), |j| {
            let h = 1e-6 * p[j].abs().max(1.0);
            let shifted = |d: f64| {
                let mut q = p.to_vec();
                q[j] += d;
                self.eval(&q)
            };
            match (shifted(h), shifted(-h)) {
                (Some(a), Some(b)) => ((a.cost - b.cost) / (2.0 * h), (a.r - b.r) / (2.0 * h)),
                (Some(a), None) => ((a.cost - at.cost) / h, (a.r - &at.r) / h),
                (None, Some(b)) => ((at.cost - b.cost) / h, (&at.r - b.r) / h),
                (None, None) => (0.0, DVector::zeros(at.r.len())),
            }
        });
        let gc = DVector::from_iterator(p.len(), cols.iter().map(|c| c.0));
        let jac = DMatrix::from_columns(&cols.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
        (gc, jac)
    }

    /// Whether coordinate `j` sits on a bound that the gradient pushes against.
    fn blocked(&self, p: &[f64], g: &DVector<f64>, j: usize) -> bool {
        let tol = 1e-12 * (1.0 + self.hi[j].abs().max(self.lo[j].abs()));
        (p[j] <= self.lo[j] + tol && g[j] > 0.0) || (p[j] >= self.hi[j] - tol && g[j] < 0.0)
    }

    /// Projected Levenberg–Marquardt on `cost + rho |r|²`. The model Hessian
    /// is `A + 2 rho J'J`: Gauss–Newton for the penalty, with `A` a damped
    /// BFGS approximation of the remaining curvature (cost plus residual
    /// second derivatives) carried across penalty rounds. Returns the final
    /// point, whether the projected-gradient test was met, and the
    /// iteration count.
    fn minimize(&self, mut p: Vec<f64>, rho: f64, a: &mut DMatrix<f64>) -> (Vec<f64>, bool, usize) {
        let n = p.len();
        let Some(mut e) = self.eval(&p) else {
            return (p, false, 0);
        };
        let mut f = Self::merit(&e, rho);
        let (mut gc, mut jac) = self.derivatives(&p, &e);
        let mut damping = 1e-3;
        for iter in 0..self.opts.max_iter {
            let g = &gc + 2.0 * rho * jac.tr_mul(&e.r);
            let free: Vec<usize> = (0..n).filter(|&j| !self.blocked(&p, &g, j)).collect();
            let pg = free.iter().map(|&j| g[j].abs()).fold(0.0f64, f64::max);
            if pg <= self.opts.opt_tol * (1.0 + f.abs()) {
                return (p, true, iter);
            }
            let b = &*a + 2.0 * rho * jac.tr_mul(&jac);
            let bf = b.select_rows(free.iter()).select_columns(free.iter());
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&j| g[j]));
            let diag_floor = 1e-10 * bf.diagonal().amax().max(1e-12);

            let mut accepted = None;
            while damping <= 1e12 {
                let mut mm = bf.clone();
                for i in 0..free.len() {
                    mm[(i, i)] += damping * bf[(i, i)].abs().max(diag_floor);
                }
                let Some(ch) = mm.cholesky() else {
                    damping *= 10.0;
                    continue;
                };
                let d = ch.solve(&(-&gf));
                let mut trial = p.clone();
                for (k, &j) in free.iter().enumerate() {
                    trial[j] += d[k];
                }
                self.project(&mut trial);
                let s = DVector::from_iterator(n, trial.iter().zip(&p).map(|(x, y)| x - y));
                let predicted = -(g.dot(&s) + 0.5 * s.dot(&(&b * &s)));
                if !(predicted > 0.0) {
                    damping *= 10.0;
                    continue;
                }
                match self.eval(&trial) {
                    Some(et) if f - Self::merit(&et, rho) >= 1e-4 * predicted => {
                        let gain = (f - Self::merit(&et, rho)) / predicted;
                        damping = (damping * (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0)).max(1e-12);
                        accepted = Some((trial, et, s));
                        break;
                    }
                    _ => damping *= 10.0,
                }
            }
            let Some((p_new, e_new, s)) = accepted else {
                // no descent left at the resolution of the model
                return (p, pg <= self.opts.opt_tol.sqrt() * (1.0 + f.abs()), iter);
            };
            let (gc_new, jac_new) = self.derivatives(&p_new, &e_new);

            // structured secant pair for the curvature outside J'J
            let mut y = (&gc_new - &gc) + 2.0 * rho * (&jac_new - &jac).tr_mul(&e_new.r);
            if a.iter().all(|&v| v == 0.0) && s.dot(&y) > 0.0 {
                // first curvature pair: scaled identity
                a.fill_diagonal(y.norm_squared() / s.dot(&y));
            }
            let as_ = &*a * &s;
            let sas = s.dot(&as_);
            let sy = s.dot(&y);
            if sas > 0.0 && sy < 0.2 * sas {
                let theta = 0.8 * sas / (sas - sy);
                y = theta * y + (1.0 - theta) * &as_;
            }
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                *a += &y * y.transpose() / sy;
                if sas > 0.0 {
                    *a -= &as_ * as_.transpose() / sas;
                }
                *a = (&*a + a.transpose()) * 0.5;
            }

            let f_new = Self::merit(&e_new, rho);
            let stalled = (f - f_new).abs() <= 1e-15 * (1.0 + f.abs());
            let pg_loose = pg <= self.opts.opt_tol.sqrt() * (1.0 + f.abs());
            p = p_new;
            e = e_new;
            f = f_new;
            gc = gc_new;
            jac = jac_new;
            if stalled {
                // at the resolution of double precision
                return (p, pg_loose, iter + 1);
            }
        }
        (p, false, self.opts.max_iter)
    }
}

/// Minimizes the cost of `prob` from the initial guess `init` with penalty
/// continuation. The last iterate is returned; `converged` tells whether it
/// is feasible to `feas_tol` and the last round met its stationarity test.
pub fn local_optimize(
    prob: &OcpProblem,
    init: &ControlParameterization,
    opts: &RefineOptions,
) -> Result<RefinementResult> {
    if !(opts.feas_tol > 0.0 && opts.opt_tol > 0.0 && opts.penalty_start > 0.0 && opts.penalty_growth >= 1.0) {
        return Err(Error::InvalidArgument(
            "refinement tolerances and penalties must be positive".into(),
        ));
    }
    if init.controls[0].len() != prob.controls() {
        return Err(Error::DimensionMismatch {
            expected: prob.controls(),
            got: init.controls[0].len(),
        });
    }
    let segments = init.segments();
    let fixed = match prob.final_time() {
        FinalTime::Fixed(tf) => tf - prob.t_initial(),
        FinalTime::Free => init.duration,
    };
    let shoot = Shooting::new(prob, *opts, segments, fixed);
    let mut p = shoot.pack(init);
    let mut a = DMatrix::zeros(p.len(), p.len());
    let mut rho = opts.penalty_start;
    let mut iterations = 0;
    let mut stationary = false;
    for _ in 0..opts.penalty_rounds.max(1) {
        let (next, ok, it) = shoot.minimize(p, rho, &mut a);
        p = next;
        stationary = ok;
        iterations += it;
        rho *= opts.penalty_growth;
    }
    let params = shoot.unpack(&p);
    let tr = simulate(prob, &params, opts.steps_per_segment)?;
    let last = tr.process.len() - 1;
    let terminal = terminal_errors(prob, &tr.process.states()[last]).fold(0.0f64, |m, e| m.max(e.abs()));
    let path = (0..tr.process.len())
        .map(|k| sample_violation(prob, &tr.process.point(k), 0.0))
        .fold(time_overrun(prob, params.duration).max(0.0), f64::max);
    Ok(RefinementResult {
        converged: stationary && terminal <= opts.feas_tol && path <= opts.feas_tol,
        params,
        trajectory: tr.process,
        cost: tr.cost,
        terminal_violation: terminal,
        path_violation: path,
        iterations,
    })
}

/// Outcome of comparing a feasible cost with a relaxation lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub certified: bool,
    /// `local - relaxation`.
    pub gap: f64,
    /// The local cost lies below the lower bound by more than the
    /// tolerance, so the inputs are inconsistent.
    pub below_bound: bool,
}

/// Certified iff `local - relaxation <= tol * max(1, |relaxation|)`.
pub fn certify_global(local_cost: f64, relaxation_cost: f64, tol: f64) -> Result<Certificate> {
    if !(local_cost.is_finite() && relaxation_cost.is_finite()) {
        return Err(Error::InvalidArgument("costs must be finite".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(
            "certification tolerance must be positive".into(),
        ));
    }
    let gap = local_cost - relaxation_cost;
    let scale = tol * relaxation_cost.abs().max(1.0);
    Ok(Certificate {
        certified: gap <= scale,
        gap,
        below_bound: gap < -scale,
    })
}

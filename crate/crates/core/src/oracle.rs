//! Moment oracles: occupation moments of sampled processes, time-averaged
//! moments of invariant measures, and the linear-constraint diagnostics that
//! any admissible occupation measure satisfies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::moments::{enumerate_indices, AffineMap, BoxDomain, Coord, Interval, Layout, MomentVector, MultiIndex};
use crate::poly::Polynomial;
use crate::quadrature::GaussRule;

/// Absolute slack tolerated when checking samples against boxes.
pub const BOX_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalTime {
    Fixed(f64),
    Free,
}

/// Polynomial optimal control problem with fixed endpoints.
///
/// All polynomials are over the full `(t, u, x)` coordinates, `1 + m + n`
/// variables in canonical order.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub name: String,
    n: usize,
    m: usize,
    dynamics: Vec<Polynomial>,
    running_cost: Polynomial,
    t_initial: f64,
    final_time: FinalTime,
    x_initial: Vec<f64>,
    x_final: Vec<f64>,
    t_box: Interval,
    u_box: Vec<Interval>,
    x_box: Vec<Interval>,
    constraints: Vec<Polynomial>,
}

#[derive(Debug, Clone)]
pub struct OcpBuilder {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub dynamics: Vec<Polynomial>,
    pub running_cost: Polynomial,
    pub t_initial: f64,
    pub final_time: FinalTime,
    pub x_initial: Vec<f64>,
    pub x_final: Vec<f64>,
    pub t_box: Interval,
    pub u_box: Vec<Interval>,
    pub x_box: Vec<Interval>,
    pub constraints: Vec<Polynomial>,
}

impl OcpBuilder {
    pub fn build(self) -> Result<OcpProblem> {
        let q = 1 + self.m + self.n;
        if self.dynamics.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: self.dynamics.len(),
            });
        }
        for p in self
            .dynamics
            .iter()
            .chain([&self.running_cost])
            .chain(&self.constraints)
        {
            if p.dim() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: p.dim(),
                });
            }
        }
        if self.x_initial.len() != self.n || self.x_final.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: self.x_initial.len().min(self.x_final.len()),
            });
        }
        if self.u_box.len() != self.m || self.x_box.len() != self.n {
            return Err(Error::InvalidArgument("box count does not match dims".into()));
        }
        let mut all = vec![self.t_box];
        all.extend(&self.u_box);
        all.extend(&self.x_box);
        BoxDomain::new(all)?;
        for (j, iv) in self.x_box.iter().enumerate() {
            for (label, x) in [("initial", &self.x_initial), ("final", &self.x_final)] {
                if !iv.contains(x[j], BOX_SLACK) {
                    return Err(Error::InvalidArgument(format!(
                        "{label} state x{} = {} outside its box",
                        j + 1,
                        x[j]
                    )));
                }
            }
        }
        if !self.t_box.contains(self.t_initial, BOX_SLACK) {
            return Err(Error::InvalidArgument("initial time outside the time box".into()));
        }
        if let FinalTime::Fixed(tf) = self.final_time {
            if !(tf > self.t_initial) || !self.t_box.contains(tf, BOX_SLACK) {
                return Err(Error::InvalidArgument(
                    "final time must lie in the time box after t_i".into(),
                ));
            }
        }
        Ok(OcpProblem {
            name: self.name,
            n: self.n,
            m: self.m,
            dynamics: self.dynamics,
            running_cost: self.running_cost,
            t_initial: self.t_initial,
            final_time: self.final_time,
            x_initial: self.x_initial,
            x_final: self.x_final,
            t_box: self.t_box,
            u_box: self.u_box,
            x_box: self.x_box,
            constraints: self.constraints,
        })
    }
}

impl OcpProblem {
    pub fn states(&self) -> usize {
        self.n
    }

    pub fn controls(&self) -> usize {
        self.m
    }

    pub fn layout(&self) -> Layout {
        Layout::occupation(self.n, self.m)
    }

    pub fn dynamics(&self) -> &[Polynomial] {
        &self.dynamics
    }

    pub fn running_cost(&self) -> &Polynomial {
        &self.running_cost
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.constraints
    }

    pub fn t_initial(&self) -> f64 {
        self.t_initial
    }

    pub fn final_time(&self) -> FinalTime {
        self.final_time
    }

    pub fn x_initial(&self) -> &[f64] {
        &self.x_initial
    }

    pub fn x_final(&self) -> &[f64] {
        &self.x_final
    }

    pub fn t_box(&self) -> Interval {
        self.t_box
    }

    pub fn u_box(&self) -> &[Interval] {
        &self.u_box
    }

    pub fn x_box(&self) -> &[Interval] {
        &self.x_box
    }

    /// The `(t, u, x)` box.
    pub fn domain(&self) -> BoxDomain {
        let mut all = vec![self.t_box];
        all.extend(&self.u_box);
        all.extend(&self.x_box);
        BoxDomain::new(all).expect("validated at construction")
    }

    pub fn dynamics_degree(&self) -> u32 {
        self.dynamics.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// Evaluates `f(t, x, u)`.
    pub fn eval_dynamics(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let z = self.point(t, u, x);
        for (o, f) in out.iter_mut().zip(&self.dynamics) {
            *o = f.eval(&z);
        }
    }

    pub fn point(&self, t: f64, u: &[f64], x: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(1 + self.m + self.n);
        z.push(t);
        z.extend_from_slice(u);
        z.extend_from_slice(x);
        z
    }
}

/// Autonomous polynomial vector field on a state box, explored by a long
/// simulation to approximate an invariant measure.
#[derive(Debug, Clone)]
pub struct InvariantProblem {
    pub name: String,
    /// Polynomials over the state coordinates only.
    pub dynamics: Vec<Polynomial>,
    pub x_box: BoxDomain,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub burn_in: f64,
}

impl InvariantProblem {
    pub fn layout(&self) -> Layout {
        Layout::state_only(self.dynamics.len())
    }

    pub fn dynamics_degree(&self) -> u32 {
        self.dynamics.iter().map(Polynomial::degree).max().unwrap_or(0)
    }
}

/// Trajectory samples with piecewise-linear states and a control held
/// constant from each sample to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProcess {
    times: Vec<f64>,
    controls: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
}

impl SampledProcess {
    pub fn new(times: Vec<f64>, controls: Vec<Vec<f64>>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::TooFewSamples(times.len()));
        }
        if controls.len() != times.len() || states.len() != times.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: controls.len().min(states.len()),
            });
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTimes(k + 1));
        }
        let (m, n) = (controls[0].len(), states[0].len());
        if controls.iter().any(|u| u.len() != m) || states.iter().any(|x| x.len() != n) {
            return Err(Error::InvalidArgument("ragged sample vectors".into()));
        }
        Ok(SampledProcess {
            times,
            controls,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_controls(&self) -> usize {
        self.controls[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Checks every sample against a `(t, u, x)` box with [`BOX_SLACK`].
    pub fn validate_in(&self, domain: &BoxDomain) -> Result<()> {
        let layout = Layout::occupation(self.n_states(), self.n_controls());
        if domain.dim() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: domain.dim(),
            });
        }
        for k in 0..self.len() {
            let z = self.point(k);
            for (p, (&v, iv)) in z.iter().zip(domain.intervals()).enumerate() {
                if !iv.contains(v, BOX_SLACK) {
                    return Err(Error::SampleOutOfBox {
                        sample: k,
                        coord: layout.coord(p).name(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sample `k` as a `(t, u, x)` point.
    pub fn point(&self, k: usize) -> Vec<f64> {
        let mut z = vec![self.times[k]];
        z.extend_from_slice(&self.controls[k]);
        z.extend_from_slice(&self.states[k]);
        z
    }

    /// Value of coordinate `c` at sample `k`.
    pub fn value(&self, c: Coord, k: usize) -> f64 {
        match c {
            Coord::Time => self.times[k],
            Coord::Control(i) => self.controls[k][i],
            Coord::State(j) => self.states[k][j],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub nodes_per_segment: usize,
    pub exec: Execution,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            nodes_per_segment: 8,
            exec: Execution::default(),
        }
    }
}

const SEGMENT_CHUNK: usize = 256;

/// Integrates every monomial in `indices` along the process, with each
/// point laid out as `(t?, u, x)` depending on `with_time`/`with_controls`.
fn integrate_monomials(
    proc: &SampledProcess,
    indices: &[MultiIndex],
    with_time: bool,
    with_controls: bool,
    opts: QuadratureOptions,
) -> Vec<f64> {
    let rule = GaussRule::new(opts.nodes_per_segment);
    let degree = indices.iter().map(MultiIndex::degree).max().unwrap_or(0) as usize;
    let dim = indices.first().map_or(0, MultiIndex::dim);
    let segments = proc.len() - 1;
    let partials = opts.exec.map_chunks(segments, SEGMENT_CHUNK, |range| {
        let mut acc = vec![0.0; indices.len()];
        let mut pows = vec![vec![1.0; degree + 1]; dim];
        let mut z = Vec::with_capacity(dim);
        for k in range {
            let (t0, t1) = (proc.times[k], proc.times[k + 1]);
            let (x0, x1) = (&proc.states[k], &proc.states[k + 1]);
            let u = &proc.controls[k];
            for (t, w) in rule.on(t0, t1) {
                let s = (t - t0) / (t1 - t0);
                z.clear();
                if with_time {
                    z.push(t);
                }
                if with_controls {
                    z.extend_from_slice(u);
                }
                z.extend(x0.iter().zip(x1).map(|(a, b)| a + s * (b - a)));
                for (p, &v) in pows.iter_mut().zip(&z) {
                    for e in 1..=degree {
                        p[e] = p[e - 1] * v;
                    }
                }
                for (a, alpha) in acc.iter_mut().zip(indices) {
                    let mono = alpha
                        .entries()
                        .iter()
                        .zip(&pows)
                        .fold(1.0, |m, (&e, p)| m * p[e as usize]);
                    *a += w * mono;
                }
            }
        }
        acc
    });
    let mut total = vec![0.0; indices.len()];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// Moments `y_alpha = ∫ t^i u^j x^k dt` of the occupation measure of a
/// sampled process, by composite Gauss–Legendre quadrature per segment.
pub fn occupation_moments(
    proc: &SampledProcess,
    domain: &BoxDomain,
    degree: u32,
    opts: QuadratureOptions,
) -> Result<MomentVector> {
    if degree < 2 || degree % 2 != 0 {
        return Err(Error::OddDegree(degree));
    }
    proc.validate_in(domain)?;
    let layout = Layout::occupation(proc.n_states(), proc.n_controls());
    let indices = enumerate_indices(layout.dim(), degree);
    let values = integrate_monomials(proc, &indices, true, true, opts);
    MomentVector::new(
        layout,
        degree,
        domain.clone(),
        indices.into_iter().zip(values).collect(),
    )
}

/// Fixed-step RK4 for an autonomous polynomial vector field.
pub(crate) fn rk4_autonomous(f: &[Polynomial], x: &[f64], dt: f64) -> Vec<f64> {
    let eval = |y: &[f64]| -> Vec<f64> { f.iter().map(|p| p.eval(y)).collect() };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = eval(x);
    let k2 = eval(&axpy(0.5 * dt, &k1));
    let k3 = eval(&axpy(0.5 * dt, &k2));
    let k4 = eval(&axpy(dt, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct InvariantOptions {
    /// Integration step.
    pub step: f64,
    pub quadrature: QuadratureOptions,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        InvariantOptions {
            step: 1e-3,
            quadrature: QuadratureOptions::default(),
        }
    }
}

/// Default burn-in as a fraction of the horizon.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.2;

/// States over the last `span` time units of a simulation from `x0` to the
/// horizon, one per `step`. Serves as a reference attractor.
pub fn reference_orbit(problem: &InvariantProblem, span: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0 && span > 0.0 && span <= problem.horizon) {
        return Err(Error::InvalidArgument("need 0 < span <= horizon and step > 0".into()));
    }
    let steps = (problem.horizon / step).ceil() as usize;
    let dt = problem.horizon / steps as f64;
    let keep_from = steps - ((span / dt).round() as usize).min(steps);
    let mut x = problem.x0.clone();
    let mut out = Vec::new();
    for k in 0..steps {
        if k >= keep_from {
            out.push(x.clone());
        }
        x = rk4_autonomous(&problem.dynamics, &x, dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::StateExplosion {
                time: (k + 1) as f64 * dt,
            });
        }
    }
    out.push(x);
    Ok(out)
}

/// Normalized time average of monomials along a simulated trajectory,
/// discarding `[0, burn_in]`. Approximates the moments of an invariant
/// probability measure; `y_0` is exactly 1.
pub fn invariant_moments(problem: &InvariantProblem, degree: u32, opts: InvariantOptions) -> Result<MomentVector> {
    if degree % 2 != 0 {
        return Err(Error::OddDegree(degree));
    }
    if !(problem.horizon > problem.burn_in && problem.burn_in > 0.0) {
        return Err(Error::InvalidArgument("need horizon > burn_in > 0".into()));
    }
    let n = problem.dynamics.len();
    if problem.x0.len() != n || problem.x_box.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: problem.x0.len(),
        });
    }
    let steps = ((problem.horizon - problem.burn_in) / opts.step).ceil() as usize;
    let burn_steps = (problem.burn_in / opts.step).ceil() as usize;
    let dt_burn = problem.burn_in / burn_steps as f64;
    let dt = (problem.horizon - problem.burn_in) / steps as f64;

    let mut x = problem.x0.clone();
    for k in 0..burn_steps {
        x = rk4_autonomous(&problem.dynamics, &x, dt_burn);
        if !problem.x_box.contains(&x, BOX_SLACK) {
            return Err(Error::Escaped {
                time: (k + 1) as f64 * dt_burn,
            });
        }
    }
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(problem.burn_in);
    states.push(x.clone());
    for k in 0..steps {
        x = rk4_autonomous(&problem.dynamics, &x, dt);
        if !problem.x_box.contains(&x, BOX_SLACK) {
            return Err(Error::Escaped {
                time: problem.burn_in + (k + 1) as f64 * dt,
            });
        }
        times.push(problem.burn_in + (k + 1) as f64 * dt);
        states.push(x.clone());
    }
    let controls = vec![Vec::new(); times.len()];
    let proc = SampledProcess::new(times, controls, states)?;
    let layout = Layout::state_only(n);
    let indices = enumerate_indices(n, degree);
    let raw = integrate_monomials(&proc, &indices, false, false, opts.quadrature);
    let mass = raw[0];
    let mut entries = BTreeMap::new();
    for (i, (alpha, v)) in indices.into_iter().zip(raw).enumerate() {
        entries.insert(alpha, if i == 0 { 1.0 } else { v / mass });
    }
    MomentVector::new(layout, degree, problem.x_box.clone(), entries)
}

/// Test-function family for the linear-constraint diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestBasis {
    /// Monomials in the raw coordinates.
    #[default]
    Monomial,
    /// Monomials in coordinates mapped affinely onto `[-1, 1]`.
    UnitBox,
}

/// Test functions over `positions` of a `dim`-dimensional layout, up to
/// degree `d`.
fn test_functions(domain: &BoxDomain, positions: &[usize], dim: usize, d: u32, basis: TestBasis) -> Vec<Polynomial> {
    let unit = AffineMap::to_unit(domain);
    enumerate_indices(positions.len(), d)
        .into_iter()
        .map(|beta| match basis {
            TestBasis::Monomial => Polynomial::zero(dim).with_term(1.0, beta.embed(positions, dim)),
            TestBasis::UnitBox => {
                let mut v = Polynomial::constant(dim, 1.0);
                for (&p, &e) in positions.iter().zip(beta.entries()) {
                    let lin = Polynomial::constant(dim, unit.offset()[p])
                        .with_term(unit.scale()[p], MultiIndex::unit(dim, p, 1));
                    for _ in 0..e {
                        v = v.mul(&lin);
                    }
                }
                v
            }
        })
        .collect()
}

/// `⟨p, μ⟩` from moments.
fn integrate(p: &Polynomial, y: &MomentVector) -> Result<f64> {
    p.terms()
        .iter()
        .filter(|(c, _)| *c != 0.0)
        .map(|(c, a)| Ok(c * y.require(a)?))
        .sum()
}

/// Largest violation of
/// `v(t_f, x_f) - v(t_i, x_i) = ⟨∂v/∂t + ∂v/∂x · f, μ⟩`
/// over test functions `v(t, x)` of degree at most `test_degree`.
///
/// With a free final time the terminal time is `t_i + y_0`.
pub fn check_adjoint_identity(y: &MomentVector, prob: &OcpProblem, test_degree: u32, basis: TestBasis) -> Result<f64> {
    let layout = prob.layout();
    if y.layout() != layout {
        return Err(Error::InvalidArgument(
            "moment layout does not match the problem".into(),
        ));
    }
    let fdeg = prob.dynamics_degree().max(1);
    if test_degree + fdeg > y.degree() + 1 {
        return Err(Error::DegreeBudget {
            test: test_degree,
            dynamics: fdeg,
            moments: y.degree(),
        });
    }
    let dim = layout.dim();
    let mut positions = vec![0];
    positions.extend((0..prob.states()).map(|j| layout.position(Coord::State(j)).unwrap()));
    let t_f = match prob.final_time() {
        FinalTime::Fixed(tf) => tf,
        FinalTime::Free => prob.t_initial() + y.mass(),
    };
    let start = prob.point(prob.t_initial(), &vec![0.0; prob.controls()], prob.x_initial());
    let end = prob.point(t_f, &vec![0.0; prob.controls()], prob.x_final());
    let mut worst: f64 = 0.0;
    for v in test_functions(&prob.domain(), &positions, dim, test_degree, basis) {
        let mut lv = v.derivative(0);
        for (j, f) in prob.dynamics().iter().enumerate() {
            lv = lv.add(&v.derivative(positions[j + 1]).mul(f));
        }
        let boundary = v.eval(&end) - v.eval(&start);
        worst = worst.max((boundary - integrate(&lv, y)?).abs());
    }
    Ok(worst)
}

/// Largest `|⟨∇v · f, μ⟩|` over test functions `v(x)` of degree at most
/// `test_degree`; zero for an invariant measure.
pub fn check_invariance(
    y: &MomentVector,
    problem: &InvariantProblem,
    test_degree: u32,
    basis: TestBasis,
) -> Result<f64> {
    let n = problem.dynamics.len();
    if y.layout() != Layout::state_only(n) {
        return Err(Error::InvalidArgument(
            "moment layout does not match the problem".into(),
        ));
    }
    let fdeg = problem.dynamics_degree().max(1);
    if test_degree + fdeg > y.degree() + 1 {
        return Err(Error::DegreeBudget {
            test: test_degree,
            dynamics: fdeg,
            moments: y.degree(),
        });
    }
    let positions: Vec<usize> = (0..n).collect();
    let mut worst: f64 = 0.0;
    for v in test_functions(y.domain(), &positions, n, test_degree, basis) {
        let mut lv = Polynomial::zero(n);
        for (j, f) in problem.dynamics.iter().enumerate() {
            lv = lv.add(&v.derivative(j).mul(f));
        }
        worst = worst.max(integrate(&lv, y)?.abs());
    }
    Ok(worst)
}

/// Piecewise-constant control schedule: `(start time, control)` pieces,
/// the last piece running to `t_initial + duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    pub pieces: Vec<(f64, Vec<f64>)>,
    pub duration: f64,
}

/// Simulates `schedule` with RK4, `steps_per_unit` steps per unit time (at
/// least one per piece), returning every step as a sample. Breakpoints of
/// the schedule fall exactly on samples.
pub fn simulate_schedule(
    prob: &OcpProblem,
    schedule: &ControlSchedule,
    steps_per_unit: usize,
) -> Result<SampledProcess> {
    if schedule.pieces.is_empty() || !(schedule.duration > 0.0) {
        return Err(Error::Empty("control schedule".into()));
    }
    let t0 = prob.t_initial();
    let t_end = t0 + schedule.duration;
    let mut times = vec![t0];
    let mut controls = Vec::new();
    let mut states = vec![prob.x_initial().to_vec()];
    let mut x = prob.x_initial().to_vec();
    for (i, (start, u)) in schedule.pieces.iter().enumerate() {
        if u.len() != prob.controls() {
            return Err(Error::DimensionMismatch {
                expected: prob.controls(),
                got: u.len(),
            });
        }
        let stop = schedule.pieces.get(i + 1).map_or(t_end, |p| p.0);
        let start = if i == 0 { t0 } else { *start };
        if !(stop > start) {
            return Err(Error::NonMonotoneTimes(i));
        }
        let steps = (((stop - start) * steps_per_unit as f64).ceil() as usize).max(1);
        let dt = (stop - start) / steps as f64;
        for k in 0..steps {
            let t = start + k as f64 * dt;
            x = rk4_step(prob, t, &x, u, dt);
            controls.push(u.clone());
            times.push(if k + 1 == steps {
                stop
            } else {
                start + (k + 1) as f64 * dt
            });
            states.push(x.clone());
        }
    }
    let last = controls.last().cloned().unwrap_or_default();
    controls.push(last);
    SampledProcess::new(times, controls, states)
}

/// One RK4 step of `ẋ = f(t, x, u)` with `u` held constant.
pub(crate) fn rk4_step(prob: &OcpProblem, t: f64, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    prob.eval_dynamics(t, x, u, &mut k[0]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k[0][i];
    }
    prob.eval_dynamics(t + 0.5 * dt, &tmp, u, &mut k[1]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k[1][i];
    }
    prob.eval_dynamics(t + 0.5 * dt, &tmp, u, &mut k[2]);
    for i in 0..n {
        tmp[i] = x[i] + dt * k[2][i];
    }
    prob.eval_dynamics(t + dt, &tmp, u, &mut k[3]);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    fn idx(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    fn ramp_process(samples: usize) -> SampledProcess {
        // x(t) = t, u(t) = 1 on [0, 1]
        let times: Vec<f64> = (0..samples).map(|k| k as f64 / (samples - 1) as f64).collect();
        let states = times.iter().map(|&t| vec![t]).collect();
        SampledProcess::new(times.clone(), vec![vec![1.0]; samples], states).unwrap()
    }

    fn unit_domain() -> BoxDomain {
        BoxDomain::from_bounds(&[(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]).unwrap()
    }

    #[test]
    fn ramp_moments() {
        let y = occupation_moments(&ramp_process(11), &unit_domain(), 4, QuadratureOptions::default()).unwrap();
        assert!((y.mass() - 1.0).abs() < 1e-14);
        assert!((y.get(&idx(&[1, 0, 1])).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        // x^2 t^2 integrates to 1/5
        assert!((y.get(&idx(&[2, 0, 2])).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn polynomial_process_matches_closed_form() {
        // x(t) = t^2 sampled on 40 segments; interpolation is linear, so
        // compare against the exact integral of the interpolant: with 64
        // nodes the quadrature reproduces it to rounding.
        let n = 41;
        let times: Vec<f64> = (0..n).map(|k| k as f64 / 40.0).collect();
        let states: Vec<Vec<f64>> = times.iter().map(|t| vec![t * t]).collect();
        let proc = SampledProcess::new(times.clone(), vec![vec![0.5]; n], states).unwrap();
        let opts = QuadratureOptions {
            nodes_per_segment: 64,
            ..Default::default()
        };
        let y = occupation_moments(&proc, &unit_domain(), 4, opts).unwrap();
        // ∫ u t dt = 0.5 * 1/2
        assert!((y.get(&idx(&[1, 1, 0])).unwrap() - 0.25).abs() < 1e-15);
        // ∫ t^3 = 1/4 exactly regardless of interpolation
        assert!((y.get(&idx(&[3, 0, 0])).unwrap() - 0.25).abs() <= 1e-8 * 0.25);
        // x linear on each segment: ∫ x dt = trapezoid sum of t^2
        let trap: f64 = (0..40)
            .map(|k| {
                let (a, b) = (times[k], times[k + 1]);
                0.5 * (b - a) * (a * a + b * b)
            })
            .sum();
        assert!((y.get(&idx(&[0, 0, 1])).unwrap() - trap).abs() <= 1e-8 * trap);
    }

    #[test]
    fn rejects_bad_processes() {
        assert!(matches!(
            SampledProcess::new(vec![0.0], vec![vec![]], vec![vec![]]),
            Err(Error::TooFewSamples(1))
        ));
        assert!(matches!(
            SampledProcess::new(vec![0.0, 1.0, 1.0], vec![vec![]; 3], vec![vec![]; 3]),
            Err(Error::NonMonotoneTimes(2))
        ));
        let p = SampledProcess::new(vec![0.0, 1.0], vec![vec![2.0]; 2], vec![vec![0.0]; 2]).unwrap();
        assert!(matches!(
            occupation_moments(&p, &unit_domain(), 2, QuadratureOptions::default()),
            Err(Error::SampleOutOfBox { .. })
        ));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let proc = ramp_process(2001);
        let s = occupation_moments(
            &proc,
            &unit_domain(),
            6,
            QuadratureOptions {
                exec: Execution::Sequential,
                ..Default::default()
            },
        )
        .unwrap();
        let p = occupation_moments(
            &proc,
            &unit_domain(),
            6,
            QuadratureOptions {
                exec: Execution::Parallel,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn double_integrator_control_moment() {
        let prob = problems::double_integrator();
        let proc = simulate_schedule(&prob, &problems::double_integrator_schedule(), 2000).unwrap();
        let y = occupation_moments(&proc, &prob.domain(), 8, QuadratureOptions::default()).unwrap();
        assert!((y.mass() - problems::double_integrator_min_time()).abs() < 1e-12);
        // ⟨u⟩ = x2(t_f) - x2(0)
        assert!((y.get(&idx(&[0, 1, 0, 0])).unwrap() + 1.0).abs() < 1e-4);
        let end = proc.states().last().unwrap();
        assert!(end[0].abs() < 1e-12 && end[1].abs() < 1e-12, "{end:?}");
    }

    #[test]
    fn adjoint_identity_edge_cases() {
        let prob = problems::double_integrator();
        let dom = prob.domain();
        // zero measure: only the boundary term survives
        let mut e = BTreeMap::new();
        for a in enumerate_indices(4, 8) {
            e.insert(a, 0.0);
        }
        let zero = MomentVector::new(prob.layout(), 8, dom.clone(), e).unwrap();
        let r = check_adjoint_identity(&zero, &prob, 1, TestBasis::Monomial).unwrap();
        // v = x1 or x2: |0 - 1| = 1; v = t: t_f - 0 = y_0 = 0
        assert!((r - 1.0).abs() < 1e-15);
        // v = 1 contributes nothing
        assert_eq!(
            check_adjoint_identity(&zero, &prob, 0, TestBasis::Monomial).unwrap(),
            0.0
        );
        assert!(matches!(
            check_adjoint_identity(&zero, &prob, 9, TestBasis::Monomial),
            Err(Error::DegreeBudget { .. })
        ));
    }

    #[test]
    fn adjoint_residual_shrinks_with_sampling() {
        let prob = problems::double_integrator();
        let mut last = f64::INFINITY;
        for steps in [25, 50, 100, 200] {
            let proc = simulate_schedule(&prob, &problems::double_integrator_schedule(), steps).unwrap();
            let y = occupation_moments(&proc, &prob.domain(), 8, QuadratureOptions::default()).unwrap();
            let r = check_adjoint_identity(&y, &prob, 6, TestBasis::Monomial).unwrap();
            assert!(r < last, "steps={steps}: {r} !< {last}");
            last = r;
        }
    }

    #[test]
    fn stable_origin_concentrates() {
        let p = InvariantProblem {
            name: "decay".into(),
            dynamics: vec![Polynomial::zero(1).with_term(-1.0, idx(&[1]))],
            x_box: BoxDomain::from_bounds(&[(-2.0, 2.0)]).unwrap(),
            x0: vec![1.0],
            horizon: 60.0,
            burn_in: 40.0,
        };
        let y = invariant_moments(&p, 4, InvariantOptions::default()).unwrap();
        assert_eq!(y.mass(), 1.0);
        for k in 1..=4 {
            assert!(y.get(&idx(&[k])).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_requires_burn_in_before_horizon() {
        let mut p = problems::van_der_pol();
        p.burn_in = p.horizon;
        assert!(invariant_moments(&p, 4, InvariantOptions::default()).is_err());
    }

    #[test]
    fn escaping_trajectory_is_reported() {
        let p = InvariantProblem {
            name: "growth".into(),
            dynamics: vec![Polynomial::zero(1).with_term(1.0, idx(&[1]))],
            x_box: BoxDomain::from_bounds(&[(-2.0, 2.0)]).unwrap(),
            x0: vec![1.0],
            horizon: 5.0,
            burn_in: 1.0,
        };
        assert!(matches!(
            invariant_moments(&p, 2, InvariantOptions::default()),
            Err(Error::Escaped { .. })
        ));
    }
}

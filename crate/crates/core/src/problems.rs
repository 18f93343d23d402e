//! Bundled example problems and their closed-form reference solutions.

use crate::oracle::{ControlSchedule, InvariantProblem, OcpProblem};
use crate::problem_file::{parse_problem, ProblemSpec};

pub const DOUBLE_INTEGRATOR_SPEC: &str = include_str!("../problems/double_integrator.ocp");
pub const NONCONVEX_SPEC: &str = include_str!("../problems/nonconvex_integrator.ocp");
pub const VAN_DER_POL_SPEC: &str = include_str!("../problems/van_der_pol.ocp");

/// Reported optimal cost of the obstacle problem.
pub const NONCONVEX_OPTIMAL_COST: f64 = 0.176;
/// Reported cost of the order-6 relaxation of the obstacle problem, a lower bound.
pub const NONCONVEX_ORDER6_COST: f64 = 0.164;
/// Reported cost of the order-2 relaxation of the obstacle problem.
pub const NONCONVEX_ORDER2_COST: f64 = 0.141;

fn ocp(text: &str) -> (OcpProblem, Option<ControlSchedule>) {
    match parse_problem(text).expect("bundled problem parses") {
        ProblemSpec::Ocp { problem, reference } => (problem, reference),
        ProblemSpec::Invariant(_) => unreachable!("bundled problem kind"),
    }
}

pub fn double_integrator() -> OcpProblem {
    ocp(DOUBLE_INTEGRATOR_SPEC).0
}

/// Bang-bang optimal schedule of the double integrator.
pub fn double_integrator_schedule() -> ControlSchedule {
    ControlSchedule {
        pieces: vec![(0.0, vec![-1.0]), (double_integrator_switch_time(), vec![1.0])],
        duration: double_integrator_min_time(),
    }
}

/// `1 + sqrt(3/2)`: where the `u = -1` arc from `(1, 1)` meets the switching curve `x1 = x2^2 / 2`.
pub fn double_integrator_switch_time() -> f64 {
    1.0 + 1.5f64.sqrt()
}

pub fn double_integrator_min_time() -> f64 {
    1.0 + 2.0 * 1.5f64.sqrt()
}

/// Exact optimal state `(x1, x2)` of the double integrator at time `t`.
pub fn double_integrator_state(t: f64) -> [f64; 2] {
    let ts = double_integrator_switch_time();
    if t <= ts {
        [1.0 + t - 0.5 * t * t, 1.0 - t]
    } else {
        let s = double_integrator_min_time() - t;
        // u = +1 arc ending at the origin, run backwards
        [0.5 * s * s, -s]
    }
}

pub fn nonconvex_integrator() -> OcpProblem {
    ocp(NONCONVEX_SPEC).0
}

pub fn nonconvex_reference_schedule() -> ControlSchedule {
    ocp(NONCONVEX_SPEC).1.expect("bundled reference schedule")
}

pub fn van_der_pol() -> InvariantProblem {
    match parse_problem(VAN_DER_POL_SPEC).expect("bundled problem parses") {
        ProblemSpec::Invariant(p) => p,
        ProblemSpec::Ocp { .. } => unreachable!("bundled problem kind"),
    }
}

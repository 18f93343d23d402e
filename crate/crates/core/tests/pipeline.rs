use std::path::{Path, PathBuf};

use occrecon::io;
use occrecon::momentfile::load_moments;
use occrecon::oracle::{reference_orbit, OcpProblem};
use occrecon::pipeline::{self, Outcome, RunConfig};
use occrecon::problem_file::{load_problem, ProblemSpec};
use occrecon::reconstruct::one_sided_hausdorff;
use occrecon::refine::{local_optimize, ControlParameterization, RefineOptions};
use occrecon::Execution;

fn problem_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("problems")
        .join(format!("{name}.ocp"))
}

fn spec(name: &str) -> ProblemSpec {
    load_problem(&problem_path(name)).unwrap()
}

fn ocp(spec: &ProblemSpec) -> &OcpProblem {
    match spec {
        ProblemSpec::Ocp { problem, .. } => problem,
        ProblemSpec::Invariant(_) => panic!("not a control problem"),
    }
}

fn fast() -> RunConfig {
    RunConfig {
        degree: 6,
        grid_t: 41,
        grid_coord: 41,
        segments: 20,
        ..RunConfig::default()
    }
}

#[test]
fn written_files_read_back() {
    let s = spec("double_integrator");
    let dir = tempfile::tempdir().unwrap();
    let report = pipeline::run_pipeline(&s, &fast(), dir.path()).unwrap();
    let Outcome::Ocp {
        reconstruction,
        refinement,
        ..
    } = &report.outcome
    else {
        panic!()
    };

    let y = load_moments(&dir.path().join("moments.txt")).unwrap();
    assert_eq!(y, report.moments.file);

    let rows = io::load_series(&dir.path().join("series_u1.csv")).unwrap();
    let points: Vec<_> = rows.iter().map(|r| r.point).collect();
    assert_eq!(points, reconstruction.controls[0].points);

    let assembled = io::load_process(&dir.path().join("reconstructed.csv")).unwrap();
    assert_eq!(assembled, reconstruction.process);
    let refined = io::load_process(&dir.path().join("refined.csv")).unwrap();
    assert_eq!(refined, refinement.trajectory);

    let atoms = io::load_atoms(&dir.path().join("atoms_u1.csv")).unwrap();
    let kept = reconstruction.controls[0]
        .support
        .atoms()
        .filter(|(_, w)| *w > 0.0)
        .count();
    assert_eq!(atoms.atoms.len(), kept);

    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("double_integrator"));
    for p in &report.artifacts {
        assert!(p.is_file(), "{}", p.display());
    }
}

#[test]
fn parallel_and_sequential_agree_exactly() {
    let s = spec("nonconvex_integrator");
    let par = pipeline::moments_for(&s, &fast()).unwrap();
    let seq_cfg = RunConfig {
        exec: Execution::Sequential,
        ..fast()
    };
    let seq = pipeline::moments_for(&s, &seq_cfg).unwrap();
    assert_eq!(par, seq);

    let y = &par.file.moments;
    let a = pipeline::reconstruct_ocp(ocp(&s), y, &fast()).unwrap();
    let b = pipeline::reconstruct_ocp(ocp(&s), y, &seq_cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reconstructed_init_beats_the_bound_on_the_obstacle_problem() {
    let s = spec("nonconvex_integrator");
    let cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let report = pipeline::run_pipeline(&s, &cfg, dir.path()).unwrap();
    let Outcome::Ocp { refinement, .. } = &report.outcome else {
        panic!()
    };
    assert!(refinement.converged);
    assert!(refinement.cost <= 0.185, "{}", refinement.cost);
    assert!(refinement.path_violation <= 1e-6);
}

/// The fixed list of naive constant-control initial guesses.
fn constant_inits() -> Vec<f64> {
    (0..10).map(|k| -1.0 + 2.0 * k as f64 / 9.0).collect()
}

/// Outcome of refining from each constant init: `true` if it reached a
/// feasible point within 5% of the best known cost.
fn naive_successes() -> Vec<bool> {
    let s = spec("nonconvex_integrator");
    let prob = ocp(&s);
    let opts = RefineOptions::default();
    constant_inits()
        .into_iter()
        .map(|c| {
            let init = ControlParameterization::constant(&[c], 40, 1.0).unwrap();
            match local_optimize(prob, &init, &opts) {
                Ok(r) => {
                    r.converged && r.terminal_violation <= 1e-4 && r.path_violation <= 1e-4 && r.cost <= 0.176 * 1.05
                }
                Err(_) => false,
            }
        })
        .collect()
}

#[test]
fn naive_inits_mostly_reach_the_optimum() {
    // Regression pin for the current optimizer: 9 of the 10 constant
    // inits reach the optimum, c = 1/3 stalls at an infeasible point.
    let ok = naive_successes();
    assert_eq!(ok.iter().filter(|&&b| !b).count(), 1, "{ok:?}");
    assert!(!ok[6]);
}

#[test]
#[ignore = "not reproduced: the penalty method recovers from most constant inits"]
fn naive_inits_fail_at_least_six_times() {
    let ok = naive_successes();
    let failures = ok.iter().filter(|&&b| !b).count();
    assert!(failures >= 6, "only {failures} of 10 constant inits failed");
}

#[test]
#[ignore = "not reproduced: degree-8 moments admit too few atoms to cover the cycle within 2 eps"]
fn van_der_pol_support_covers_the_cycle() {
    let s = spec("van_der_pol");
    let ProblemSpec::Invariant(p) = &s else { panic!() };
    let cfg = RunConfig {
        joint_grid: true,
        ..RunConfig::default()
    };
    let y = pipeline::moments_for(&s, &cfg).unwrap().file.moments;
    let support = pipeline::reconstruct_joint(&y, &cfg).unwrap();
    let atoms: Vec<Vec<f64>> = support
        .measure
        .atoms()
        .filter(|(_, w)| *w > 0.0)
        .map(|(z, _)| z.to_vec())
        .collect();
    let cycle = reference_orbit(p, 7.0, 1e-3).unwrap();
    let eps = support.measure.grid.resolution()[0];
    let d = one_sided_hausdorff(&cycle, &atoms);
    assert!(d <= 2.0 * eps, "{d} > {}", 2.0 * eps);
}

#[test]
fn van_der_pol_atoms_lie_on_the_cycle() {
    let s = spec("van_der_pol");
    let ProblemSpec::Invariant(p) = &s else { panic!() };
    let cfg = RunConfig {
        joint_grid: true,
        ..RunConfig::default()
    };
    let y = pipeline::moments_for(&s, &cfg).unwrap().file.moments;
    let support = pipeline::reconstruct_joint(&y, &cfg).unwrap();
    let atoms: Vec<Vec<f64>> = support
        .measure
        .atoms()
        .filter(|(_, w)| *w > 0.0)
        .map(|(z, _)| z.to_vec())
        .collect();
    let cycle = reference_orbit(p, 7.0, 1e-3).unwrap();
    let spacing = 2.0 * support.measure.grid.resolution()[0];
    assert!(one_sided_hausdorff(&atoms, &cycle) <= spacing);
}

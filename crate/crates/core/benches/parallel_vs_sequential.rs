use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use occrecon::moments::Coord;
use occrecon::oracle::{occupation_moments, simulate_schedule, OcpProblem, QuadratureOptions, SampledProcess};
use occrecon::pipeline::{self, RunConfig};
use occrecon::problem_file::{load_problem, ProblemSpec};
use occrecon::reconstruct::{build_moment_matrix, marginal_grid, marginal_indices};
use occrecon::refine::{local_optimize, ControlParameterization, RefineOptions};
use occrecon::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn double_integrator() -> (OcpProblem, SampledProcess) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("problems/double_integrator.ocp");
    let ProblemSpec::Ocp { problem, reference } = load_problem(&path).unwrap() else {
        unreachable!()
    };
    let proc = simulate_schedule(&problem, reference.as_ref().unwrap(), pipeline::DEFAULT_STEPS_PER_UNIT).unwrap();
    (problem, proc)
}

fn moments(c: &mut Criterion) {
    let (problem, proc) = double_integrator();
    let mut g = c.benchmark_group("occupation_moments");
    for (name, exec) in MODES {
        let quad = QuadratureOptions {
            exec,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| occupation_moments(&proc, &problem.domain(), 8, quad).unwrap())
        });
    }
    g.finish();
}

fn moment_matrix(c: &mut Criterion) {
    let (problem, proc) = double_integrator();
    let y = occupation_moments(&proc, &problem.domain(), 8, QuadratureOptions::default()).unwrap();
    let grid = marginal_grid(&y, Coord::Control(0), 101, 101).unwrap();
    let idx = marginal_indices(y.layout(), Coord::Control(0), 8).unwrap();
    let mut g = c.benchmark_group("moment_matrix");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_moment_matrix(&grid, &idx, exec).unwrap())
        });
    }
    g.finish();
}

fn reconstruction(c: &mut Criterion) {
    let (problem, proc) = double_integrator();
    let y = occupation_moments(&proc, &problem.domain(), 6, QuadratureOptions::default()).unwrap();
    let mut g = c.benchmark_group("reconstruct_all_coordinates");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = RunConfig {
            degree: 6,
            grid_t: 51,
            grid_coord: 51,
            exec,
            ..RunConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pipeline::reconstruct_ocp(&problem, &y, &cfg).unwrap())
        });
    }
    g.finish();
}

fn refinement(c: &mut Criterion) {
    let (problem, _) = double_integrator();
    let init = ControlParameterization::constant(&[0.0], 40, 3.0).unwrap();
    let mut g = c.benchmark_group("refine_fd_gradient");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = RefineOptions {
            penalty_rounds: 1,
            max_iter: 5,
            exec,
            ..RefineOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| local_optimize(&problem, &init, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, moments, moment_matrix, reconstruction, refinement);
criterion_main!(benches);

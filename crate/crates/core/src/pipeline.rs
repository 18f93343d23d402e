//! End-to-end runs: moments, reconstruction, refinement, certification.
//!
//! Every stage is a plain function so the CLI subcommands and the full
//! pipeline share one code path. Artifacts are written in a fixed order
//! with deterministic content; timings never reach the files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io;
use crate::momentfile::{save_moments, MomentFile};
use crate::moments::{Coord, MomentVector};
use crate::oracle::{
    check_adjoint_identity, check_invariance, invariant_moments, occupation_moments, simulate_schedule, FinalTime,
    InvariantOptions, InvariantProblem, OcpProblem, QuadratureOptions, SampledProcess, TestBasis,
};
use crate::problem_file::ProblemSpec;
use crate::reconstruct::{
    assemble_process, marginal_grid, marginal_indices, reconstruct_coordinate, reconstruct_support, CoordinateSeries,
    Grid, ReconstructOptions, ReconstructedProcess, Support, DEFAULT_GRID_POINTS, DEFAULT_THRESHOLD,
};
use crate::refine::{
    certify_global, local_optimize, Certificate, ControlParameterization, RefineOptions, RefinementResult,
    DEFAULT_CERT_TOL, DEFAULT_SEGMENTS,
};

pub const DEFAULT_DEGREE: u32 = 8;
pub const DEFAULT_TIME_SAMPLES: usize = 401;
/// RK4 steps per unit time when simulating a bundled reference schedule.
pub const DEFAULT_STEPS_PER_UNIT: usize = 2000;
/// Largest test-function degree in the linear-constraint diagnostics.
pub const MAX_TEST_DEGREE: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub degree: u32,
    pub grid_t: usize,
    pub grid_coord: usize,
    pub threshold: f64,
    pub segments: usize,
    pub tol_cert: f64,
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Samples of the assembled process.
    pub time_samples: usize,
    pub steps_per_unit: usize,
    /// Fit all states jointly on one grid instead of `(t, coord)` marginals.
    pub joint_grid: bool,
    pub relaxation_cost: Option<f64>,
    pub exec: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            degree: DEFAULT_DEGREE,
            grid_t: DEFAULT_GRID_POINTS,
            grid_coord: DEFAULT_GRID_POINTS,
            threshold: DEFAULT_THRESHOLD,
            segments: DEFAULT_SEGMENTS,
            tol_cert: DEFAULT_CERT_TOL,
            feas_tol: RefineOptions::default().feas_tol,
            opt_tol: RefineOptions::default().opt_tol,
            time_samples: DEFAULT_TIME_SAMPLES,
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            joint_grid: false,
            relaxation_cost: None,
            exec: Execution::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 || self.degree % 2 != 0 {
            return Err(Error::OddDegree(self.degree));
        }
        let positive = [
            ("threshold", self.threshold),
            ("tol-cert", self.tol_cert),
            ("feas-tol", self.feas_tol),
            ("opt-tol", self.opt_tol),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
        if !(self.threshold < 1.0) {
            return Err(Error::InvalidArgument("threshold must be below 1".into()));
        }
        if self.grid_t < 2
            || self.grid_coord < 2
            || self.segments == 0
            || self.time_samples < 2
            || self.steps_per_unit == 0
        {
            return Err(Error::InvalidArgument(
                "grid sizes, segments and sample counts must be positive".into(),
            ));
        }
        if let Some(c) = self.relaxation_cost {
            if !c.is_finite() {
                return Err(Error::InvalidArgument("relaxation cost must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn reconstruct_options(&self) -> ReconstructOptions {
        let mut o = ReconstructOptions {
            threshold: self.threshold,
            ..Default::default()
        };
        o.fit.ipm.exec = self.exec;
        o
    }

    pub fn refine_options(&self) -> RefineOptions {
        RefineOptions {
            segments: self.segments,
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
            exec: self.exec,
            ..Default::default()
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Generated moments with their linear-constraint residual: the adjoint
/// identity for control problems, invariance for autonomous systems.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsReport {
    pub file: MomentFile,
    pub residual: f64,
    pub test_degree: u32,
}

fn test_degree(moment_degree: u32, dynamics_degree: u32) -> u32 {
    MAX_TEST_DEGREE.min(moment_degree + 1 - dynamics_degree.clamp(1, moment_degree))
}

/// Occupation moments of a sampled admissible process of `prob`.
pub fn moments_from_process(prob: &OcpProblem, proc: &SampledProcess, cfg: &RunConfig) -> Result<MomentsReport> {
    let quad = QuadratureOptions {
        exec: cfg.exec,
        ..Default::default()
    };
    let y = occupation_moments(proc, &prob.domain(), cfg.degree, quad)?;
    let d = test_degree(cfg.degree, prob.dynamics_degree());
    let residual = check_adjoint_identity(&y, prob, d, TestBasis::UnitBox)?;
    Ok(MomentsReport {
        file: MomentFile::from_oracle(y, &prob.name),
        residual,
        test_degree: d,
    })
}

/// Time-average moments of an autonomous system.
pub fn moments_invariant(problem: &InvariantProblem, cfg: &RunConfig) -> Result<MomentsReport> {
    let opts = InvariantOptions {
        quadrature: QuadratureOptions {
            exec: cfg.exec,
            ..Default::default()
        },
        ..Default::default()
    };
    let y = invariant_moments(problem, cfg.degree, opts)?;
    let d = test_degree(cfg.degree, problem.dynamics_degree());
    let residual = check_invariance(&y, problem, d, TestBasis::UnitBox)?;
    Ok(MomentsReport {
        file: MomentFile::from_oracle(y, &problem.name),
        residual,
        test_degree: d,
    })
}

/// Moments of the problem's bundled reference: its control schedule, or
/// the long-run average for an autonomous system.
pub fn moments_for(spec: &ProblemSpec, cfg: &RunConfig) -> Result<MomentsReport> {
    match spec {
        ProblemSpec::Ocp { problem, reference } => {
            let schedule = reference.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{} has no reference_control schedule; supply a trajectory",
                    problem.name
                ))
            })?;
            let proc = simulate_schedule(problem, schedule, cfg.steps_per_unit)?;
            moments_from_process(problem, &proc, cfg)
        }
        ProblemSpec::Invariant(p) => moments_invariant(p, cfg),
    }
}

/// Checks that `y` belongs to `prob` and carries every marginal moment.
pub fn check_moments_for(prob: &OcpProblem, y: &MomentVector) -> Result<()> {
    let layout = prob.layout();
    if y.layout() != layout {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: y.layout().dim(),
        });
    }
    for c in layout.coords().into_iter().filter(|&c| c != Coord::Time) {
        for alpha in marginal_indices(layout, c, y.degree())? {
            y.require(&alpha)?;
        }
    }
    Ok(())
}

/// Marginal reconstruction of every state and control, assembled over
/// `[t_i, t_i + T]` with `T` the fixed horizon or the mass of `y`.
pub fn reconstruct_ocp(prob: &OcpProblem, y: &MomentVector, cfg: &RunConfig) -> Result<ReconstructedProcess> {
    check_moments_for(prob, y)?;
    let opts = cfg.reconstruct_options();
    let coords: Vec<Coord> = y.layout().coords().into_iter().filter(|&c| c != Coord::Time).collect();
    let series: Vec<CoordinateSeries> = cfg
        .exec
        .map(coords.len(), |i| {
            let grid = marginal_grid(y, coords[i], cfg.grid_t, cfg.grid_coord)?;
            reconstruct_coordinate(y, coords[i], &grid, &opts).map_err(|e| match e {
                Error::Lp { status, message } => Error::Lp {
                    status,
                    message: format!("coordinate {}: {message}", coords[i]),
                },
                other => other,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let t0 = prob.t_initial();
    let duration = match prob.final_time() {
        FinalTime::Fixed(tf) => tf - t0,
        FinalTime::Free => y.mass(),
    };
    assemble_process(&series, cfg.time_samples, Some((t0, t0 + duration)))
}

/// Support of `y` on a joint grid over all its coordinates, with
/// `grid_coord` points per axis.
pub fn reconstruct_joint(y: &MomentVector, cfg: &RunConfig) -> Result<Support> {
    let layout = y.layout();
    let coords = layout.coords();
    let grid = Grid::uniform(layout, &coords, y.domain(), &vec![cfg.grid_coord; coords.len()])?;
    reconstruct_support(y, &grid, &cfg.reconstruct_options())
}

/// Single-shooting refinement hot-started from `init`.
pub fn refine_from(prob: &OcpProblem, init: &SampledProcess, cfg: &RunConfig) -> Result<RefinementResult> {
    let start = ControlParameterization::from_process(prob, init, cfg.segments)?;
    local_optimize(prob, &start, &cfg.refine_options())
}

pub fn certify(cost: f64, cfg: &RunConfig) -> Result<Option<Certificate>> {
    cfg.relaxation_cost
        .map(|relax| certify_global(cost, relax, cfg.tol_cert))
        .transpose()
}

/// `CERTIFIED` or `NOT-CERTIFIED gap=<value>`.
pub fn verdict(c: &Certificate) -> String {
    if c.certified {
        "CERTIFIED".to_string()
    } else {
        format!("NOT-CERTIFIED gap={}", c.gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ocp {
        reconstruction: ReconstructedProcess,
        refinement: RefinementResult,
        certificate: Option<Certificate>,
    },
    Invariant {
        support: Support,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub problem: String,
    pub moments: MomentsReport,
    pub outcome: Outcome,
    /// Files written, in order.
    pub artifacts: Vec<PathBuf>,
}

impl PipelineReport {
    /// Refinement converged, or there was nothing to refine.
    pub fn succeeded(&self) -> bool {
        match &self.outcome {
            Outcome::Ocp { refinement, .. } => refinement.converged,
            Outcome::Invariant { .. } => true,
        }
    }
}

pub fn moments_summary(r: &MomentsReport) -> String {
    let y = &r.file.moments;
    let mut s = String::new();
    writeln!(s, "moments {} degree {}", y.len(), y.degree()).unwrap();
    writeln!(s, "y0 {}", y.mass()).unwrap();
    writeln!(s, "constraint_residual {:e} test_degree {}", r.residual, r.test_degree).unwrap();
    s
}

pub fn reconstruction_summary(rec: &ReconstructedProcess) -> String {
    let mut s = String::new();
    for c in rec.controls.iter().chain(&rec.states) {
        writeln!(
            s,
            "coord {} fit_error {:e} retained_mass {} way_points {} multimodal_cells {}",
            c.coord,
            c.fit_error,
            c.retained_mass,
            c.points.len(),
            c.multimodal_cells.len()
        )
        .unwrap();
    }
    s
}

pub fn refinement_summary(r: &RefinementResult, cert: Option<&Certificate>) -> String {
    let mut s = String::new();
    writeln!(s, "refined_cost {}", r.cost).unwrap();
    writeln!(s, "duration {}", r.params.duration).unwrap();
    writeln!(s, "terminal_violation {:e}", r.terminal_violation).unwrap();
    writeln!(s, "path_violation {:e}", r.path_violation).unwrap();
    writeln!(s, "converged {} iterations {}", r.converged, r.iterations).unwrap();
    if let Some(c) = cert {
        if c.below_bound {
            writeln!(s, "warning local cost lies below the relaxation bound").unwrap();
        }
        writeln!(s, "{}", verdict(c)).unwrap();
    }
    s
}

pub fn support_summary(sup: &Support) -> String {
    let atoms = sup.measure.weights.iter().filter(|&&w| w > 0.0).count();
    format!(
        "atoms {atoms}\nfit_error {:e}\nretained_mass {}\n",
        sup.measure.fit_error, sup.retained_mass
    )
}

/// Per-coordinate way-point and atom files plus the assembled process.
pub fn write_reconstruction(dir: &Path, rec: &ReconstructedProcess) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for c in rec.controls.iter().chain(&rec.states) {
        let p = dir.join(format!("series_{}.csv", c.coord));
        io::save_series(&p, std::slice::from_ref(c))?;
        out.push(p);
        let p = dir.join(format!("atoms_{}.csv", c.coord));
        io::save_atoms(&p, &c.support)?;
        out.push(p);
    }
    let p = dir.join("reconstructed.csv");
    io::save_process(&p, &rec.process)?;
    out.push(p);
    Ok(out)
}

/// Runs every stage for `spec` and writes the artifacts into `out_dir`.
/// Control problems: moments, per-coordinate series, the assembled and the
/// refined process, a summary. Autonomous systems: moments, the joint
/// support, a summary.
pub fn run_pipeline(spec: &ProblemSpec, cfg: &RunConfig, out_dir: &Path) -> Result<PipelineReport> {
    stage("config", cfg.validate())?;
    stage("output", fs::create_dir_all(out_dir).map_err(Error::from))?;
    let moments = stage("moments", moments_for(spec, cfg))?;
    let mut artifacts = Vec::new();
    let mpath = out_dir.join("moments.txt");
    stage("moments", save_moments(&moments.file, &mpath))?;
    artifacts.push(mpath);
    let mut summary = format!("problem {}\n", spec.name());
    summary.push_str(&moments_summary(&moments));

    let outcome = match spec {
        ProblemSpec::Ocp { problem, .. } => {
            let y = &moments.file.moments;
            let rec = stage("reconstruct", reconstruct_ocp(problem, y, cfg))?;
            artifacts.extend(stage("reconstruct", write_reconstruction(out_dir, &rec))?);
            summary.push_str(&reconstruction_summary(&rec));
            let refinement = stage("refine", refine_from(problem, &rec.process, cfg))?;
            let rpath = out_dir.join("refined.csv");
            stage("refine", io::save_process(&rpath, &refinement.trajectory))?;
            artifacts.push(rpath);
            let certificate = stage("certify", certify(refinement.cost, cfg))?;
            summary.push_str(&refinement_summary(&refinement, certificate.as_ref()));
            Outcome::Ocp {
                reconstruction: rec,
                refinement,
                certificate,
            }
        }
        ProblemSpec::Invariant(_) => {
            let support = stage("reconstruct", reconstruct_joint(&moments.file.moments, cfg))?;
            let spath = out_dir.join("support.csv");
            stage("reconstruct", io::save_atoms(&spath, &support.measure))?;
            artifacts.push(spath);
            summary.push_str(&support_summary(&support));
            Outcome::Invariant { support }
        }
    };
    let spath = out_dir.join("summary.txt");
    stage("output", fs::write(&spath, summary).map_err(Error::from))?;
    artifacts.push(spath);
    Ok(PipelineReport {
        problem: spec.name().to_string(),
        moments,
        outcome,
        artifacts,
    })
}

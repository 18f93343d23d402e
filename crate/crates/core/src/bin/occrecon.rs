//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 parse, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use occrecon::io;
use occrecon::momentfile::{load_moments, save_moments};
use occrecon::pipeline::{self, RunConfig};
use occrecon::problem_file::{load_problem, ProblemSpec};
use occrecon::{Error, Execution};

#[derive(Parser)]
#[command(
    name = "occrecon",
    version,
    about = "Reconstruct trajectories and controls from occupation-measure moments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a moment file from a trajectory CSV or the problem's reference.
    Moments {
        #[command(flatten)]
        common: Common,
        /// Process CSV (`time,u1..,x1..`); defaults to the reference schedule
        /// or, for autonomous systems, the long-run average.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Override the simulation horizon of an autonomous system.
        #[arg(long)]
        horizon: Option<f64>,
        /// Override the discarded initial stretch of an autonomous system.
        #[arg(long)]
        burn_in: Option<f64>,
    },
    /// Fit atomic measures to a moment file and write way-point CSVs.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        moments: PathBuf,
    },
    /// Refine an assembled process by single shooting and certify it.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Assembled process CSV used as the initial guess.
        #[arg(long)]
        init: PathBuf,
    },
    /// Moments, reconstruction, refinement and certification in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Problem description file.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value = "occrecon-out")]
    out_dir: PathBuf,
    /// Moment degree 2r.
    #[arg(long, default_value_t = pipeline::DEFAULT_DEGREE)]
    degree: u32,
    /// Grid points along time.
    #[arg(long, default_value_t = occrecon::reconstruct::DEFAULT_GRID_POINTS)]
    grid_t: usize,
    /// Grid points along each reconstructed coordinate.
    #[arg(long, default_value_t = occrecon::reconstruct::DEFAULT_GRID_POINTS)]
    grid_coord: usize,
    /// Relative weight threshold for support extraction.
    #[arg(long, default_value_t = occrecon::reconstruct::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Piecewise-constant control segments for refinement.
    #[arg(long, default_value_t = occrecon::refine::DEFAULT_SEGMENTS)]
    segments: usize,
    /// Relative certification tolerance.
    #[arg(long, default_value_t = occrecon::refine::DEFAULT_CERT_TOL)]
    tol_cert: f64,
    /// Lower bound from a moment relaxation, enabling certification.
    #[arg(long, allow_hyphen_values = true)]
    relaxation_cost: Option<f64>,
    /// Fit all coordinates jointly on one grid.
    #[arg(long)]
    joint_grid: bool,
    /// Run every loop on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn config(&self) -> RunConfig {
        RunConfig {
            degree: self.degree,
            grid_t: self.grid_t,
            grid_coord: self.grid_coord,
            threshold: self.threshold,
            segments: self.segments,
            tol_cert: self.tol_cert,
            relaxation_cost: self.relaxation_cost,
            joint_grid: self.joint_grid,
            exec: if self.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
            ..RunConfig::default()
        }
    }
}

enum Failure {
    Usage(String),
    Error(Error),
    /// Outputs were written but refinement did not converge.
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Parse { .. }
        | Error::DuplicateMoment(_)
        | Error::MissingMoment(_)
        | Error::OddDegree(_)
        | Error::TooFewSamples(_)
        | Error::NonMonotoneTimes(_) => 3,
        Error::Lp { .. }
        | Error::Singular(_)
        | Error::StateExplosion { .. }
        | Error::Escaped { .. }
        | Error::AllBelowThreshold(_) => 4,
        _ => 2,
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", p.display())))
    }
}

fn ocp(spec: &ProblemSpec) -> Result<&occrecon::oracle::OcpProblem, Failure> {
    match spec {
        ProblemSpec::Ocp { problem, .. } => Ok(problem),
        ProblemSpec::Invariant(p) => Err(Failure::Usage(format!("{} is not a control problem", p.name))),
    }
}

fn prepare(common: &Common) -> Result<(ProblemSpec, RunConfig), Failure> {
    require_file(&common.spec, "problem file")?;
    let cfg = common.config();
    cfg.validate()?;
    let spec = load_problem(&common.spec)?;
    std::fs::create_dir_all(&common.out_dir).map_err(Error::from)?;
    Ok((spec, cfg))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Moments {
            common,
            trajectory,
            horizon,
            burn_in,
        } => {
            let (mut spec, cfg) = prepare(&common)?;
            if let ProblemSpec::Invariant(p) = &mut spec {
                p.horizon = horizon.unwrap_or(p.horizon);
                p.burn_in = burn_in.unwrap_or(p.burn_in);
            }
            let report = match (&spec, trajectory) {
                (ProblemSpec::Ocp { problem, .. }, Some(path)) => {
                    require_file(&path, "trajectory")?;
                    pipeline::moments_from_process(problem, &io::load_process(&path)?, &cfg)?
                }
                (ProblemSpec::Invariant(_), Some(_)) => {
                    return Err(Failure::Usage("--trajectory applies to control problems only".into()))
                }
                (_, None) => pipeline::moments_for(&spec, &cfg)?,
            };
            let path = common.out_dir.join("moments.txt");
            save_moments(&report.file, &path)?;
            print!("{}", pipeline::moments_summary(&report));
            println!("wrote {}", path.display());
        }
        Command::Reconstruct { common, moments } => {
            let (spec, cfg) = prepare(&common)?;
            require_file(&moments, "moment file")?;
            let y = load_moments(&moments)?.moments;
            match (&spec, cfg.joint_grid) {
                (ProblemSpec::Ocp { problem, .. }, false) => {
                    let rec = pipeline::reconstruct_ocp(problem, &y, &cfg)?;
                    let files = pipeline::write_reconstruction(&common.out_dir, &rec)?;
                    print!("{}", pipeline::reconstruction_summary(&rec));
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
                _ => {
                    let expected = match &spec {
                        ProblemSpec::Ocp { problem, .. } => problem.layout(),
                        ProblemSpec::Invariant(p) => p.layout(),
                    };
                    if y.layout() != expected {
                        return Err(Error::DimensionMismatch {
                            expected: expected.dim(),
                            got: y.layout().dim(),
                        }
                        .into());
                    }
                    let support = pipeline::reconstruct_joint(&y, &cfg)?;
                    let path = common.out_dir.join("support.csv");
                    io::save_atoms(&path, &support.measure)?;
                    print!("{}", pipeline::support_summary(&support));
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Refine { common, init } => {
            let (spec, cfg) = prepare(&common)?;
            let problem = ocp(&spec)?;
            require_file(&init, "initial process")?;
            let start = io::load_process(&init)?;
            let result = pipeline::refine_from(problem, &start, &cfg)?;
            let path = common.out_dir.join("refined.csv");
            io::save_process(&path, &result.trajectory)?;
            let cert = pipeline::certify(result.cost, &cfg)?;
            print!("{}", pipeline::refinement_summary(&result, cert.as_ref()));
            println!("wrote {}", path.display());
            if !result.converged {
                return Err(Failure::NotConverged);
            }
        }
        Command::Pipeline { common } => {
            let (spec, cfg) = prepare(&common)?;
            let report = pipeline::run_pipeline(&spec, &cfg, &common.out_dir)?;
            print!(
                "{}",
                std::fs::read_to_string(common.out_dir.join("summary.txt")).map_err(Error::from)?
            );
            for f in &report.artifacts {
                println!("wrote {}", f.display());
            }
            if !report.succeeded() {
                return Err(Failure::NotConverged);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: refinement did not converge; best iterate written");
            ExitCode::from(4)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snapmatch::synth::{BaseShape, Deformation, DeformationKind, SyntheticSpec};
use snapmatch_cli::commands::{final_trajectory_file, run_compare, run_match, run_strain, run_synth};
use snapmatch_cli::config::{Config, Overrides};
use snapmatch_cli::CliError;

#[derive(Parser)]
#[command(name = "snapmatch", version, about = "Match a surface grid through a sequence of snapshots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a matching problem with the splitting solver.
    Match(RunArgs),
    /// Per-vertex strain intensity of a deformed grid.
    Strain(StrainArgs),
    /// Run the splitting solver and the gradient-descent baseline side by side.
    Compare(RunArgs),
    /// Generate a synthetic problem bundle.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "sigma-v")]
    sigma_v: Option<f64>,
    #[arg(long = "sigma-d")]
    sigma_d: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long = "stop-factor")]
    stop_factor: Option<f64>,
    #[arg(long = "gap-tol")]
    gap_tol: Option<f64>,
    #[arg(long = "stag-tol")]
    stag_tol: Option<f64>,
    #[arg(long = "stag-window")]
    stag_window: Option<usize>,
    #[arg(long = "inner-tol")]
    inner_tol: Option<f64>,
    #[arg(long = "inner-max")]
    inner_max: Option<usize>,
    #[arg(long = "frozen-u")]
    frozen_u: bool,
    /// Robust Hausdorff quantile used by `compare`.
    #[arg(long)]
    quantile: Option<f64>,
    /// Write zeros instead of wall-clock times so outputs are reproducible.
    #[arg(long = "no-timing")]
    no_timing: bool,
}

impl RunArgs {
    fn config(&self) -> Result<Config, CliError> {
        let mut config = Config::load(&self.config)?;
        Overrides {
            max_iterations: self.max_iters,
            rho: self.rho,
            lambda: self.lambda,
            sigma_v: self.sigma_v,
            sigma_d: self.sigma_d,
            ridge: self.ridge,
            stop_factor: self.stop_factor,
            gap_tol: self.gap_tol,
            stag_tol: self.stag_tol,
            stag_window: self.stag_window,
            inner_tol: self.inner_tol,
            inner_max: self.inner_max,
            frozen_u: self.frozen_u,
            no_timing: self.no_timing,
            seed: self.seed,
            quantile: self.quantile,
            out: self.out.clone(),
        }
        .apply(&mut config);
        Ok(config)
    }
}

#[derive(Args)]
struct StrainArgs {
    /// Triangulated reference grid (`N T` mesh format).
    #[arg(long)]
    reference: PathBuf,
    /// Deformed grid with the same vertex order.
    #[arg(long, conflicts_with = "run")]
    deformed: Option<PathBuf>,
    /// Output directory of `match`; its last trajectory file is used.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    snapshots: usize,
    #[arg(long, value_enum, default_value = "smooth-bump")]
    deformation: DeformationArg,
    #[arg(long, default_value_t = 0.5)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bundle")]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ShapeArg {
    Sphere,
    Ellipsoid,
    OpenSheet,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DeformationArg {
    Translation,
    UniformScale,
    SmoothBump,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Match(args) => {
            let outcome = run_match(&args.config()?)?;
            let last = outcome.report.history.last();
            println!(
                "{} iterations, termination: {}, final cost: {}",
                outcome.report.history.len(),
                outcome.report.termination.label(),
                last.map_or(f64::NAN, |r| r.cost)
            );
            println!("wrote {}", outcome.out.display());
        }
        Command::Compare(args) => {
            let config = args.config()?;
            for row in run_compare(&config)? {
                println!(
                    "{:<20} robust_hausdorff {:.6} kinetic_energy {:.6} seconds {:.3} iterations {}",
                    row.method, row.robust_hausdorff, row.kinetic_energy, row.cpu_seconds, row.iterations
                );
            }
        }
        Command::Strain(args) => {
            let deformed = match (&args.deformed, &args.run) {
                (Some(d), _) => d.clone(),
                (None, Some(run)) => final_trajectory_file(run)?,
                (None, None) => return Err(CliError::Config("pass --deformed FILE or --run DIR".into())),
            };
            let values = run_strain(&args.reference, &deformed, &args.out)?;
            println!("strain at {} vertices written to {}", values.len(), args.out.display());
        }
        Command::Synth(args) => {
            let spec = SyntheticSpec {
                base_shape: match args.shape {
                    ShapeArg::Sphere => BaseShape::Sphere,
                    ShapeArg::Ellipsoid => BaseShape::Ellipsoid,
                    ShapeArg::OpenSheet => BaseShape::OpenSheet,
                },
                n_points: args.n,
                m_points: args.m,
                n_snapshots: args.snapshots,
                deformation: Deformation {
                    kind: match args.deformation {
                        DeformationArg::Translation => DeformationKind::Translation,
                        DeformationArg::UniformScale => DeformationKind::UniformScale,
                        DeformationArg::SmoothBump => DeformationKind::SmoothBump,
                    },
                    magnitude: args.magnitude,
                },
                noise: args.noise,
                seed: args.seed,
            };
            let path = run_synth(&spec, &args.out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

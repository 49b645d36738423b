use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gravalign::harness::benchmark::{grid, write_benchmark, Scenario};
use gravalign::harness::io::{load_cloud, load_priors, write_descriptors, ResultDocument};
use gravalign::harness::{configure_threads, BaseSource, ScenarioSpec};
use gravalign::masses::apply_prior_matches;
use gravalign::signature::{compute_descriptors, masses_from_signature, DEFAULT_BOOST, DEFAULT_QUANTILE};
use gravalign::{align, AlignConfig, Result};

#[derive(Parser)]
#[command(name = "gravalign", version, about = "Joint rigid registration of point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align two or more clouds and write the poses as JSON.
    Align {
        #[arg(long, default_value_t = 12.0)]
        theta: f64,
        #[arg(long, default_value_t = 1e-3)]
        huber_eps: f64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 2)]
        inner_iters: usize,
        /// Prior matches, rows of `cloud_index point_index group_id weight`.
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Boost the masses of points with a high shape signature.
        #[arg(long)]
        signature_masses: bool,
        /// Result file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
    },
    /// Run an experiment grid on synthetic copies and write CSV rows.
    Benchmark {
        #[arg(long)]
        scenario: Scenario,
        /// Base cloud; the built-in surface when omitted.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value_t = 5045)]
        points: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-point shape signature and the resulting masses, as CSV.
    Signature {
        #[arg(long, default_value_t = 16.0)]
        theta: f64,
        #[arg(long, default_value_t = DEFAULT_BOOST)]
        boost: f64,
        #[arg(long, default_value_t = DEFAULT_QUANTILE)]
        quantile: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        file: PathBuf,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Align {
            theta,
            huber_eps,
            max_iters,
            inner_iters,
            priors,
            signature_masses,
            out,
            files,
        } => {
            let mut clouds = files
                .iter()
                .enumerate()
                .map(|(id, f)| load_cloud(f, id))
                .collect::<Result<Vec<_>>>()?;
            if signature_masses {
                clouds = clouds
                    .iter()
                    .map(|c| {
                        let d = compute_descriptors(c, 16.0)?;
                        masses_from_signature(c, &d, DEFAULT_BOOST, DEFAULT_QUANTILE)
                    })
                    .collect::<Result<_>>()?;
            }
            if let Some(path) = priors {
                clouds = apply_prior_matches(&clouds, &load_priors(&path)?)?;
            }
            let config = AlignConfig {
                theta,
                huber_eps,
                max_outer_iters: max_iters,
                inner_lm_iters: inner_iters,
                log_iterations: true,
                ..AlignConfig::default()
            };
            let result = align(&clouds, &config)?;
            log::info!(
                "{} iterations, converged: {}, {:.2} s",
                result.outer_iterations,
                result.converged,
                result.wall_time
            );
            let mut w = output(&out)?;
            serde_json::to_writer_pretty(&mut w, &ResultDocument::from(&result))?;
            writeln!(w)?;
            w.flush()?;
        }
        Command::Benchmark {
            scenario,
            base,
            points,
            seed,
            reps,
            out,
        } => {
            let base = match base {
                Some(path) => BaseSource::Cloud(load_cloud(&path, 0)?),
                None => BaseSource::Generated { points },
            };
            let template = ScenarioSpec {
                base,
                repetitions: reps,
                seed,
                ..ScenarioSpec::default()
            };
            let cells = grid(scenario, &template);
            write_benchmark(&cells, output(&out)?)?;
        }
        Command::Signature {
            theta,
            boost,
            quantile,
            out,
            file,
        } => {
            let cloud = load_cloud(&file, 0)?;
            let d = compute_descriptors(&cloud, theta)?;
            let weighted = masses_from_signature(&cloud, &d, boost, quantile)?;
            let mut w = output(&out)?;
            write_descriptors(&mut w, &d, weighted.masses())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

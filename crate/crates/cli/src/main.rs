use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hps::HpsError;
use hps_cli::{compare_files, run, RunConfig};

#[derive(Parser)]
#[command(name = "hps", version, about = "Adaptive HPS solver for elliptic boundary value problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a uniform or adaptive solve of a benchmark problem.
    Solve {
        /// Configuration file (`key = value` lines).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        nc: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        /// adaptive | uniform
        #[arg(long)]
        mode: Option<String>,
        /// dtn | iti
        #[arg(long)]
        formulation: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two report files.
    Compare { a: PathBuf, b: PathBuf },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

fn fail(e: &HpsError, code: u8) -> ExitCode {
    eprintln!("error [{}]: {e}", e.kind());
    ExitCode::from(code)
}

fn exit_code(e: &HpsError) -> u8 {
    match e {
        HpsError::Config { .. } | HpsError::InvalidArgument(_) | HpsError::FormulationMismatch(_) => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

fn load_config(
    path: Option<PathBuf>,
    overrides: [(&str, Option<String>); 6],
) -> Result<RunConfig, HpsError> {
    let mut cfg = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HpsError::Config {
                line: 0,
                field: "config".into(),
                message: format!("cannot read {}: {e}", p.display()),
            })?;
            RunConfig::parse_unvalidated(&text)?
        }
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v, 0)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            config,
            problem,
            nc,
            eps,
            mode,
            formulation,
            out,
        } => {
            let overrides = [
                ("problem", problem),
                ("n_c", nc),
                ("epsilon", eps),
                ("mode", mode),
                ("formulation", formulation),
                ("output_dir", out.map(|p| p.display().to_string())),
            ];
            let cfg = match load_config(config, overrides) {
                Ok(c) => c,
                Err(e) => return fail(&e, EXIT_CONFIG),
            };
            match run(&cfg) {
                Ok(outcome) => {
                    print!("{}", outcome.report.to_text());
                    if outcome.report.converged {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("adaptive refinement did not converge within {} iterations", cfg.max_iterations);
                        ExitCode::from(EXIT_NOT_CONVERGED)
                    }
                }
                Err(e) => fail(&e, exit_code(&e)),
            }
        }
        Command::Compare { a, b } => match compare_files(&a, &b) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, exit_code(&e)),
        },
    }
}

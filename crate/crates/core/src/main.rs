use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qcgeom::models::ModelKind;
use qcgeom::verify::{self, CheckParams, CheckReport, REGISTRY};
use qcgeom::QcError;

#[derive(Parser)]
#[command(
    name = "qcgeom",
    version,
    about = "Sampled verification of quaternionic-contact geometry identities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the registered checks and the models they support.
    List,
    /// Run one named check.
    Check {
        name: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run every check the model supports.
    All {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "flat-ball", value_parser = parse_model)]
    model: ModelKind,
    /// Quaternionic dimension; the ambient space is R^(4n+4).
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Fixes lambda for the wlambda model instead of sampling it.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    fd_step: f64,
    /// Overrides the per-check default tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn params(&self) -> CheckParams {
        CheckParams {
            n: self.n,
            lambda: self.lambda,
            samples: self.samples,
            seed: self.seed,
            fd_step: self.fd_step,
            tolerance: self.tol,
        }
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

fn render(reports: &[CheckReport], single: bool, format: Format) -> String {
    match format {
        Format::Json if single => reports[0].to_json() + "\n",
        Format::Json => serde_json::to_string_pretty(reports).expect("reports serialize") + "\n",
        Format::Text => reports.iter().map(CheckReport::to_text).collect(),
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), String> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn list() -> String {
    let mut out = String::new();
    for c in &REGISTRY {
        let models: Vec<&str> = c.models().iter().map(|m| m.name()).collect();
        out.push_str(&format!(
            "{:<30} tol={:<6.0e} models={:<40} {}\n",
            c.name,
            c.class.default_tolerance(),
            models.join(","),
            c.summary
        ));
    }
    out
}

fn run(command: Command) -> Result<bool, String> {
    let (reports, single, run) = match command {
        Command::List => {
            print!("{}", list());
            return Ok(true);
        }
        Command::Check { name, run } => {
            let report = verify::run_check(&name, run.model, &run.params()).map_err(describe)?;
            (vec![report], true, run)
        }
        Command::All { run } => {
            let reports = verify::run_all(run.model, &run.params()).map_err(describe)?;
            if reports.is_empty() {
                return Err(format!(
                    "no check supports model `{}` with n = {}",
                    run.model, run.n
                ));
            }
            (reports, false, run)
        }
    };
    emit(&render(&reports, single, run.format), run.out.as_ref())?;
    Ok(reports.iter().all(|r| r.passed))
}

fn describe(e: QcError) -> String {
    match e {
        QcError::UnknownCheck(_) => format!("{e}; run `qcgeom list` for the registry"),
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

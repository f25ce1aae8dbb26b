use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use warpcurv_cli::{verify_source, CliError, OutputFormat};

#[derive(Parser)]
#[command(name = "warpcurv", version, about = "Curvature checks for multiply warped and twisted products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Verify {
        file: PathBuf,
        /// Overrides the scenario's `format`.
        #[arg(long)]
        format: Option<OutputFormat>,
        /// Overrides the scenario's `tolerance`.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Overrides the scenario's `grid`.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Generate, verify or scan a solution family without a scenario file.
    Family {
        /// grw-einstein, grw-scalar, kasner-einstein or kasner-scalar.
        id: String,
        /// Scenario keys such as `dims=1,2` or `lambda=5`; repeatable.
        #[arg(short, long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        /// Free constants to instantiate with (comma separated).
        #[arg(long)]
        constants: Option<String>,
        #[arg(long, value_enum, default_value_t = FamilyMode::Verify)]
        mode: FamilyMode,
        #[arg(long)]
        format: Option<OutputFormat>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyMode {
    Generate,
    Verify,
    Scan,
}

fn scenario_source(command: &Command) -> Result<(String, Option<OutputFormat>), CliError> {
    match command {
        Command::Verify { file, format, tolerance, grid } => {
            let mut src = std::fs::read_to_string(file)?;
            if !src.ends_with('\n') {
                src.push('\n');
            }
            if let Some(t) = tolerance {
                src.push_str(&format!("tolerance = {t:e}\n"));
            }
            if let Some(g) = grid {
                src.push_str(&format!("grid = {g}\n"));
            }
            Ok((src, *format))
        }
        Command::Family { id, params, constants, mode, format } => {
            let task = match mode {
                FamilyMode::Generate => "family-generate",
                FamilyMode::Verify => "family-verify",
                FamilyMode::Scan => "nonexistence-scan",
            };
            let mut src = format!("task = {task}\nfamily = {id}\n");
            for p in params {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| CliError::Unsupported(format!("parameter '{p}' is not KEY=VALUE")))?;
                src.push_str(&format!("{} = {}\n", k.trim(), v.trim()));
            }
            if let Some(c) = constants {
                src.push_str(&format!("constants = {c}\n"));
            }
            Ok((src, *format))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WARPCURV_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = scenario_source(&cli.command).and_then(|(src, format)| verify_source(&src, format));
    match result {
        Ok((out, code)) => {
            print!("{out}");
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

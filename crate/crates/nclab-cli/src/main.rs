use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nclab_cli::{run, Command, RunConfig};

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Parser, Debug)]
#[command(name = "nclab", about = "Numerical checks for noncommutative plane kinematics")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration (defaults apply to missing fields)
    #[arg(long)]
    config: Option<PathBuf>,
    /// write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// run every data-parallel loop on one thread
    #[arg(long)]
    sequential: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match &args.config {
        Some(path) => match std::fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|s| RunConfig::from_json(&s).map_err(|e| e.to_string())) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: config {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    nclab::par::set_sequential(args.sequential);
    let outcome = match run(args.command, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let text = match args.format {
        Format::Json => outcome.report.to_json() + "\n",
        Format::Csv => outcome.table.to_csv(),
    };
    let written = match &args.out {
        Some(path) => std::fs::write(path, &text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())
        }
    };
    if let Err(e) = written {
        eprintln!("error: writing report: {e}");
        return ExitCode::from(2);
    }
    for c in outcome.report.failures() {
        eprintln!("FAIL {}: measured {:e}, tolerance {:e}", c.name, c.measured, c.tolerance);
    }
    if outcome.report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

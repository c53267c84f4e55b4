use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Runs one experiment described by a JSON config.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Repeat for more detail.
    #[arg(long, short, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = hyperinv::cli::execute(&args.config, args.out.as_deref(), args.threads);
    if let Some(s) = &outcome.summary {
        for a in &s.artifacts {
            println!("{a}");
        }
    }
    if let Some(m) = &outcome.message {
        eprintln!("error: {m}");
    }
    ExitCode::from(outcome.code as u8)
}

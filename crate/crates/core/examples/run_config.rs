//! Runs a JSON experiment config the way the binary does.
//!
//! `cargo run --example run_config -- crates/core/examples/configs/audit.json /tmp/out`

use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/audit.json").into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out".into()));
    let outcome = hyperinv::cli::execute(&config, Some(&out), None);
    println!("exit {}", outcome.code);
    if let Some(s) = outcome.summary {
        println!("{}", serde_json::to_string_pretty(&s.summary).unwrap());
    }
    if let Some(m) = outcome.message {
        println!("{m}");
    }
    std::process::exit(outcome.code);
}

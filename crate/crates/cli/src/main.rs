use std::process::ExitCode;

use clap::Parser;
use swarmloc_cli::{init_threads, load, run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("swarmloc: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("swarmloc: {e:#}");
        return ExitCode::from(2);
    }
    match run(&cfg) {
        Ok(res) => {
            let failed = res.rows.iter().filter(|r| r.status != "ok").count();
            eprintln!(
                "swarmloc: {} rows ({failed} failed runs) written to {}",
                res.rows.len(),
                cfg.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("swarmloc: {e:#}");
            ExitCode::FAILURE
        }
    }
}

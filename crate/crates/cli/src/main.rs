//! `obstacle-lab`: runs configured experiments and writes their artifacts.

mod config;
mod describe;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::output::{summary_json, Metadata};

#[derive(Parser)]
#[command(name = "obstacle-lab", version, about = "Thin obstacle problem experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run { config: PathBuf },
    /// Print the experiments, configuration keys and output formats.
    Describe,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("OBSTACLE_LAB_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(Some(k)),
            _ => Err(format!("OBSTACLE_LAB_THREADS: expected a positive integer, got {v:?}")),
        },
        Err(_) => Ok(None),
    }
}

fn run(path: PathBuf) -> ExitCode {
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("configuration error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match config::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(k) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("warning: cannot size the thread pool: {e}");
        }
    }
    let summary = experiments::run(&cfg);
    let meta = Metadata {
        experiment: cfg.experiment.as_str().to_string(),
        label: cfg.label.clone(),
        config_path: path.display().to_string(),
        threads: rayon::current_num_threads(),
    };
    let json = summary_json(&summary, &meta);
    if let Err(e) = std::fs::create_dir_all(&cfg.output_dir)
        .and_then(|_| std::fs::write(cfg.output_dir.join("summary.json"), &json))
    {
        eprintln!("error: cannot write summary.json: {e}");
        return ExitCode::from(EXIT_FAIL);
    }
    for c in &summary.checks {
        let mark = if c.pass { "ok  " } else { "FAIL" };
        println!("{mark} {:<32} {:.6e}", c.name, c.value);
    }
    if let Some(msg) = &summary.error {
        eprintln!("error: {msg}");
    }
    let pass = summary.pass();
    println!("{}: {} -> {}", cfg.experiment.as_str(), if pass { "pass" } else { "fail" }, cfg.output_dir.display());
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(config),
        Command::Describe => {
            print!("{}", describe::text());
            ExitCode::SUCCESS
        }
    }
}

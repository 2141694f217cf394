use clap::{Parser, ValueEnum};
use nlch_cli::commands::{run_command, Command, RunOptions};
use nlch_cli::config::load_config;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Simulate,
    Optimize,
    GradCheck,
    Verify,
    MakeTargets,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Optimize => Command::Optimize,
            Cmd::GradCheck => Command::GradCheck,
            Cmd::Verify => Command::Verify,
            Cmd::MakeTargets => Command::MakeTargets,
        }
    }
}

/// Nonlocal Cahn-Hilliard velocity-control laboratory.
#[derive(Debug, Parser)]
#[command(name = "nlch", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "NLCH_THREADS")]
    threads: Option<usize>,
    #[arg(long, hide = true)]
    flip_adjoint_sign: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let opts = RunOptions {
        out: cli.out.unwrap_or_else(|| cfg.output_dir.clone()),
        flip_adjoint_sign: cli.flip_adjoint_sign,
    };
    match run_command(cli.command.into(), &cfg, &opts) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                println!("{}", f.to_json());
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selfless::config::RunConfig;
use selfless::experiment::{run_experiment, write_run};
use selfless::gradcheck::{run_gradcheck, GradcheckOptions};
use selfless::Error;

mod summary;

/// Exit codes, stable across releases.
mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATASET: u8 = 3;
    pub const DIVERGED: u8 = 4;
}

#[derive(Parser)]
#[command(
    name = "selfless",
    version,
    about = "Sequential learning experiments with neural-inhibition regularizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set lambda_ssl=0` or `--set training.seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Suppress per-task progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Finite-difference check of every penalty and the composed objective.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        instances: usize,
        /// Corrupt the analytic gradient of one kind (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Summarize every report found under a directory.
    Report {
        run_dir: PathBuf,
        /// Where to write the plot-ready CSVs (defaults to `run_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            quiet,
        } => cmd_run(&config, &overrides, quiet),
        Command::Gradcheck {
            seed,
            instances,
            inject_fault,
        } => cmd_gradcheck(seed, instances, inject_fault),
        Command::Report { run_dir, out } => summary::cmd_report(&run_dir, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => exit::CONFIG,
        Error::MissingDataset { .. } => exit::DATASET,
        Error::Diverged { .. } => exit::DIVERGED,
        _ => exit::FAILURE,
    }
}

fn cmd_run(path: &Path, overrides: &[String], quiet: bool) -> selfless::Result<u8> {
    let config = RunConfig::load(path, overrides).map_err(|e| match e {
        Error::Io { path, source } => Error::Config {
            field: "<file>".into(),
            message: format!("{}: {source}", path.display()),
        },
        other => other,
    })?;
    let variants = config.variants();
    let sweep = variants.len() > 1;
    for variant in &variants {
        let dir = if sweep {
            variant.run_dir().join(variant.variant_label())
        } else {
            variant.run_dir()
        };
        println!("== {} ({})", variant.experiment, variant.variant_label());
        let report = run_experiment(variant, |r| {
            if !quiet {
                let seen: Vec<String> = r.seen_accuracies.iter().map(|a| format!("{:.2}", a * 100.0)).collect();
                eprintln!(
                    "  [{}] {} loss {:.4}  seen [{}]",
                    r.task + 1,
                    r.name,
                    r.train_loss,
                    seen.join(" ")
                );
            }
        })?;
        println!("{:<16} {:>10} {:>10}", "task", "trained", "final");
        for (i, name) in report.task_names.iter().enumerate() {
            println!(
                "{:<16} {:>9.2}% {:>9.2}%",
                name,
                report.tasks[i].accuracy * 100.0,
                report.accuracies[i] * 100.0
            );
        }
        println!("mean accuracy: {:.2}%", report.mean_accuracy * 100.0);
        write_run(&report, variant, &dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(0)
}

fn cmd_gradcheck(seed: u64, instances: usize, inject_fault: Option<String>) -> selfless::Result<u8> {
    let options = GradcheckOptions {
        seed,
        instances_per_kind: instances,
        inject_fault,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(&options)?;
    for c in &report.checks {
        println!(
            "{:<10} instances {:>3}  max rel error {:.3e}  {}",
            c.kind,
            c.instances,
            c.max_relative_error,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("all {} instances within {:e}", report.instances(), report.tolerance);
        Ok(0)
    } else {
        for c in report.failures() {
            eprintln!(
                "gradcheck failed: {} (max rel error {:e})",
                c.kind, c.max_relative_error
            );
        }
        Ok(exit::FAILURE)
    }
}

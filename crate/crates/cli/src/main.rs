use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use assoc_core::data::{save_task, Suite};
use assoc_core::runner::{
    ablate, parse_permutations, quota_curve, read_metrics, render_report, run_suite,
    sequence_study, sweep, task_dir, write_outputs, Method, ReportFormat, RunConfig, Runner,
    StudyOutcome, SweepParam,
};

#[derive(Parser)]
#[command(
    name = "assoc",
    version,
    about = "Associative continual learning for paired image-to-image GANs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic suite to disk, one directory per task.
    GenData {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train one method over the task sequence.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's method.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// All five methods on the same seeds.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// The six component configurations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "lambda_prime")]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// One run per task order.
    Sequence {
        #[arg(long)]
        config: PathBuf,
        /// `all`, or orders such as `1234,4321` or `1,2,3,4;4,3,2,1`.
        #[arg(long, default_value = "all")]
        perms: String,
        #[arg(long, default_value = "out/sequence")]
        out: PathBuf,
    },
    /// Per-epoch average metric of TL, ASSOC and JL.
    Quota {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out/quota")]
        out: PathBuf,
    },
    /// Summarize a metrics.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Print failures and turn them into the exit status.
fn finish(outcome: &StudyOutcome, out: &Path) -> ExitCode {
    for (id, err) in &outcome.failures {
        eprintln!("run {id} failed: {err}");
    }
    println!(
        "{} run(s) completed, {} failed; outputs in {}",
        outcome.results.len(),
        outcome.failures.len(),
        out.display()
    );
    if outcome.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let mut runner = Runner::new();
    match cli.command {
        Command::GenData {
            suite,
            out,
            train,
            test,
            seed,
        } => {
            let suite = Suite::parse(&suite)?;
            for task in 1..=suite.task_count() {
                let spec = suite.generate(task, train, test, seed)?;
                save_task(&task_dir(&out, task), &spec)?;
            }
            println!(
                "wrote {} tasks of {} to {}",
                suite.task_count(),
                suite.name(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            method,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = method {
                cfg = cfg.with_method(Method::parse(&m)?);
            }
            cfg.validate()?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.snapshot"), cfg.to_text())?;
            match runner.run(&cfg) {
                Ok(result) => {
                    write_outputs(&out, &[result])?;
                    println!("run {} completed; outputs in {}", cfg.run_id, out.display());
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    fs::write(out.join("failures.txt"), format!("{}\t{e}\n", cfg.run_id))?;
                    eprintln!("run {} failed: {e}", cfg.run_id);
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Suite { config, out } => {
            let outcome = run_suite(&mut runner, &load_config(&config)?, Some(&out))?;
            Ok(finish(&outcome, &out))
        }
        Command::Ablate { config, out } => {
            let outcome = ablate(&mut runner, &load_config(&config)?, Some(&out))?;
            Ok(finish(&outcome, &out))
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let param = SweepParam::parse(&param)?;
            let outcome = sweep(
                &mut runner,
                &load_config(&config)?,
                param,
                &values,
                Some(&out),
            )?;
            Ok(finish(&outcome, &out))
        }
        Command::Sequence { config, perms, out } => {
            let cfg = load_config(&config)?;
            let perms = parse_permutations(&perms, cfg.suite.task_count())?;
            let outcome = sequence_study(&mut runner, &cfg, &perms, Some(&out))?;
            Ok(finish(&outcome, &out))
        }
        Command::Quota { config, out } => {
            let outcome = quota_curve(&mut runner, &load_config(&config)?, Some(&out))?;
            Ok(finish(&outcome, &out))
        }
        Command::Report { input, format } => {
            let format = ReportFormat::parse(&format)?;
            let path = if input.is_dir() {
                input.join("metrics.csv")
            } else {
                input
            };
            if !path.exists() {
                bail!("no metrics.csv at {}", path.display());
            }
            print!("{}", render_report(&read_metrics(&path)?, format)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

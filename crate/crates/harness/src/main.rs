use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use ssadapt::config::ExperimentConfig;
use ssadapt::{dataio, fetch, grid, report, verify};

/// Domain-adapted semi-supervised anomaly detection benchmark harness.
#[derive(Parser)]
#[command(name = "ssadapt", version, about)]
struct Cli {
    /// Experiment config (TOML); embedded desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or reuse) the per-case dataset caches.
    Prepare {
        /// Rebuild even when a matching cache exists.
        #[arg(long)]
        force: bool,
    },
    /// Train the case x variant x seed grid; completed runs are skipped.
    Train,
    /// Score the test sets of all trained runs and write per-run summaries.
    Evaluate,
    /// Aggregate summaries into results.json, report.md, and plots.
    Report,
    /// Run the self-contained numerical verification suite.
    Verify {
        /// Also write the machine-readable report to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Full pipeline: prepare, train, evaluate, report.
    Reproduce,
    /// Download missing dataset files and verify checksums.
    Fetch,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let cfg = ExperimentConfig::load_or_default(cli.config.as_deref())?;

    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (try `ssadapt --help`)");
        return Ok(ExitCode::FAILURE);
    };

    match command {
        Command::Prepare { force } => cmd_prepare(&cfg, force),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Report => cmd_report(&cfg),
        Command::Verify { json } => cmd_verify(json),
        Command::Reproduce => cmd_reproduce(&cfg),
        Command::Fetch => {
            fetch::cmd_fetch(&cfg)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_prepare(cfg: &ExperimentConfig, force: bool) -> Result<ExitCode> {
    for (case_id, side, built) in dataio::prepare(cfg, force)? {
        let action = if built { "built" } else { "cached" };
        println!(
            "case {case_id}: {action} (train {}+{}+{}, test {}+{}+{})",
            side.counts.normal_source,
            side.counts.anomaly_source,
            side.counts.normal_target,
            side.counts.test_normal,
            side.counts.test_seen,
            side.counts.test_unseen,
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let outcome = grid::cmd_train(cfg)?;
    println!(
        "trained {} run(s), skipped {} completed run(s)",
        outcome.executed.len(),
        outcome.skipped.len()
    );
    grid::require_ok(&outcome, "train")?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let outcome = grid::cmd_evaluate(cfg)?;
    println!("evaluated {} run(s)", outcome.executed.len());
    grid::require_ok(&outcome, "evaluate")?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let warnings = report::cmd_report(cfg)?;
    let (json_path, md_path, plots_dir) = report::report_paths(cfg);
    println!(
        "wrote {}, {}, plots in {}",
        json_path.display(),
        md_path.display(),
        plots_dir.display()
    );
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(json: Option<PathBuf>) -> Result<ExitCode> {
    let report = verify::run_all();
    for c in &report.checks {
        println!(
            "{}: {} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("{} passed, {} failed", report.passed, report.failed);
    if let Some(path) = json {
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        println!("wrote {}", path.display());
    }
    Ok(if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_reproduce(cfg: &ExperimentConfig) -> Result<ExitCode> {
    cmd_prepare(cfg, false)?;
    let outcome = grid::cmd_train(cfg)?;
    println!(
        "trained {} run(s), skipped {}",
        outcome.executed.len(),
        outcome.skipped.len()
    );
    grid::require_ok(&outcome, "train")?;
    let outcome = grid::cmd_evaluate(cfg)?;
    grid::require_ok(&outcome, "evaluate")?;
    cmd_report(cfg)
}

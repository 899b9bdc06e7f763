use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use emschart_cli::commands;
use emschart_cli::config::{default_canyon, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "emschart",
    about = "Channel-charting workbench over engineered multipath: simulate scenes, learn charts, and search static panel codebooks"
)]
struct Cli {
    /// Scenario config (TOML); the built-in street-canyon scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed override (noise, chart init, and baseline seeds derive from it).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Chart method override: tsne | ae.
    #[arg(long, global = true)]
    method: Option<String>,

    /// Supervision fraction override in (0, 1).
    #[arg(long, global = true)]
    supervision: Option<f64>,

    /// Quantile level override in (0, 1).
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Worker thread count (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize channels and write SNR, covariance, and dissimilarity artifacts.
    Simulate,
    /// Learn a chart from simulate artifacts and score it.
    Chart,
    /// Search the codebook for the quantile-optimal configuration.
    Optimize,
    /// Estimate a trajectory and report the dropout fraction.
    EvaluateTrajectory,
    /// Comparison CDFs and the summary table across completed runs.
    Report {
        /// Completed chart-run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Print the built-in street-canyon scenario config.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => default_canyon(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(method) = &cli.method {
        cfg.method.kind = method.clone();
    }
    if let Some(snr) = cli.supervision {
        cfg.anchors.supervision_fraction = snr;
    }
    if let Some(alpha) = cli.alpha {
        cfg.run.alpha_quantile = alpha;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        emschart::init_thread_pool(cli.threads);
    }
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(&cli)?;
            commands::cmd_simulate(&cfg, &cli.out)?;
            println!("simulate: artifacts written to {}", cli.out.display());
        }
        Command::Chart => {
            let cfg = load_config(&cli)?;
            let out = commands::cmd_chart(&cfg, &cli.out)?;
            let mean =
                out.report.localization_error.iter().sum::<f64>() / out.report.point_ids.len().max(1) as f64;
            println!(
                "chart ({}): {} evaluated points, mean LE {:.2} m",
                cfg.method.kind,
                out.report.point_ids.len(),
                mean
            );
        }
        Command::Optimize => {
            let cfg = load_config(&cli)?;
            let out = commands::cmd_optimize(&cfg, &cli.out)?;
            println!(
                "optimize: best configuration {:?} with {} {} = {:.4} ({} rows)",
                out.best_indices,
                cfg.run.metric,
                cfg.run.alpha_quantile,
                out.best_objective,
                out.table_rows
            );
            for (kind, q) in &out.baseline_objectives {
                println!("  baseline {:<14} {:.4}", kind.label(), q);
            }
        }
        Command::EvaluateTrajectory => {
            let cfg = load_config(&cli)?;
            let out = commands::cmd_evaluate_trajectory(&cfg, &cli.out)?;
            println!(
                "trajectory ({} points): dropout {:.1}%, mean LE {:.2} m",
                out.n_points,
                100.0 * out.dropout_fraction,
                out.mean_le
            );
        }
        Command::Report { runs } => {
            commands::cmd_report(runs, &cli.out)?;
            println!("report: CDFs and summary table written to {}", cli.out.display());
        }
        Command::PrintConfig => {
            print!("{}", default_canyon().to_toml()?);
        }
    }
    Ok(())
}

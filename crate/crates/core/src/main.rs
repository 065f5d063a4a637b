use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lasso_bandit::harness::config::ExperimentConfig;
use lasso_bandit::harness::plot::render_plot;
use lasso_bandit::harness::run::{
    aggregate_from_rows, curve_to_series, read_trace_csv, run_diagnose, run_experiment,
};
use lasso_bandit::Error;

/// Online-Lasso contextual bandit simulator under a perturbed adversary.
#[derive(Parser)]
#[command(name = "lasso-bandit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded experiment and write trace/summary/diagnostics/plot files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        parallel: Option<usize>,
        /// Apply the config's paper_scale block (e.g. d = 2000).
        #[arg(long)]
        paper_scale: bool,
    },
    /// Evaluate the diagnostics report without the regret experiment.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        paper_scale: bool,
    },
    /// Re-aggregate a trace CSV and render the regret plot.
    Plot {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidParameter { .. } => 1,
        Error::EpisodeFailures(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        _ => 1,
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    paper_scale: bool,
) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    if paper_scale {
        config.apply_paper_scale()?;
    }
    Ok(config)
}

fn install_thread_pool(parallel: Option<usize>) {
    if let Some(n) = parallel {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set worker count: {e}");
        }
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            parallel,
            paper_scale,
        } => {
            install_thread_pool(parallel);
            let config = load_config(&config, seed, paper_scale)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let output = run_experiment(&config, &out_dir)?;
            for c in &output.summary.configurations {
                println!(
                    "{} sigma1={}: final regret mean {:.3} (min {:.3}, max {:.3})",
                    c.variant,
                    c.sigma1,
                    c.final_cum_regret_mean,
                    c.final_cum_regret_min,
                    c.final_cum_regret_max
                );
            }
            println!("wrote {}", out_dir.display());
            output.into_result().map(|_| ())
        }
        Command::Diagnose {
            config,
            out,
            seed,
            parallel,
            paper_scale,
        } => {
            install_thread_pool(parallel);
            let config = load_config(&config, seed, paper_scale)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let output = run_diagnose(&config, &out_dir)?;
            if let Some(lambda0) = output.report.lambda0 {
                println!("lambda0 = {lambda0:.6}");
            }
            println!(
                "exploration length: low {:.1}, high {:.1}",
                output.report.exploration_low, output.report.exploration_high.exploration_length
            );
            if let Some(lemma2) = &output.report.lemma2 {
                println!(
                    "lemma2: {}/{} runs hold at valid checkpoints, {}/{} positive slopes",
                    lemma2.runs_all_valid_hold, lemma2.runs, lemma2.positive_slopes, lemma2.runs
                );
            }
            println!("wrote {}", output.diagnostics_path.display());
            output.into_result().map(|_| ())
        }
        Command::Plot { traces, out } => {
            let rows = read_trace_csv(&traces)?;
            let curves = aggregate_from_rows(&rows);
            let series: Vec<_> = curves.iter().map(curve_to_series).collect();
            let mut svg = Vec::new();
            render_plot(&series, &mut svg)?;
            std::fs::write(&out, svg)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use newsync::config::PipelineConfig;
use newsync::pipeline::{Pipeline, Stage};
use newsync::synth;

/// Global news event detection, diversity and synchrony pipeline.
#[derive(Parser)]
#[command(name = "newsync", version)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true, env = "NEWSYNC_CONFIG")]
    config: Option<PathBuf>,
    /// Master RNG seed; overrides `run.rng_seed`.
    #[arg(long, global = true, env = "NEWSYNC_SEED")]
    seed: Option<u64>,
    /// Worker threads; overrides `run.threads` (0 = all cores).
    #[arg(long, global = true, env = "NEWSYNC_THREADS")]
    threads: Option<usize>,
    /// Output directory; overrides `paths.output`.
    #[arg(long, global = true, env = "NEWSYNC_OUTPUT")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and filter the corpus.
    Ingest,
    /// Entity-Jaccard candidate pairs.
    Pairs,
    /// Cosine similarity of candidate pairs.
    Score,
    /// Similarity graph edge list.
    Graph,
    /// Event clusters, event statistics and intrusion bundles.
    Events,
    /// Diversity, synchrony, baselines and the country backbone.
    Measures,
    /// Regressions with VIF and AIC selection.
    Regress,
    /// Intrusion precision and inter-rater agreement.
    Agreement,
    /// Coefficient tables, histogram data and summary.
    Report,
    /// Every stage in order.
    All,
    /// Write the synthetic fixture (corpus, embeddings, predictors, config).
    Synth {
        /// Target directory.
        dir: PathBuf,
        /// Divides every planted count; 1 gives 1,000 articles, 5 gives 200.
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
}

fn build_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = build_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let stage = match cli.command {
        Command::Synth { dir, scale } => {
            anyhow::ensure!(scale >= 1, "--scale must be at least 1");
            let fx = synth::generate(cfg.rng_seed, scale);
            synth::write_fixture(&fx, &dir)?;
            log::info!("wrote {} articles to {}", fx.articles.len(), dir.display());
            return Ok(());
        }
        Command::All => None,
        Command::Ingest => Some(Stage::Ingest),
        Command::Pairs => Some(Stage::Pairs),
        Command::Score => Some(Stage::Score),
        Command::Graph => Some(Stage::Graph),
        Command::Events => Some(Stage::Events),
        Command::Measures => Some(Stage::Measures),
        Command::Regress => Some(Stage::Regress),
        Command::Agreement => Some(Stage::Agreement),
        Command::Report => Some(Stage::Report),
    };
    let pipeline = Pipeline::new(cfg)?;
    match stage {
        Some(s) => pipeline.run(s)?,
        None => pipeline.run_all()?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use carat::pipeline::{Command, Pipeline, PipelineConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "carat", version, about = "Counterfactual recourse for categorical anomalies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the rule-based synthetic corpus as CSV.
    GenCorpus,
    /// Build the schema and train/test split.
    Ingest,
    /// Train the anomaly scorers.
    TrainAd,
    /// Train DistMult embeddings over the metapath graph.
    TrainKge,
    /// Pretrain the explainer encoder on masked reconstruction.
    PretrainExplainer,
    /// Train the likelihood head on the frozen encoder.
    TrainExplainer,
    /// Plant synthetic anomalies in the test split.
    GenAnomalies,
    /// Generate counterfactuals for the target anomalies.
    Recourse,
    /// Run the Replace-m and Xformer-R baselines.
    Baseline,
    /// Compute metrics for every counterfactual file.
    Evaluate {
        /// Extra counterfactual files to evaluate alongside.
        #[arg(long)]
        external: Vec<PathBuf>,
    },
    /// Time per-anomaly recourse execution.
    Timing,
    /// Render metric tables and the timing summary.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> carat::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> carat::Result<()> {
    let pipeline = Pipeline::new(load_config(cli)?)?;
    let simple = match &cli.command {
        Cmd::GenCorpus => Command::GenCorpus,
        Cmd::Ingest => Command::Ingest,
        Cmd::TrainAd => Command::TrainAd,
        Cmd::TrainKge => Command::TrainKge,
        Cmd::PretrainExplainer => Command::PretrainExplainer,
        Cmd::TrainExplainer => Command::TrainExplainer,
        Cmd::GenAnomalies => Command::GenAnomalies,
        Cmd::Recourse => Command::Recourse,
        Cmd::Baseline => Command::Baseline,
        Cmd::Timing => Command::Timing,
        Cmd::Evaluate { external } => {
            pipeline.evaluate(external)?;
            return Ok(());
        }
        Cmd::Report => {
            pipeline.report()?;
            print!(
                "{}",
                std::fs::read_to_string(pipeline.path("report.md")).unwrap_or_default()
            );
            return Ok(());
        }
        Cmd::Pipeline => {
            pipeline.run_all()?;
            print!(
                "{}",
                std::fs::read_to_string(pipeline.path("report.md")).unwrap_or_default()
            );
            return Ok(());
        }
    };
    pipeline.run(simple)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctxprobe::config::load_config;
use ctxprobe::lexicon::{load_lexicon, VocabReport};
use ctxprobe::matrix::{check, generate_all, run_matrix, MatrixOptions, RESULTS_FILE};
use ctxprobe::report::render_figures;
use ctxprobe::ExperimentConfig;

#[derive(Parser)]
#[command(name = "ctxprobe", version, about = "Probe contextual token embeddings for word-level information")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for probe runs
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate datasets and exporter sentence files
    Gen(Common),
    /// Validate lexicon, datasets, containers and vector coverage
    Check(Common),
    /// Run the probe matrix
    Probe {
        #[command(flatten)]
        common: Common,
        /// Only run cells whose key (task/probed_role/encoder) matches this glob
        #[arg(long)]
        only: Option<String>,
        /// Skip cells already completed in the manifest
        #[arg(long)]
        resume: bool,
    },
    /// Render figures from a results CSV
    Report {
        #[arg(long, required_unless_present = "csv")]
        config: Option<PathBuf>,
        /// Results CSV (defaults to the one in the config's output directory)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Figure directory (defaults to `figures/` next to the CSV)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Update lexicon encoder sets from an exporter vocab report
    VocabMerge {
        #[arg(long)]
        lexicon: PathBuf,
        /// TSV lines of `word<TAB>model,model,...`
        #[arg(long)]
        report: PathBuf,
        /// Models the report covers, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.workers.is_some() {
        cfg.workers = common.workers;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::Gen(common) => {
            let cfg = load(&common)?;
            let datasets = generate_all(&cfg)?;
            eprintln!("wrote {} datasets to {}", datasets.len(), cfg.output_path().display());
            Ok(true)
        }
        Cmd::Check(common) => {
            let cfg = load(&common)?;
            let failures = check(&cfg);
            for f in &failures {
                println!("{f}");
            }
            if failures.is_empty() {
                eprintln!("ok");
            }
            Ok(failures.is_empty())
        }
        Cmd::Probe { common, only, resume } => {
            let cfg = load(&common)?;
            let outcome = run_matrix(&cfg, &MatrixOptions { only, resume })?;
            for c in outcome.failed() {
                eprintln!("FAILED {}: {}", c.key, c.error.as_deref().unwrap_or("unknown error"));
            }
            eprintln!(
                "{} cells, {} failed; results in {}",
                outcome.cells.len(),
                outcome.failed().count(),
                outcome.csv_path.display()
            );
            Ok(outcome.all_ok())
        }
        Cmd::Report { config, csv, out } => {
            let csv = match (csv, config) {
                (Some(csv), _) => csv,
                (None, Some(cfg)) => load_config(&cfg)?.output_path().join(RESULTS_FILE),
                (None, None) => bail!("need --csv or --config"),
            };
            let out = out.unwrap_or_else(|| csv.parent().unwrap_or(".".as_ref()).join("figures"));
            for p in render_figures(&csv, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Cmd::VocabMerge {
            lexicon,
            report,
            models,
            out,
        } => {
            let lex = load_lexicon(&lexicon)?;
            let text = std::fs::read_to_string(&report).with_context(|| report.display().to_string())?;
            let report = VocabReport::parse(&text)?;
            let models: BTreeSet<String> = models.into_iter().collect();
            lex.apply_vocab_report(&report, &models).save(&out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

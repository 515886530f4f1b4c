use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mdmanifold::error::ErrorClass;
use mdmanifold::pipeline::{self, Metric, PipelineConfig, Stage, StageReport};

/// Environment variable holding the default output directory.
const OUT_DIR_ENV: &str = "MDMANIFOLD_OUT";

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "mdmanifold", version, about = "Patient-record manifolds from hierarchical medical concepts")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for artifacts and manifests [env: MDMANIFOLD_OUT]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Records JSONL (defaults to <out-dir>/records.jsonl).
    #[arg(long, global = true)]
    records: Option<PathBuf>,

    /// Hierarchy edge TSV (defaults to <out-dir>/hierarchy.tsv).
    #[arg(long, global = true)]
    hierarchy: Option<PathBuf>,

    /// Concept groups TSV (defaults to <out-dir>/groups.tsv).
    #[arg(long, global = true)]
    groups: Option<PathBuf>,

    /// Override any config key, e.g. `--set k_nn=15`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output format for metrics.
    #[arg(long, value_enum, default_value_t = Format::Tsv, global = true)]
    format: Format,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Add every ancestor to each record's concept set.
    Augment,
    /// Build the concept co-occurrence matrix from augmented records.
    Cooccur,
    /// Gaussian random projection of co-occurrence rows.
    Project,
    /// Concept-to-concept distance matrix.
    ConceptDist,
    /// Record-to-record distance matrix.
    RecordDist,
    /// Mutual k-NN graph over records.
    KnnGraph,
    /// Isomap or Laplacian eigenmap embedding of the graph.
    Embed,
    /// NDCG@k of concept retrieval against concept groups.
    EvalNdcg,
    /// Silhouette and cluster ratio of the embedding against record cohorts.
    EvalCluster,
    /// k-NN outcome AUC on a seeded split of the embedding.
    EvalAuc,
    /// Write a synthetic hierarchy, record corpus and groups.
    Synth,
    /// Recompute the four-record worked example and check it against the printed tables.
    DemoFigure3,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Augment => Stage::Augment,
            Command::Cooccur => Stage::Cooccur,
            Command::Project => Stage::Project,
            Command::ConceptDist => Stage::ConceptDist,
            Command::RecordDist => Stage::RecordDist,
            Command::KnnGraph => Stage::KnnGraph,
            Command::Embed => Stage::Embed,
            Command::EvalNdcg => Stage::EvalNdcg,
            Command::EvalCluster => Stage::EvalCluster,
            Command::EvalAuc => Stage::EvalAuc,
            Command::Synth => Stage::Synth,
            Command::DemoFigure3 => Stage::DemoFigure3,
        }
    }
}

fn resolve_config(cli: &Cli) -> mdmanifold::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(path) = &cli.config {
        let f = std::fs::File::open(path).map_err(|e| {
            mdmanifold::Error::argument(format!("cannot open config {}: {e}", path.display()))
        })?;
        cfg.apply_reader(std::io::BufReader::new(f), &path.display().to_string())?;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(p) = &cli.records {
        cfg.records = Some(p.clone());
    }
    if let Some(p) = &cli.hierarchy {
        cfg.hierarchy = Some(p.clone());
    }
    if let Some(p) = &cli.groups {
        cfg.groups = Some(p.clone());
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| mdmanifold::Error::argument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| mdmanifold::Error::argument(format!("--set {kv}: {e}")))?;
    }
    Ok(cfg)
}

fn params_text(m: &Metric) -> String {
    m.params
        .iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => format!("{k}={s}"),
            other => format!("{k}={other}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn print_metrics(metrics: &[Metric], format: Format) {
    match format {
        Format::Json => {
            for m in metrics {
                println!("{}", serde_json::to_string(m).expect("metric serializes"));
            }
        }
        Format::Tsv => {
            let width = metrics.iter().map(|m| m.metric.len()).max().unwrap_or(0).max(6);
            println!("{:<width$}\t{:>12}\tparams", "metric", "value");
            for m in metrics {
                println!("{:<width$}\t{:>12.6}\t{}", m.metric, m.value, params_text(m));
            }
        }
    }
}

fn exit_code(e: &mdmanifold::Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

fn finish(report: &StageReport, format: Format) {
    if let Some(text) = &report.text {
        print!("{text}");
    }
    if !report.metrics.is_empty() {
        print_metrics(&report.metrics, format);
    }
    for p in &report.outputs {
        log::info!("wrote {}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let stage = Stage::from(cli.command);
    let result = resolve_config(&cli).and_then(|cfg| pipeline::run_stage_with_threads(stage, &cfg, cli.threads));
    match result {
        Ok(report) => {
            finish(&report, cli.format);
            if report.ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: {stage}: check failed");
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {stage}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

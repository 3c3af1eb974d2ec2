use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ttec_core::config::LoadedConfig;
use ttec_core::pipeline::{paths, Outcome, Pipeline, RunOptions, Stage};
use ttec_core::store::ArtifactStore;

/// Temporal topic embeddings: train, analyse and serve time-sliced corpora.
#[derive(Debug, Parser)]
#[command(name = "ttec", version)]
struct Cli {
    /// Run configuration (TOML). `TTEC_SECTION__KEY` variables override its values.
    #[arg(long, global = true, default_value = "ttec.toml")]
    config: PathBuf,
    /// Base seed; stage `i` uses `seed + i`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated stages to run instead of the command's own.
    #[arg(long, global = true, value_delimiter = ',')]
    stages: Option<Vec<Stage>>,
    /// Rebuild stages whose artifacts are current.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read, preprocess and slice the corpus.
    Ingest,
    /// Train the compass and the slice models.
    Train,
    /// Build the global topics and assign slice documents to them.
    Topics,
    /// Build the keyword flow graph and movement heatmap.
    Flow,
    /// Score topic coherence and diversity.
    Eval,
    /// Run every stage, or those given with `--stages`.
    Run,
    /// Serve run artifacts over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// A run directory or a directory of runs; defaults to the configured output.
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Copy the dashboard and report files of a run into a directory.
    Export {
        #[arg(long)]
        out: PathBuf,
        /// Run directory; defaults to the configured output.
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

impl Command {
    fn stages(&self) -> Option<Vec<Stage>> {
        Some(match self {
            Command::Ingest => vec![Stage::Corpus],
            Command::Train => vec![Stage::Compass, Stage::Slices],
            Command::Topics => vec![Stage::Topics, Stage::Assignments],
            Command::Flow => vec![Stage::Flow],
            Command::Eval => vec![Stage::Eval],
            Command::Run => Stage::ALL.to_vec(),
            Command::Serve { .. } | Command::Export { .. } => return None,
        })
    }
}

fn load_config(cli: &Cli) -> Result<LoadedConfig> {
    let mut env: Vec<(String, String)> = std::env::vars().collect();
    if let Some(seed) = cli.seed {
        env.retain(|(k, _)| k != "TTEC_SEED");
        env.push(("TTEC_SEED".into(), seed.to_string()));
    }
    LoadedConfig::load_with_env(&cli.config, env)
        .with_context(|| format!("loading {}", cli.config.display()))
}

fn run_stages(cli: &Cli, stages: Vec<Stage>) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut pipeline = Pipeline::new(cfg)?;
    let summary = pipeline.run(&RunOptions {
        stages: Some(cli.stages.clone().unwrap_or(stages)),
        force: cli.force,
    })?;
    let mut out = std::io::stdout().lock();
    for (stage, outcome, elapsed) in &summary.outcomes {
        let word = match outcome {
            Outcome::Ran => "ran",
            Outcome::Skipped => "skipped",
        };
        writeln!(out, "{stage:<12} {word:<8} {:>8.2}s", elapsed.as_secs_f64())?;
    }
    writeln!(
        out,
        "run {} in {}",
        summary.manifest.run_id,
        summary.dir.display()
    )?;
    Ok(())
}

fn root_or_output(cli: &Cli, root: &Option<PathBuf>) -> Result<PathBuf> {
    match root {
        Some(r) => Ok(r.clone()),
        None => Ok(load_config(cli)?.output_dir()),
    }
}

const EXPORTS: [&str; 6] = [
    paths::SANKEY,
    paths::HEATMAP,
    paths::HEATMAP_CSV,
    paths::TOPICS,
    paths::METRICS,
    paths::METRICS_CSV,
];

fn export(root: &Path, out: &Path) -> Result<()> {
    let store = ArtifactStore::open(root)?;
    let run = store.run(None)?;
    fs::create_dir_all(out)?;
    let mut copied = 0;
    for rel in EXPORTS {
        let src = root.join(rel);
        if !src.is_file() {
            log::warn!("stage=export event=missing artifact={rel}");
            continue;
        }
        let name = Path::new(rel).file_name().unwrap();
        fs::copy(&src, out.join(name)).with_context(|| format!("copying {rel}"))?;
        copied += 1;
    }
    if copied == 0 {
        bail!(
            "run {} has no exportable artifacts; run the flow, topics or eval stages first",
            run.id
        );
    }
    println!(
        "exported {copied} files from run {} to {}",
        run.id,
        out.display()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} {}",
                record.level().as_str().to_lowercase(),
                record.args()
            )
        })
        .init();
    if let Err(e) = real_main(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    if let Some(stages) = cli.command.stages() {
        return run_stages(cli, stages);
    }
    match &cli.command {
        Command::Serve { addr, root } => {
            let root = root_or_output(cli, root)?;
            let store = ArtifactStore::open(&root)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(ttec_service::serve(Arc::new(store), *addr))?;
            Ok(())
        }
        Command::Export { out, root } => export(&root_or_output(cli, root)?, out),
        _ => unreachable!(),
    }
}

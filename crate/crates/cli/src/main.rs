//! `cdrlens`: pipeline orchestrator and export surface.
//!
//! Layers run as separate subcommands so the hierarchical contract (each
//! layer consumes only prior knowledge) is enforced at runtime, not just by
//! convention. `run-all` chains ingest through layer 5.
//!
//! Exit codes: 0 ok, 2 config error, 3 dependency error, 4 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cdrlens_core::export::{export_geojson, ExportKind};
use cdrlens_core::kb::KnowledgeBase;
use cdrlens_core::pipeline::Pipeline;
use cdrlens_core::synth::{generate_city, CityConfig};
use cdrlens_core::{Error, PipelineConfig};

#[derive(Parser)]
#[command(name = "cdrlens", version, about = "Layered analytics over call detail records")]
struct Cli {
    /// Knowledge-base root directory.
    #[arg(long, global = true, default_value = "kb")]
    kb: PathBuf,

    /// key=value configuration file; keys override the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for everything randomized.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Clustering backend for POI detection.
    #[arg(long, global = true, value_parser = ["em", "xmeans"])]
    method: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city: CDR file, ground truth, and a matching
    /// config snippet, under --out.
    Synth {
        #[arg(long, default_value = "city")]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 1360)]
        towers: usize,
        #[arg(long, default_value_t = 30)]
        days: u32,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Weekend day name, e.g. Friday.
        #[arg(long, default_value = "Friday")]
        weekend: String,
        /// Mean calls per user per day.
        #[arg(long, default_value_t = 13.0)]
        rate: f64,
    },
    /// Parse and validate a raw CDR file into layer 0 (plus user logs).
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
    /// Usage scores, activity classes, histograms, weekend, call graph.
    Layer1,
    /// POIs, homes, workplaces, zone busyness.
    Layer2,
    /// Worker patterns, commute distances, routes, zone types.
    Layer3,
    /// Neighbor/colleague groups, transport, working days, profiles.
    Layer4,
    /// Closeness scores and family/friend groups.
    Layer5,
    /// Ingest followed by all five layers.
    RunAll {
        #[arg(long)]
        input: PathBuf,
    },
    /// Plain-text result tables.
    Report,
    /// GeoJSON export of zones, routes, or the raw Voronoi tessellation.
    ExportGeojson {
        #[arg(long, value_parser = ["zones", "routes", "voronoi"])]
        what: String,
        /// Time window whose busyness to attach to zones.
        #[arg(long, default_value = "MIDDAY")]
        window: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against a synthetic truth file.
    Score {
        #[arg(long)]
        truth: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::MissingTable { .. } | Error::HierarchicalRead { .. } => 3,
        Error::Data(_) | Error::Io(_) => 4,
    }
}

/// Best-effort exclusive lock on the knowledge-base root: one pipeline
/// instance per root at a time.
struct KbLock {
    path: PathBuf,
}

impl KbLock {
    fn acquire(root: &Path) -> Result<Self, Error> {
        std::fs::create_dir_all(root)?;
        let path = root.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(KbLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::data(format!(
                "another pipeline instance holds {} (remove the file if stale)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for KbLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(method) = &cli.method {
        cfg.set("method", method)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Synth { out, users, towers, days, noise, weekend, rate } => {
            let city = CityConfig {
                towers: *towers,
                num_users: *users,
                days: *days,
                noise: *noise,
                weekend_day: cdrlens_core::model::parse_weekday(weekend)
                    .map_err(|e| Error::config(e.to_string()))?,
                seed: cfg.seed,
                mean_activity_rate: *rate,
                ..CityConfig::default()
            };
            let synth = generate_city(&city)?;
            std::fs::create_dir_all(out)?;
            let cdr = out.join("cdr.csv");
            let truth = out.join("truth.csv");
            synth.write_files(&cdr, &truth)?;
            let conf = format!(
                "window_start={}\nwindow_end={}\nseed={}\n",
                city.start_date,
                city.end_date(),
                city.seed
            );
            std::fs::write(out.join("run.conf"), conf)?;
            println!(
                "generated {} records for {} users over {} towers",
                synth.records.len(),
                city.num_users,
                synth.towers.len()
            );
            println!("cdr:    {}", cdr.display());
            println!("truth:  {}", truth.display());
            println!("config: {}", out.join("run.conf").display());
        }
        Command::Ingest { input } => {
            let _lock = KbLock::acquire(&cli.kb)?;
            let pipeline = Pipeline::new(KnowledgeBase::open(&cli.kb)?, cfg);
            let report = pipeline.ingest(input)?;
            println!(
                "ingested {} records ({} rejected) from {} users at {} towers",
                report.records, report.rejected, report.users, report.towers
            );
        }
        Command::Layer1 | Command::Layer2 | Command::Layer3 | Command::Layer4 | Command::Layer5 => {
            let stage = match &cli.command {
                Command::Layer1 => "layer1",
                Command::Layer2 => "layer2",
                Command::Layer3 => "layer3",
                Command::Layer4 => "layer4",
                _ => "layer5",
            };
            let _lock = KbLock::acquire(&cli.kb)?;
            let pipeline = Pipeline::new(KnowledgeBase::open(&cli.kb)?, cfg);
            pipeline.run_stage(stage, None)?;
            println!("{stage} complete");
        }
        Command::RunAll { input } => {
            let _lock = KbLock::acquire(&cli.kb)?;
            let pipeline = Pipeline::new(KnowledgeBase::open(&cli.kb)?, cfg);
            let report = pipeline.run_all(input)?;
            println!(
                "pipeline complete: {} records ({} rejected), {} users, {} towers",
                report.records, report.rejected, report.users, report.towers
            );
        }
        Command::Report => {
            let pipeline = Pipeline::new(KnowledgeBase::open(&cli.kb)?, cfg);
            print!("{}", pipeline.report()?);
        }
        Command::ExportGeojson { what, window, out } => {
            let pipeline = Pipeline::new(KnowledgeBase::open(&cli.kb)?, cfg);
            let kind = ExportKind::parse(what)?;
            let value = export_geojson(&pipeline, kind, window)?;
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| Error::data(format!("geojson serialization: {e}")))?;
            match out {
                Some(path) => {
                    std::fs::write(path, text)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{text}"),
            }
        }
        Command::Score { truth } => {
            let pipeline = Pipeline::new(KnowledgeBase::open(&cli.kb)?, cfg);
            let report = pipeline.score(truth)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

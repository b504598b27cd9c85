use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use molabel::features::Variant;
use molabel::pipeline::{
    format_label_summary, format_split_table, BackendKind, Pipeline, PipelineConfig, PipelineError, EXIT_VALIDATION,
};
use molabel::synth::{generate, SynthMode, SynthSpec};

#[derive(Parser)]
#[command(name = "molabel", version, about = "Screenplay nomination prediction pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML, or JSON by extension).
    #[arg(long, short, global = true, default_value = "molabel.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    backend_url: Option<String>,
    #[arg(long, global = true)]
    dimension: Option<usize>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct VariantArgs {
    /// Variant names such as SCRIPT+SUMMARY+TITLE or script_summary_title.
    /// Defaults to the configured list.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean the corpus, join award labels and write the dataset.
    BuildDataset,
    /// Stratified train/val/test split.
    Split,
    /// Write per-document chunk counts.
    Chunk {
        /// Also write every chunk as JSON lines to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Encode chunks into the per-field caches (resumable).
    Embed,
    /// Pool cached vectors into per-variant feature matrices.
    Features,
    /// Fit on train and tune the threshold on validation.
    Train(VariantArgs),
    /// Re-tune the decision threshold of trained models.
    TuneThreshold(VariantArgs),
    /// Score the test split and print the metric table.
    Evaluate(VariantArgs),
    /// Score one screenplay JSON file.
    Predict {
        #[arg(long, value_parser = parse_variant, default_value = "SCRIPT+SUMMARY+TITLE")]
        variant: Variant,
        #[arg(long)]
        input: PathBuf,
    },
    /// Render ROC and PR curves from saved reports as SVG.
    Report(VariantArgs),
    /// Every stage in order.
    Run,
    /// Write a synthetic corpus and award file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        records: usize,
        #[arg(long, default_value_t = 0.2)]
        positive_rate: f64,
        #[arg(long = "synth-seed", default_value_t = 7)]
        synth_seed: u64,
        #[arg(long, value_parser = parse_mode, default_value = "null")]
        mode: SynthMode,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: molabel::features::FeatureError| e.to_string())
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "mock" => Ok(BackendKind::Mock),
        "mock-bow" => Ok(BackendKind::MockBow),
        "http" => Ok(BackendKind::Http),
        "cache-only" => Ok(BackendKind::CacheOnly),
        _ => Err(format!("unknown backend {s:?} (mock, mock-bow, http, cache-only)")),
    }
}

fn parse_mode(s: &str) -> Result<SynthMode, String> {
    match s {
        "null" => Ok(SynthMode::Null),
        "marker" => Ok(SynthMode::Marker),
        _ => Err(format!("unknown mode {s:?} (null, marker)")),
    }
}

fn load(global: &Global) -> anyhow::Result<Pipeline> {
    let mut config = PipelineConfig::from_file(&global.config)?;
    if let Some(s) = global.seed {
        config.seed = s;
    }
    if let Some(b) = global.backend {
        config.backend.kind = b;
    }
    if let Some(u) = &global.backend_url {
        config.backend.url = Some(u.clone());
    }
    if let Some(d) = global.dimension {
        config.backend.dimension = d;
    }
    if let Some(w) = &global.work_dir {
        config.paths.work_dir = w.clone();
    }
    let base = global.config.parent().map(PathBuf::from).unwrap_or_default();
    Ok(Pipeline::new(config, &base)?)
}

fn variants(p: &Pipeline, args: &VariantArgs) -> Vec<Variant> {
    if args.variants.is_empty() {
        p.config.variants.clone()
    } else {
        args.variants.clone()
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Synth { out, records, positive_rate, synth_seed, mode } = &cli.command {
        let spec = SynthSpec { n_records: *records, positive_rate: *positive_rate, seed: *synth_seed, mode: *mode, ..Default::default() };
        let (c, a) = generate(&spec).write(out).with_context(|| format!("writing synthetic corpus to {}", out.display()))?;
        println!("corpus: {}\nawards: {}", c.display(), a.display());
        return Ok(());
    }
    let p = load(&cli.global)?;
    match &cli.command {
        Command::BuildDataset => {
            let s = p.build_dataset()?;
            print!("{}", format_label_summary(&s.labels));
            if s.skipped_award_rows > 0 {
                println!("skipped award rows: {}", s.skipped_award_rows);
            }
        }
        Command::Split => print!("{}", format_split_table(&p.split()?)),
        Command::Chunk { dump } => {
            let m = p.chunk()?;
            for (f, s) in &m.stats {
                println!("{f:<8} avg {:>6.1}  max {:>5}  docs {}", s.avg_chunks, s.max_chunks, s.docs);
            }
            if let Some(out) = dump {
                let n = p.dump_chunks(out)?;
                println!("wrote {n} chunks to {}", out.display());
            }
        }
        Command::Embed => {
            let s = p.embed()?;
            println!("backend calls: {}, chunks encoded: {}", s.backend_calls, s.chunks_encoded);
            for (f, n) in &s.cache_entries {
                println!("{f:<8} {n} cached chunks");
            }
        }
        Command::Features => p.features()?,
        Command::Train(a) => {
            for v in variants(&p, a) {
                let s = p.train(v)?;
                println!(
                    "{:<22} iterations {:>5}  objective {:.6}  threshold {:.2}",
                    v.name(),
                    s.iterations,
                    s.final_objective,
                    s.threshold
                );
            }
        }
        Command::TuneThreshold(a) => {
            for v in variants(&p, a) {
                let s = p.tune_threshold(v)?;
                println!("{:<22} threshold {:.2}  val F1 {:.3}", v.name(), s.tau, s.best_f1);
            }
        }
        Command::Evaluate(a) => {
            let reports = variants(&p, a).into_iter().map(|v| p.evaluate(v)).collect::<Result<Vec<_>, _>>()?;
            print!("{}", molabel::evalkit::format_table(&reports));
        }
        Command::Predict { variant, input } => {
            let out = p.predict_file(*variant, input)?;
            println!("variant: {}", out.variant);
            println!("probability: {:.6}", out.probability);
            println!("threshold: {:.2}", out.threshold);
            println!("decision: {}", out.decision);
        }
        Command::Report(a) => {
            for v in variants(&p, a) {
                for path in p.report(v)? {
                    println!("{}", path.display());
                }
            }
        }
        Command::Run => {
            let s = p.run_all()?;
            print!("{}", format_split_table(&s.splits));
            println!();
            print!("{}", s.table);
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<PipelineError>().map_or(EXIT_VALIDATION, PipelineError::exit_code);
            tracing::debug!(?e, "command failed");
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

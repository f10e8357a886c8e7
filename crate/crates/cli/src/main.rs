use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coref::config::{PruningThreshold, RunConfig};
use coref::features::FeatureGroup;
use coref::pipeline::{self, PredictMode};
use coref::synthetic::{generate_corpus, SyntheticConfig};
use coref::{CorefError, Result};

#[derive(Parser)]
#[command(name = "coref", version, about = "Mention-ranking and cluster-ranking coreference resolution")]
struct Cli {
    /// Worker threads for document-level parallelism.
    #[arg(long, global = true, env = "COREF_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    ranker: Option<PathBuf>,
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// Write the JSON-lines training log here instead of stdout.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    all_pairs_epochs: Option<usize>,
    #[arg(long)]
    top_pairs_epochs: Option<usize>,
    #[arg(long)]
    ranking_epochs: Option<usize>,
    #[arg(long)]
    l2s_epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the mention ranker.
    TrainRanker(Common),
    /// Train the cluster ranker on top of a mention-ranker checkpoint.
    TrainCluster {
        #[command(flatten)]
        common: Common,
        /// Process mentions in document order.
        #[arg(long)]
        no_easy_first: bool,
        /// Train on reference-policy trajectories only.
        #[arg(long)]
        no_l2s: bool,
        /// Start from random weights instead of the mention ranker.
        #[arg(long)]
        no_pretrained_init: bool,
        /// "auto", "none", or a link-score threshold.
        #[arg(long, allow_hyphen_values = true)]
        pruning_threshold: Option<PruningThreshold>,
    },
    /// Write one JSON line of clusters per document.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Cluster)]
        mode: Mode,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score predictions against a gold corpus.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Search the false-new and false-anaphoric penalties on dev.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Retrain without feature groups and report the dev change.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// mention, genre, distance, speaker, matching, or all.
        #[arg(long = "group", required = true)]
        groups: Vec<String>,
    },
    /// Write a generated corpus with known coreference.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20)]
        documents: usize,
        #[arg(long, default_value_t = 30)]
        mentions: usize,
        #[arg(long, default_value_t = 6)]
        entities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        id_prefix: String,
    },
    /// Print the default configuration.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mention,
    Cluster,
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut cfg.paths.train, &c.train);
    set(&mut cfg.paths.dev, &c.dev);
    set(&mut cfg.paths.embeddings, &c.embeddings);
    set(&mut cfg.paths.ranker_checkpoint, &c.ranker);
    set(&mut cfg.paths.cluster_checkpoint, &c.cluster);
    set(&mut cfg.paths.log, &c.log);
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let s = &mut cfg.schedule;
    for (slot, v) in [
        (&mut s.all_pairs_epochs, c.all_pairs_epochs),
        (&mut s.top_pairs_epochs, c.top_pairs_epochs),
        (&mut s.ranking_epochs, c.ranking_epochs),
        (&mut s.l2s_epochs, c.l2s_epochs),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &PathBuf) -> Result<Box<dyn Write>> {
    let f = File::create(path).map_err(|e| CorefError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(Box::new(BufWriter::new(f)))
}

fn log_sink(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    match &cfg.paths.log {
        Some(p) => create(p),
        None => Ok(Box::new(io::stdout())),
    }
}

fn flush(w: &mut dyn Write) -> Result<()> {
    w.flush().map_err(|e| CorefError::Io {
        path: "<output>".into(),
        source: e,
    })
}

fn report<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("reports serialize"));
}

fn parse_groups(names: &[String]) -> Result<Vec<FeatureGroup>> {
    let mut out = Vec::new();
    for n in names {
        if n == "all" {
            out.extend(FeatureGroup::ALL);
        } else {
            out.push(n.parse::<FeatureGroup>()?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainRanker(c) => {
            let cfg = load_config(&c)?;
            let mut log = log_sink(&cfg)?;
            let r = pipeline::train_ranker(&cfg, &mut *log)?;
            flush(&mut *log)?;
            report(&r);
        }
        Command::TrainCluster {
            common,
            no_easy_first,
            no_l2s,
            no_pretrained_init,
            pruning_threshold,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.cluster.easy_first &= !no_easy_first;
            cfg.cluster.l2s &= !no_l2s;
            cfg.cluster.pretrained_init &= !no_pretrained_init;
            if let Some(t) = pruning_threshold {
                cfg.cluster.pruning_threshold = t;
            }
            let mut log = log_sink(&cfg)?;
            let r = pipeline::train_cluster(&cfg, &mut *log)?;
            flush(&mut *log)?;
            let removed = r.dev_pruning.unwrap_or(r.train_pruning).removed_fraction();
            log::info!("pruning threshold {} removes {:.2}% of candidate actions", r.pruning_threshold, 100.0 * removed);
            report(&r);
        }
        Command::Predict {
            common,
            corpus,
            mode,
            output,
        } => {
            let cfg = load_config(&common)?;
            let mode = match mode {
                Mode::Mention => PredictMode::Mention,
                Mode::Cluster => PredictMode::Cluster,
            };
            let mut out: Box<dyn Write> = match &output {
                Some(p) => create(p)?,
                None => Box::new(io::stdout()),
            };
            pipeline::predict(&cfg, &corpus, mode, &mut *out)?;
            flush(&mut *out)?;
        }
        Command::Evaluate { gold, predictions } => {
            report(&pipeline::evaluate_files(&gold, &predictions)?);
        }
        Command::Tune { common, budget } => {
            let mut cfg = load_config(&common)?;
            if let Some(b) = budget {
                cfg.tune.budget = b;
            }
            let mut log = log_sink(&cfg)?;
            let r = pipeline::tune(&cfg, &mut *log)?;
            flush(&mut *log)?;
            report(&r);
        }
        Command::Ablate { common, groups } => {
            let cfg = load_config(&common)?;
            let groups = parse_groups(&groups)?;
            let mut log = log_sink(&cfg)?;
            let r = pipeline::ablate(&cfg, &groups, &mut *log)?;
            flush(&mut *log)?;
            report(&r);
        }
        Command::Synth {
            output,
            documents,
            mentions,
            entities,
            seed,
            id_prefix,
        } => {
            let docs = generate_corpus(&SyntheticConfig {
                documents,
                mentions_per_document: mentions,
                entities_per_document: entities,
                seed,
                id_prefix,
                ..Default::default()
            })?;
            coref::corpus::write_corpus(&output, &docs)?;
        }
        Command::DefaultConfig => print!("{}", RunConfig::default().to_toml_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

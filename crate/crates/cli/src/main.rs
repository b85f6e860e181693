mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use poprec::data::ingest_path;
use poprec::eval::{build_report, evaluate, Evaluation, MetricReport};
use poprec::neural::{checkpoint, train_with_report, NeuralScorer};
use poprec::pipeline::{global_temporal_split, popularity_sample, DatasetSplit};
use poprec::scorers::{MostPopular, PersonalizedMostPopular, Scorer};
use poprec::synth::{generate, SynthConfig};

use config::{model_config, parse_cutoffs, ModelOptions, RunConfig, ScorerSpec};

#[derive(Parser)]
#[command(name = "poprec", version, about = "Popularity-aware sequential recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log.
    Synth(SynthArgs),
    /// Keep the events of a popularity-weighted sample of items.
    Sample(SampleArgs),
    /// Global temporal split into train, validation and test files.
    Split(SplitArgs),
    /// Train a neural scorer on a split and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate scorers on a split's test partition.
    Eval(EvalArgs),
    /// Run a whole experiment described by a run config.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 400)]
    events_per_user: usize,
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    #[arg(long, default_value_t = 20)]
    favorites: usize,
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Number of items to keep.
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    val_users: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    mask_probability: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

impl From<&ModelArgs> for ModelOptions {
    fn from(a: &ModelArgs) -> Self {
        ModelOptions {
            epochs: a.epochs,
            embed_dim: a.embed_dim,
            heads: a.heads,
            blocks: a.blocks,
            l_max: a.l_max,
            learning_rate: a.learning_rate,
            weight_decay: a.weight_decay,
            negatives: a.negatives,
            beta: a.beta,
            mask_probability: a.mask_probability,
            epsilon: a.epsilon,
            patience: a.patience,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Split directory written by `split`.
    #[arg(long)]
    split: PathBuf,
    /// bert4rec, sasrec or gsasrec.
    #[arg(long)]
    model: String,
    /// Add personalized popularity logits.
    #[arg(long)]
    pps: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    options: ModelArgs,
    /// Checkpoint path.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    split: PathBuf,
    /// most-popular, personalized-most-popular or a checkpoint path; repeatable.
    #[arg(long, required = true)]
    scorer: Vec<String>,
    #[arg(long, default_value = "5,10,40,100")]
    cutoffs: String,
    /// Report CSV path.
    #[arg(short, long)]
    output: PathBuf,
    /// Directory for per-user NDCG files.
    #[arg(long)]
    per_user: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run config file of `key = value` lines.
    #[arg(short, long)]
    config: PathBuf,
}

fn progress(msg: &str) {
    if std::env::var_os("POPREC_QUIET").is_none() {
        eprintln!("{msg}");
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("missing file: {}", path.display());
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(())
}

fn read_split(dir: &Path) -> Result<DatasetSplit> {
    for f in ["catalog.csv", "train.csv", "validation.csv", "test.csv", "manifest.csv"] {
        require(&dir.join(f))?;
    }
    DatasetSplit::read_dir(dir).with_context(|| format!("cannot read split {}", dir.display()))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        users: a.users,
        items: a.items,
        events_per_user: a.events_per_user,
        rho: a.rho,
        favorites_per_user: a.favorites,
        global_skew: a.skew,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let log = generate(&cfg)?;
    create_parent(&a.output)?;
    log.write_csv_path(&a.output)?;
    progress(&format!("wrote {} events to {}", log.len(), a.output.display()));
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    require(&a.input)?;
    let log = ingest_path(&a.input).with_context(|| format!("cannot ingest {}", a.input.display()))?;
    let (sampled, _) = popularity_sample(&log, a.n, a.seed)?;
    create_parent(&a.output)?;
    sampled.write_csv_path(&a.output)?;
    progress(&format!("kept {} events over {} items", sampled.len(), a.n));
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    require(&a.input)?;
    let log = ingest_path(&a.input).with_context(|| format!("cannot ingest {}", a.input.display()))?;
    let split = global_temporal_split(&log, a.test_fraction, a.val_fraction, a.val_users, a.seed)?;
    split.write_dir(&a.output)?;
    progress(&format!(
        "train {} / validation {} / test {} events",
        split.train.len(),
        split.validation_events.len(),
        split.test_events.len()
    ));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let config = model_config(&a.model, a.pps, a.seed, &ModelOptions::from(&a.options))?;
    let (scorer, report) = train_with_report(&split.train, &config, &split.validation)?;
    create_parent(&a.output)?;
    checkpoint::save_path(&scorer, &a.output)?;
    progress(&format!(
        "{}: {} epochs, kept epoch {}, saved {}",
        scorer.name(),
        report.epochs_run,
        report.best_epoch,
        a.output.display()
    ));
    Ok(())
}

fn load_scorer(token: &str, split: &DatasetSplit) -> Result<Box<dyn Scorer>> {
    Ok(match token {
        "most-popular" => Box::new(MostPopular::new(&split.train)?),
        "personalized-most-popular" => Box::new(PersonalizedMostPopular::new(&split.train)?),
        path => {
            require(Path::new(path))?;
            Box::new(checkpoint::load_path(path).with_context(|| format!("cannot load checkpoint {path}"))?)
        }
    })
}

fn write_report(report: &MetricReport, evals: &[Evaluation], csv_path: &Path, per_user: Option<&Path>) -> Result<()> {
    create_parent(csv_path)?;
    report.write_csv(fs::File::create(csv_path).with_context(|| format!("cannot create {}", csv_path.display()))?)?;
    if let Some(dir) = per_user {
        fs::create_dir_all(dir)?;
        for e in evals {
            e.write_csv(fs::File::create(dir.join(format!("{}.csv", e.scorer)))?)?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let cutoffs = parse_cutoffs(&a.cutoffs)?;
    let mut evals = Vec::new();
    for token in &a.scorer {
        let scorer = load_scorer(token, &split)?;
        evals.push(evaluate(scorer.as_ref(), &split, &cutoffs)?);
    }
    let report = build_report(&evals, &[])?;
    write_report(&report, &evals, &a.output, a.per_user.as_deref())?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    require(&a.config)?;
    let run = RunConfig::read(&a.config)?;
    require(&run.input)?;
    let out = &run.output;
    let log = ingest_path(&run.input).with_context(|| format!("cannot ingest {}", run.input.display()))?;
    let log = match run.sample_items {
        Some(n) => popularity_sample(&log, n, run.seed)?.0,
        None => log,
    };
    fs::create_dir_all(out.join("data"))?;
    log.write_csv_path(out.join("data").join("events.csv"))?;

    let split = global_temporal_split(&log, run.test_fraction, run.val_fraction, run.val_users, run.seed)?;
    split.write_dir(out.join("splits"))?;
    progress(&format!("split: {} train / {} test events", split.train.len(), split.test_events.len()));

    let neural: Vec<(String, poprec::neural::ModelConfig)> = run
        .scorers
        .iter()
        .filter_map(|s| match s {
            ScorerSpec::Neural { model, pps } => Some(model_config(model, *pps, run.seed, &run.model).map(|c| (s.name(), c))),
            _ => None,
        })
        .collect::<Result<_>>()?;
    let train_one = |(name, config): &(String, poprec::neural::ModelConfig)| -> Result<NeuralScorer> {
        let (scorer, report) = train_with_report(&split.train, config, &split.validation)?;
        progress(&format!("{name}: {} epochs, kept epoch {}", report.epochs_run, report.best_epoch));
        Ok(scorer.with_name(name.clone()))
    };
    let trained: Vec<NeuralScorer> = if run.parallel {
        thread::scope(|s| {
            let handles: Vec<_> = neural.iter().map(|job| s.spawn(move || train_one(job))).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect::<Result<_>>()
        })?
    } else {
        neural.iter().map(train_one).collect::<Result<_>>()?
    };
    fs::create_dir_all(out.join("models"))?;
    for m in &trained {
        checkpoint::save_path(m, out.join("models").join(format!("{}.json", m.name())))?;
    }

    let mut evals = Vec::new();
    let mut trained = trained.into_iter();
    for spec in &run.scorers {
        let scorer: Box<dyn Scorer> = match spec {
            ScorerSpec::MostPopular => Box::new(MostPopular::new(&split.train)?),
            ScorerSpec::PersonalizedMostPopular => Box::new(PersonalizedMostPopular::new(&split.train)?),
            ScorerSpec::Neural { .. } => Box::new(trained.next().expect("one trained model per neural scorer")),
        };
        evals.push(evaluate(scorer.as_ref(), &split, &run.cutoffs)?);
    }
    let report = build_report(&evals, &run.comparisons())?;
    let reports = out.join("reports");
    write_report(&report, &evals, &reports.join("report.csv"), Some(&reports.join("per_user")))?;
    let md = report.to_markdown();
    fs::write(reports.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

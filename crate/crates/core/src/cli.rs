//! The `saev` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors. Every run logs its arguments and seed to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::corpus::{generate_synthetic, write_shard, ItemSource, ShardSet, SyntheticSpec};
use crate::metrics::{correlate_tables, evaluate, read_score_table, ReconAveraging};
use crate::patchfilter::{
    make_mask, score_patches, write_mask_jsonl, write_score_table, PatchMethod,
};
use crate::ranking::{
    average_model_score, collect_activations, cross_modal_weight, filter_manifest, rank,
    CrossModalWeights, RankMethod, RankedManifest, DEFAULT_DELTA, DEFAULT_MAX_TOKENS_PER_FEATURE,
    DEFAULT_SAMPLE_SIZE, DEFAULT_TOP_K,
};
use crate::sae::SaeModel;
use crate::trainer::{save_history_csv, train, TrainConfig};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "SAEV_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "saev",
    version,
    about = "Sparse autoencoders over multimodal activations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus built from a planted dictionary.
    GenSynth(GenSynthArgs),
    /// Train a sparse autoencoder on activation shards.
    Train(TrainArgs),
    /// Report L0, L1 and reconstruction loss of a model on shards.
    Eval(EvalArgs),
    /// Compute cross-modal feature weights from a sample of items.
    Weights(WeightsArgs),
    /// Score and sort every item.
    Rank(RankArgs),
    /// Keep the top fraction of a ranked manifest.
    Filter(FilterArgs),
    /// Score vision patches and write kept-patch masks.
    PatchFilter(PatchFilterArgs),
    /// Mean of the nonzero cross-modal weights.
    AvgScore(AvgScoreArgs),
    /// Pearson correlation of two id,score tables.
    Corr(CorrArgs),
}

#[derive(Debug, Args)]
pub struct ShardInput {
    /// Activation shard files, read in the given order.
    #[arg(long, num_args = 1.., required = true)]
    pub shards: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the planted dictionary as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 32)]
    pub features: usize,
    #[arg(long, default_value_t = 5)]
    pub sparsity: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 16)]
    pub tokens_per_item: usize,
    #[arg(long, default_value_t = 0.5, value_parser = fraction)]
    pub vision_fraction: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 8)]
    pub shared_features: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: ShardInput,
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` file of training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set total_steps=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the per-step loss history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: ShardInput,
    #[arg(long)]
    pub model: PathBuf,
    /// Average reconstruction over tokens instead of items.
    #[arg(long)]
    pub per_token: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub input: ShardInput,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    pub sample_size: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS_PER_FEATURE)]
    pub max_tokens_per_feature: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub input: ShardInput,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub method: RankMethod,
    /// Required with `--method cosine`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = fraction)]
    pub retention: f64,
    /// Kept ids, one per line. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PatchFilterArgs {
    #[command(flatten)]
    pub input: ShardInput,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub method: PatchMethod,
    /// Fraction of vision patches to keep; repeat for several masks per item.
    #[arg(long, required = true, value_parser = fraction)]
    pub gamma: Vec<f64>,
    /// Required with `--method cosine`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Mask JSON lines. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-patch scores as CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AvgScoreArgs {
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// CSV with `id,score` rows.
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails harmlessly when the pool already exists.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        _ => warn!("ignoring {THREADS_ENV}={value:?}, expected a positive integer"),
    }
}

fn dispatch(command: Command) -> Outcome {
    info!("{command:?}");
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Weights(a) => weights_cmd(a),
        Command::Rank(a) => rank_cmd(a),
        Command::Filter(a) => filter_cmd(a),
        Command::PatchFilter(a) => patch_filter_cmd(a),
        Command::AvgScore(a) => {
            let w = CrossModalWeights::load(&a.weights)?;
            println!("{}", average_model_score(&w)?);
            Ok(())
        }
        Command::Corr(a) => {
            let (r, n) = correlate_tables(&read_score_table(&a.x)?, &read_score_table(&a.y)?)?;
            println!("{}", serde_json::json!({ "pearson": r, "n": n }));
            Ok(())
        }
    }
}

/// Runs `body` against the file at `path`, or stdout when `path` is `None`.
fn with_output(
    path: Option<&Path>,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Outcome {
    let shown = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let io = |e| Failure::Data(Error::io(&shown, e));
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io)?);
            body(&mut w).map_err(io)?;
            w.flush().map_err(io)
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            body(&mut w).map_err(io)?;
            w.flush().map_err(io)
        }
    }
}

fn gen_synth(a: GenSynthArgs) -> Outcome {
    let spec = SyntheticSpec {
        d_model: a.d_model,
        planted_features: a.features,
        sparsity: a.sparsity,
        items: a.items,
        tokens_per_item: a.tokens_per_item,
        vision_fraction: a.vision_fraction,
        noise_std: a.noise,
        seed: a.seed,
        shared_features: a.shared_features,
        ..SyntheticSpec::default()
    };
    info!("seed {}", spec.seed);
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let corpus = generate_synthetic(&spec)?;
    write_shard(&a.out, spec.d_model, &corpus.items)?;
    if let Some(truth) = &a.truth {
        let rows: Vec<Vec<f64>> = corpus
            .dictionary
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        let json = serde_json::json!({ "spec": spec, "dictionary": rows });
        std::fs::write(truth, json.to_string() + "\n").map_err(|e| Error::io(truth, e))?;
    }
    info!("wrote {} items to {}", corpus.items.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_kv_file(p)?,
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config
            .set(key.trim(), value.trim())
            .map_err(|e| Failure::Usage(format!("--set {kv}: {e}")))?;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    info!("seed {}", config.seed);
    info!("training config:\n{}", config.to_kv().trim_end());
    let shards = ShardSet::new(&a.input.shards);
    let (model, history) = train(&shards, &config)?;
    model.save(&a.out)?;
    info!(
        "model {} written to {}",
        model.fingerprint(),
        a.out.display()
    );
    if let Some(h) = &a.history {
        save_history_csv(&history, h)?;
    }
    Ok(())
}

fn load_model(path: &Path) -> std::result::Result<SaeModel<f32>, Failure> {
    Ok(SaeModel::load(path)?)
}

fn check_model_width(source: &ShardSet, model: &SaeModel<f32>) -> Outcome {
    let d = source.d_model()?;
    if d != model.m() {
        return Err(Error::dim("shard d_model vs model input width", model.m(), d).into());
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Outcome {
    let shards = ShardSet::new(&a.input.shards);
    let model = load_model(&a.model)?;
    check_model_width(&shards, &model)?;
    let averaging = if a.per_token {
        ReconAveraging::PerToken
    } else {
        ReconAveraging::PerItem
    };
    let report = evaluate(&shards, &model, averaging)?;
    with_output(a.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)
    })
}

fn weights_cmd(a: WeightsArgs) -> Outcome {
    let shards = ShardSet::new(&a.input.shards);
    let model = load_model(&a.model)?;
    check_model_width(&shards, &model)?;
    info!("seed {}", a.seed);
    let sample = collect_activations(
        &shards,
        &model,
        a.delta,
        a.sample_size,
        a.seed,
        a.max_tokens_per_feature,
    )?;
    let weights = cross_modal_weight(&sample, a.top_k)?;
    let nonzero = weights.omega.iter().filter(|&&w| w != 0.0).count();
    info!(
        "{nonzero} of {} features have a nonzero cross-modal weight",
        weights.n()
    );
    weights.save(&a.out)?;
    Ok(())
}

fn require_weights(
    method: &str,
    weights: Option<&Path>,
) -> std::result::Result<Option<CrossModalWeights>, Failure> {
    if method != "cosine" {
        return Ok(None);
    }
    match weights {
        Some(p) => Ok(Some(CrossModalWeights::load(p)?)),
        None => Err(Failure::Usage(
            "--weights is required with --method cosine".into(),
        )),
    }
}

fn rank_cmd(a: RankArgs) -> Outcome {
    let weights = require_weights(a.method.as_str(), a.weights.as_deref())?;
    let shards = ShardSet::new(&a.input.shards);
    let model = load_model(&a.model)?;
    check_model_width(&shards, &model)?;
    let manifest = rank(&shards, &model, a.method, weights.as_ref(), a.delta)?;
    info!("ranked {} items by {}", manifest.len(), a.method);
    with_output(a.out.as_deref(), |w| manifest.write_jsonl(w))
}

fn filter_cmd(a: FilterArgs) -> Outcome {
    let manifest = RankedManifest::load(&a.manifest)?;
    let kept = filter_manifest(&manifest, a.retention)?;
    info!("keeping {} of {} items", kept.len(), manifest.len());
    with_output(a.out.as_deref(), |w| {
        for id in &kept {
            writeln!(w, "{id}")?;
        }
        Ok(())
    })
}

fn patch_filter_cmd(a: PatchFilterArgs) -> Outcome {
    let weights = require_weights(a.method.as_str(), a.weights.as_deref())?;
    let shards = ShardSet::new(&a.input.shards);
    let model = load_model(&a.model)?;
    check_model_width(&shards, &model)?;
    let mut masks = Vec::new();
    let mut tables = Vec::new();
    let mut skipped = 0usize;
    for item in shards.items()? {
        let item = item?;
        let scores = match score_patches(&item, &model, a.method, a.delta, weights.as_ref()) {
            Ok(s) => s,
            Err(Error::Precondition(msg)) => {
                warn!("skipping: {msg}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for &g in &a.gamma {
            masks.push(make_mask(&scores, g)?);
        }
        if a.scores.is_some() {
            tables.push(scores);
        }
    }
    info!(
        "wrote masks for {} items, skipped {skipped}",
        masks.len() / a.gamma.len()
    );
    if let Some(p) = &a.scores {
        let file = File::create(p).map_err(|e| Error::io(p, e))?;
        write_score_table(BufWriter::new(file), &tables)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
    }
    with_output(a.out.as_deref(), |w| write_mask_jsonl(w, &masks))
}

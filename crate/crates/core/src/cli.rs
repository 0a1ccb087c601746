//! Command-line front end. Every subcommand reads its inputs without
//! modifying them and is deterministic given `--seed`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_epoch, insert_candidates, reorder_candidates, AugmentConfig};
use crate::cells::{Params, Variant};
use crate::error::{Error, Result};
use crate::eval::{evaluate, sensitivity_sweep, write_sweep_csv, Metrics, SumBaseline, SweepRow};
use crate::features::{featurize_corpus, EmbeddingTable, FeatureSource, Lexicon, Pipeline};
use crate::inspect::{
    hierarchy_weights, relation_weights, salience_from_weights, salience_html, DocumentSalience, HierarchyWeightReport,
    RelationWeightReport,
};
use crate::synth::{generate, synth_lexicon_tsv, SynthConfig, SynthTask};
use crate::tensor::TensorError;
use crate::train::{split_train_val, train, TrainConfig, TrainReport};
use crate::tree::{read_corpus, write_corpus, DiscourseTree};

/// Writes to stdout, ignoring a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const SEED_ENV: &str = "DISCOURSE_LSTM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "discourse-lstm",
    version,
    about = "Tree-LSTM and Discourse-LSTM sentiment classifiers over RST discourse trees",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads for per-tree and per-cell parallelism (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute leaf features from EDU text and write the featurized trees
    Featurize(FeaturizeArgs),
    /// Train a model and write checkpoint.json, report.jsonl and config.json
    Train(TrainArgs),
    /// Score a checkpoint on labeled trees, optionally under relation noise
    Evaluate(EvaluateArgs),
    /// Dry run of one epoch of data augmentation
    Augment(AugmentArgs),
    /// Relation and hierarchy weights of a discourse model, plus EDU salience
    Inspect(InspectArgs),
    /// Generate a labeled synthetic corpus
    Synth(SynthArgs),
    /// Train every combination of a hyperparameter grid (resumable)
    Grid(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Lexicon,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentMode {
    None,
    Reorder,
    Insert,
    Both,
}

impl AugmentMode {
    fn flags(self) -> (bool, bool) {
        match self {
            AugmentMode::None => (false, false),
            AugmentMode::Reorder => (true, false),
            AugmentMode::Insert => (false, true),
            AugmentMode::Both => (true, true),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ResourceArgs {
    /// Sentiment lexicon, TSV of word, positive score, negative score
    #[arg(long, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
    /// Word embeddings in text format, one word and its vector per line
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Feature source; inferred from the resource given when omitted
    #[arg(long, value_enum)]
    pub features: Option<FeatureKind>,
    /// Porter-stem tokens before lookup
    #[arg(long)]
    pub stem: bool,
    /// Keep token case
    #[arg(long)]
    pub no_lowercase: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Discourse trees, one JSON object per line
    #[arg(long, value_name = "PATH")]
    pub trees: PathBuf,
    /// CSV of doc_id,label overriding the labels stored in the trees
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

fn variant_parser() -> impl TypedValueParser<Value = Variant> {
    PossibleValuesParser::new(Variant::ALL.map(Variant::name))
        .map(|s| s.parse::<Variant>().expect("listed names parse"))
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model variant
    #[arg(long, value_parser = variant_parser(), default_value = "discourse-childsum")]
    pub variant: Variant,
    /// Memory size
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// L2 regularization strength on weight tensors
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    /// Probability of zeroing each weight entry per training step
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Share of the data held out for early stopping
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Upper bound on training epochs; 0 saves the initialization
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    /// Trees per optimizer step
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Number of sentiment classes
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Training-time data augmentation
    #[arg(long, value_enum, default_value_t = AugmentMode::None)]
    pub augment: AugmentMode,
    /// Share of inner-node relations redrawn in every training tree
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_fraction: f64,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let (reorder, insert) = self.augment.flags();
        let config = TrainConfig {
            variant: self.variant,
            n: self.n,
            learning_rate: self.lr,
            l2: self.l2,
            patience: self.patience,
            val_fraction: self.val_fraction,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            augment: AugmentConfig {
                reorder,
                insert,
                corruption_fraction: self.corrupt_fraction,
                seed,
            },
            classes: self.classes,
            seed,
        };
        config.validate()?;
        config.model_config(1)?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output tree file
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seed for every random choice
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Directory for checkpoint.json, report.jsonl and config.json
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Also score the sum-of-leaf-scores baseline
    #[arg(long)]
    pub baseline: bool,
    /// Comma-separated relation-noise fractions for a sensitivity sweep
    #[arg(long, value_delimiter = ',', value_name = "F,...")]
    pub corrupt_fraction: Vec<f64>,
    /// Noise seeds averaged per sweep fraction, starting at --seed
    #[arg(long, default_value_t = 3)]
    pub sweep_seeds: u64,
    /// Seed for every random choice
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Write the metrics JSON here as well as to stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write the sweep rows as CSV
    #[arg(long, value_name = "PATH")]
    pub sweep_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Discourse trees, one JSON object per line
    #[arg(long, value_name = "PATH")]
    pub trees: PathBuf,
    /// Augmentations applied to every input tree
    #[arg(long, value_enum, default_value_t = AugmentMode::Both)]
    pub augment: AugmentMode,
    /// Share of inner-node relations redrawn in every output tree
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_fraction: f64,
    /// Seed for every random choice
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Write the augmented trees here
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint of a discourse variant
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Trees whose EDUs get salience scores
    #[arg(long, value_name = "PATH")]
    pub trees: Option<PathBuf>,
    /// Write the report JSON here as well as to stdout
    #[arg(long, value_name = "PATH")]
    pub out_json: Option<PathBuf>,
    /// Write a salience heatmap page (needs --trees)
    #[arg(long, value_name = "PATH")]
    pub out_html: Option<PathBuf>,
}

fn task_parser() -> impl TypedValueParser<Value = SynthTask> {
    PossibleValuesParser::new(SynthTask::ALL.map(SynthTask::name))
        .map(|s| s.parse::<SynthTask>().expect("listed names parse"))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Labeling rule of the generated corpus
    #[arg(long, value_parser = task_parser())]
    pub task: SynthTask,
    /// Number of trees to generate (at least 2)
    #[arg(long, default_value_t = 500)]
    pub n_trees: usize,
    /// Maximum root-to-leaf depth
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// Seed for every random choice
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Output tree file; labels are stored in the trees
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write the labels as doc_id,label CSV
    #[arg(long, value_name = "PATH")]
    pub labels_out: Option<PathBuf>,
    /// Also write the lexicon that scores the generated EDUs
    #[arg(long, value_name = "PATH")]
    pub lexicon_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON object with optional lists n, learning_rate, l2, dropout;
    /// omitted lists fall back to the single flag value
    #[arg(long, value_name = "PATH")]
    pub grid: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Directory for grid.csv; existing rows are kept and skipped
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

/// 0 ok, 2 bad input, 3 numeric failure, 4 bad usage.
pub fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Divergence { .. } | Error::Tensor(TensorError::NonFinite { .. }) => 3,
        Error::Config(_) => 4,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        if rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .is_err()
        {
            log::debug!("worker pool already initialized; --jobs ignored");
        }
    }
    match cli.command {
        Command::Featurize(a) => cmd_featurize(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports always serialize") + "\n"
}

/// `doc_id,label` rows; a first row whose label is not an integer is taken
/// as a header.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Data(format!("{}: {e}", path.display())),
        })?;
    let mut labels = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error(path))?;
        if record.len() != 2 {
            return Err(Error::Data(format!(
                "{}:{}: expected doc_id,label",
                path.display(),
                i + 1
            )));
        }
        match record[1].parse::<usize>() {
            Ok(label) => {
                if labels.insert(record[0].to_string(), label).is_some() {
                    return Err(Error::Data(format!(
                        "{}: duplicate doc_id {}",
                        path.display(),
                        &record[0]
                    )));
                }
            }
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::Data(format!(
                    "{}:{}: label {:?} is not a class index",
                    path.display(),
                    i + 1,
                    &record[1]
                )))
            }
        }
    }
    Ok(labels)
}

fn apply_labels(trees: &mut [DiscourseTree], labels: &BTreeMap<String, usize>) {
    let mut used = 0;
    for t in trees.iter_mut() {
        if let Some(l) = labels.get(&t.doc_id) {
            t.label = Some(*l);
            used += 1;
        }
    }
    if used < labels.len() {
        log::warn!("{} label rows match no tree", labels.len() - used);
    }
}

enum Resource {
    Lexicon(Lexicon),
    Embeddings(EmbeddingTable),
}

impl ResourceArgs {
    fn kind(&self) -> Result<Option<FeatureKind>> {
        match (self.features, &self.lexicon, &self.embeddings) {
            (Some(FeatureKind::Lexicon), None, _) => Err(Error::Config("--features lexicon needs --lexicon".into())),
            (Some(FeatureKind::Embedding), _, None) => {
                Err(Error::Config("--features embedding needs --embeddings".into()))
            }
            (Some(k), _, _) => Ok(Some(k)),
            (None, Some(_), Some(_)) => Err(Error::Config(
                "both --lexicon and --embeddings given; choose one with --features".into(),
            )),
            (None, Some(_), None) => Ok(Some(FeatureKind::Lexicon)),
            (None, None, Some(_)) => Ok(Some(FeatureKind::Embedding)),
            (None, None, None) => Ok(None),
        }
    }

    fn pipeline(&self) -> Pipeline {
        Pipeline {
            lowercase: !self.no_lowercase,
            stem: self.stem,
        }
    }

    fn load(&self) -> Result<Option<Resource>> {
        Ok(match self.kind()? {
            Some(FeatureKind::Lexicon) => Some(Resource::Lexicon(Lexicon::load(
                self.lexicon.as_ref().expect("checked"),
            )?)),
            Some(FeatureKind::Embedding) => Some(Resource::Embeddings(EmbeddingTable::load(
                self.embeddings.as_ref().expect("checked"),
            )?)),
            None => None,
        })
    }
}

/// Reads trees, applies label overrides and featurizes them when a
/// resource is given. Without a resource the stored features are used.
fn load_input(input: &InputArgs) -> Result<Vec<DiscourseTree>> {
    let mut trees = read_corpus(&input.trees)?;
    if trees.is_empty() {
        return Err(Error::EmptyInput(format!("{} holds no trees", input.trees.display())));
    }
    if let Some(path) = &input.labels {
        apply_labels(&mut trees, &read_labels(path)?);
    }
    let pipeline = input.resources.pipeline();
    match input.resources.load()? {
        Some(Resource::Lexicon(lex)) => featurize_corpus(&trees, &pipeline, FeatureSource::Lexicon(&lex)),
        Some(Resource::Embeddings(table)) => featurize_corpus(&trees, &pipeline, FeatureSource::Embeddings(&table)),
        None => {
            if let Some(t) = trees.iter().find(|t| !t.is_featurized()) {
                return Err(Error::Config(format!(
                    "tree {} has no leaf features; pass --lexicon or --embeddings",
                    t.doc_id
                )));
            }
            Ok(trees)
        }
    }
}

fn cmd_featurize(args: FeaturizeArgs) -> Result<()> {
    if args.input.resources.kind()?.is_none() {
        return Err(Error::Config("featurize needs --lexicon or --embeddings".into()));
    }
    let trees = load_input(&args.input)?;
    write_corpus(&args.out, &trees)?;
    outln!("featurized {} trees into {}", trees.len(), args.out.display());
    Ok(())
}

/// Everything that determines a training run, written next to the
/// checkpoint.
#[derive(Serialize)]
struct ResolvedConfig<'a> {
    trees: &'a Path,
    labels: Option<&'a Path>,
    features: Option<FeatureKind>,
    lexicon: Option<&'a Path>,
    embeddings: Option<&'a Path>,
    lowercase: bool,
    stem: bool,
    train: &'a TrainConfig,
}

impl<'a> ResolvedConfig<'a> {
    fn new(input: &'a InputArgs, train: &'a TrainConfig) -> Result<Self> {
        let r = &input.resources;
        Ok(ResolvedConfig {
            trees: &input.trees,
            labels: input.labels.as_deref(),
            features: r.kind()?,
            lexicon: r.lexicon.as_deref(),
            embeddings: r.embeddings.as_deref(),
            lowercase: !r.no_lowercase,
            stem: r.stem,
            train,
        })
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = args.model.config(args.seed)?;
    let trees = load_input(&args.input)?;
    let (params, report) = train(&trees, &config)?;
    create_dir(&args.out_dir)?;
    params.save(args.out_dir.join("checkpoint.json"))?;
    report.write_jsonl(args.out_dir.join("report.jsonl"))?;
    write_file(
        &args.out_dir.join("config.json"),
        &to_json(&ResolvedConfig::new(&args.input, &config)?),
    )?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &TrainReport) {
    match report.best_record() {
        Some(best) => outln!(
            "{} epochs ({:?}); best epoch {}: val loss {:.6}, val accuracy {:.4}",
            report.epochs.len(),
            report.stop_reason,
            best.epoch,
            best.val_loss,
            best.val_accuracy
        ),
        None => outln!("no epochs run; checkpoint holds the initial parameters"),
    }
}

#[derive(Serialize)]
struct EvaluationReport {
    model: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<Metrics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sweep: Vec<SweepRow>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let params = Params::load(&args.checkpoint)?;
    let trees = load_input(&args.input)?;
    let model = evaluate(&params, &trees)?;
    let baseline = if args.baseline {
        Some(evaluate(&SumBaseline, &trees)?)
    } else {
        None
    };
    let sweep = if args.corrupt_fraction.is_empty() {
        Vec::new()
    } else {
        if args.sweep_seeds == 0 {
            return Err(Error::Config("--sweep-seeds must be at least 1".into()));
        }
        let seeds: Vec<u64> = (0..args.sweep_seeds).map(|k| args.seed.wrapping_add(k)).collect();
        sensitivity_sweep(&params, &trees, &args.corrupt_fraction, &seeds)?
    };
    if let Some(path) = &args.sweep_csv {
        write_sweep_csv(path, &sweep)?;
    }
    let json = to_json(&EvaluationReport { model, baseline, sweep });
    if let Some(path) = &args.out {
        write_file(path, &json)?;
    }
    out!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct AugmentSummary {
    input_trees: usize,
    output_trees: usize,
    reorder_eligible: usize,
    insert_eligible: usize,
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let trees = read_corpus(&args.trees)?;
    let (reorder, insert) = args.augment.flags();
    let config = AugmentConfig {
        reorder,
        insert,
        corruption_fraction: args.corrupt_fraction,
        seed: args.seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let out = augment_epoch(&trees, &config, &mut rng)?;
    if let Some(path) = &args.out {
        write_corpus(path, &out)?;
    }
    out!(
        "{}",
        to_json(&AugmentSummary {
            input_trees: trees.len(),
            output_trees: out.len(),
            reorder_eligible: trees.iter().filter(|t| !reorder_candidates(t).is_empty()).count(),
            insert_eligible: trees.iter().filter(|t| !insert_candidates(t).is_empty()).count(),
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct InspectReport {
    variant: Variant,
    relation_weights: RelationWeightReport,
    hierarchy_weights: HierarchyWeightReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    salience: Vec<DocumentSalience>,
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let params = Params::load(&args.checkpoint)?;
    let weights = relation_weights(&params)?;
    let salience = match &args.trees {
        Some(path) => read_corpus(path)?
            .par_iter()
            .map(|t| {
                Ok(DocumentSalience {
                    doc_id: t.doc_id.clone(),
                    records: salience_from_weights(t, &weights)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None if args.out_html.is_some() => {
            return Err(Error::Config("--out-html needs --trees".into()));
        }
        None => Vec::new(),
    };
    if let Some(path) = &args.out_html {
        write_file(path, &salience_html(&salience))?;
    }
    let json = to_json(&InspectReport {
        variant: params.variant(),
        hierarchy_weights: hierarchy_weights(&params)?,
        relation_weights: weights,
        salience,
    });
    if let Some(path) = &args.out_json {
        write_file(path, &json)?;
    }
    out!("{json}");
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let trees = generate(&SynthConfig {
        task: args.task,
        n_trees: args.n_trees,
        depth: args.depth,
        seed: args.seed,
    })?;
    write_corpus(&args.out, &trees)?;
    if let Some(path) = &args.labels_out {
        let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
        w.write_record(["doc_id", "label"]).map_err(csv_error(path))?;
        for t in &trees {
            let label = t.label.expect("synthetic trees are labeled").to_string();
            w.write_record([t.doc_id.as_str(), label.as_str()])
                .map_err(csv_error(path))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &args.lexicon_out {
        write_file(path, &synth_lexicon_tsv())?;
    }
    let positive = trees.iter().filter(|t| t.label == Some(1)).count();
    outln!(
        "{} {} trees ({positive} positive) written to {}",
        trees.len(),
        args.task,
        args.out.display()
    );
    Ok(())
}

/// Hyperparameter lists. Defaults are the tuning ranges for memory size,
/// learning rate and regularization strength.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: Option<Vec<usize>>,
    pub learning_rate: Option<Vec<f64>>,
    pub l2: Option<Vec<f64>>,
    pub dropout: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n: Some(vec![10, 20, 50]),
            learning_rate: Some(vec![1e-5, 1e-4, 1e-3]),
            l2: Some(vec![0.001, 0.01, 0.05]),
            dropout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub n: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub dropout: f64,
}

impl GridCell {
    /// Shortest round-trip spelling of each value, e.g. `1e-5`, `0.001`.
    fn key(&self) -> [String; 4] {
        [
            self.n.to_string(),
            format!("{:?}", self.learning_rate),
            format!("{:?}", self.l2),
            format!("{:?}", self.dropout),
        ]
    }
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<GridSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Cells in row-major order: n, then learning rate, then l2, then
    /// dropout. Missing lists take the single value from `model`.
    pub fn cells(&self, model: &ModelArgs) -> Result<Vec<GridCell>> {
        fn list<T: Copy>(v: &Option<Vec<T>>, fallback: T, name: &str) -> Result<Vec<T>> {
            match v {
                Some(v) if v.is_empty() => Err(Error::Config(format!("grid list {name} is empty"))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![fallback]),
            }
        }
        let mut cells = Vec::new();
        for &n in &list(&self.n, model.n, "n")? {
            for &learning_rate in &list(&self.learning_rate, model.lr, "learning_rate")? {
                for &l2 in &list(&self.l2, model.l2, "l2")? {
                    for &dropout in &list(&self.dropout, model.dropout, "dropout")? {
                        cells.push(GridCell {
                            n,
                            learning_rate,
                            l2,
                            dropout,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

const GRID_HEADER: [&str; 10] = [
    "n",
    "learning_rate",
    "l2",
    "dropout",
    "status",
    "epochs_run",
    "best_epoch",
    "val_loss",
    "val_accuracy",
    "error",
];

fn grid_row(cell: &GridCell, outcome: &Result<TrainReport>) -> Vec<String> {
    let mut row = cell.key().to_vec();
    match outcome {
        Ok(report) => {
            let best = report.best_record();
            row.push("ok".into());
            row.push(report.epochs.len().to_string());
            row.push(report.best_epoch.to_string());
            row.push(best.map(|b| b.val_loss.to_string()).unwrap_or_default());
            row.push(best.map(|b| b.val_accuracy.to_string()).unwrap_or_default());
            row.push(String::new());
        }
        Err(e) => {
            row.extend([
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
            row.push(e.to_string());
        }
    }
    row
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let spec = match &args.grid {
        Some(path) => GridSpec::load(path)?,
        None => GridSpec::default(),
    };
    let cells = spec.cells(&args.model)?;
    let base = args.model.config(args.seed)?;
    for cell in &cells {
        TrainConfig {
            n: cell.n,
            learning_rate: cell.learning_rate,
            l2: cell.l2,
            dropout: cell.dropout,
            ..base.clone()
        }
        .validate()?;
    }
    let trees = load_input(&args.input)?;
    // The same split for every cell.
    let (fit_set, val_set) = split_train_val(&trees, base.val_fraction, base.seed)?;

    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("grid.csv");
    let mut done: HashSet<[String; 4]> = HashSet::new();
    let mut rows_present = false;
    if path.exists() {
        let mut reader = csv::Reader::from_path(&path).map_err(csv_error(&path))?;
        for record in reader.records() {
            let record = record.map_err(csv_error(&path))?;
            if record.len() != GRID_HEADER.len() {
                return Err(Error::Data(format!("{}: malformed row", path.display())));
            }
            done.insert([0, 1, 2, 3].map(|i| record[i].to_string()));
            rows_present = true;
        }
    }
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    if !rows_present && fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true) {
        writer.write_record(GRID_HEADER).map_err(csv_error(&path))?;
    }
    let todo: Vec<GridCell> = cells.iter().filter(|c| !done.contains(&c.key())).copied().collect();
    log::info!(
        "{} of {} grid cells already done",
        cells.len() - todo.len(),
        cells.len()
    );

    // Cells run in parallel chunks; rows are appended in grid order after
    // each chunk so an interrupted run leaves a prefix of the final file.
    let chunk = rayon::current_num_threads().max(1);
    for batch in todo.chunks(chunk) {
        let outcomes: Vec<Result<TrainReport>> = batch
            .par_iter()
            .map(|cell| {
                let config = TrainConfig {
                    n: cell.n,
                    learning_rate: cell.learning_rate,
                    l2: cell.l2,
                    dropout: cell.dropout,
                    ..base.clone()
                };
                crate::train::fit(&fit_set, &val_set, &config).map(|(_, report)| report)
            })
            .collect();
        for (cell, outcome) in batch.iter().zip(&outcomes) {
            if let Err(e) = outcome {
                log::warn!("grid cell {:?} failed: {e}", cell);
            }
            writer.write_record(grid_row(cell, outcome)).map_err(csv_error(&path))?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
    }
    drop(writer);
    report_best(&path)
}

fn report_best(path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let mut best: Option<(f64, csv::StringRecord)> = None;
    let mut total = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error(path))?;
        total += 1;
        if let Ok(loss) = record[7].parse::<f64>() {
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, record));
            }
        }
    }
    match best {
        Some((loss, r)) => outln!(
            "{total} rows in {}; best by val loss: n={} lr={} l2={} dropout={} (val loss {loss}, val accuracy {})",
            path.display(),
            &r[0],
            &r[1],
            &r[2],
            &r[3],
            &r[8]
        ),
        None => outln!("{total} rows in {}; no cell trained successfully", path.display()),
    }
    Ok(())
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "xmmp", version, about = "Multimodal ICU mortality model with relevance attribution")]
pub struct Cli {
    /// INI configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More console logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with planted ground-truth features.
    Synth(SynthArgs),
    /// Build a dataset from raw events, notes, vitals and labels.
    Preprocess(PreprocessArgs),
    /// Train on one cross-validation fold and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on its test split (or every record).
    Eval(EvalArgs),
    /// Write per-record attributions and cohort feature rankings.
    Explain(ExplainArgs),
    /// Perturbation faithfulness curves for a set of explainers.
    Perturb(PerturbArgs),
    /// Markdown summary of a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantingArg {
    AllThree,
    Complementary,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub records: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub label_noise: f64,
    #[arg(long, value_enum, default_value_t = PlantingArg::AllThree)]
    pub planting: PlantingArg,
    #[arg(long, default_value_t = 24)]
    pub hours: usize,
    #[arg(long, default_value_t = 24)]
    pub vital_steps: usize,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// `stay_id,time,feature,value` CSV.
    #[arg(long)]
    pub events: PathBuf,
    /// One JSON note per line: `stay_id`, `time`, `text`.
    #[arg(long)]
    pub notes: PathBuf,
    /// `stay_id,channel,time,value` CSV.
    #[arg(long)]
    pub vitals: PathBuf,
    /// `stay_id,label` CSV.
    #[arg(long)]
    pub labels: PathBuf,
    /// Normal-value table (JSON); the built-in table by default.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `dataset.json`, or the file itself.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for cross-validation.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Comma-separated subset of events, notes, vitals.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Also run k-fold cross-validation over every seed.
    #[arg(long)]
    pub cv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecordSet {
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct ModelInput {
    /// Checkpoint file, or the training output directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset; defaults to the one the model was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; defaults to the model's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RecordSet::Test)]
    pub records: RecordSet,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: ModelInput,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: ModelInput,
    /// Comma-separated explainer names, or `all`.
    #[arg(long)]
    pub explainers: Option<String>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub min_token_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long)]
    pub explainers: Option<String>,
    /// Comma-separated removal fractions in [0, 1).
    #[arg(long)]
    pub fractions: Option<String>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory with perturbation (and optionally explain, eval) outputs.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Records shown as heat tables.
    #[arg(long, default_value_t = 3)]
    pub records: usize,
}

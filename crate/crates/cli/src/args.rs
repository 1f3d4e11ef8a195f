use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use deepfld::cohort::ShiftPreset;

#[derive(Parser, Debug)]
#[command(name = "deepfld", version, about = "Multi-modal fatty-liver prediction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort directory.
    Generate(GenerateArgs),
    /// Descriptive statistics and Pearson ranking of every indicator.
    Analyze(AnalyzeArgs),
    /// Two-stage indicator selection with a trained metadata model.
    Select(SelectArgs),
    /// Train on a whole cohort and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a whole cohort.
    Eval(EvalArgs),
    /// Stratified K-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Evaluate a checkpoint on another cohort without fine-tuning.
    Migrate(MigrateArgs),
    /// Occlusion saliency maps for chosen participants.
    Explain(ExplainArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortPreset {
    /// 676 participants with faces, 23 indicators and 8 distractors.
    Default,
    /// No faces.
    Metadata,
    /// 23 indicators, 7 of them informative, no faces.
    Planted7,
    /// Default with a quarter of the facial severity signal.
    Reduced,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftArg {
    None,
    Year2020,
    Severe,
}

impl From<ShiftArg> for ShiftPreset {
    fn from(s: ShiftArg) -> Self {
        match s {
            ShiftArg::None => ShiftPreset::None,
            ShiftArg::Year2020 => ShiftPreset::Year2020,
            ShiftArg::Severe => ShiftPreset::Severe,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Generation config JSON (the `config.json` of an earlier cohort works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CohortPreset::Default)]
    pub preset: CohortPreset,
    /// Number of participants, overriding the config.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub year_tag: Option<String>,
    #[arg(long, value_enum)]
    pub shift_preset: Option<ShiftArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Indicators kept by the first selection stage.
    #[arg(long, default_value_t = 21)]
    pub stage1_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Checkpoint of a metadata model trained on the augmented first stage.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 21)]
    pub stage1_k: usize,
    #[arg(long, default_value_t = 100)]
    pub explain_samples: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Input combination: modality plus indicator set.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Metadata3,
    Metadata8,
    Image,
    Multimodal3,
    Multimodal8,
    /// Metadata with the indicators of `--indicators` or the augmented first stage of `--selection`.
    Metadata,
    /// Faces plus the indicators of `--indicators` or `--selection`.
    Multimodal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthArg {
    Paper,
    Desk,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

/// Model and training settings shared by `train` and `crossval`.
#[derive(Args, Debug, Serialize)]
pub struct HyperArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Multimodal8)]
    pub mode: ModeArg,
    /// Comma-separated indicator list, overriding the mode's set.
    #[arg(long, value_delimiter = ',')]
    pub indicators: Option<Vec<String>>,
    /// `selection.json` or `stage1.json` supplying the indicator set.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Network widths: `paper` as published, `desk` for a single CPU core.
    #[arg(long, value_enum, default_value_t = WidthArg::Paper)]
    pub width: WidthArg,
    /// Defaults to 40 at paper width and 20 at desk width.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long)]
    pub no_aux: bool,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    /// Independent K-fold partitions.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct MigrateArgs {
    /// Target cohort.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Shift applied to the target cohort's images before evaluation.
    #[arg(long, value_enum, default_value_t = ShiftArg::None)]
    pub shift_preset: ShiftArg,
    /// Year tag of the shifted cohort; defaults to the target's own tag.
    #[arg(long)]
    pub year_tag: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated participant ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}

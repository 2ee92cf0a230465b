//! Command-line surface. Every invocation type is also serde-serialisable so a
//! resolved command can be stored in its run manifest and executed again.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use factorlens_core::elicitation::ElicitationConfig;
use factorlens_core::em::{EmConfig, FitAblation};
use factorlens_core::inference::{InferAblation, DEFAULT_SAMPLES};
use factorlens_core::oracle::{RemoteConfig, SAMPLING_TEMPERATURE};
use factorlens_core::probing::DEFAULT_BUDGET;
use factorlens_core::verbal::DEFAULT_HALF_WIDTH;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "factorlens", version, about = "Distil an oracle's decisions into an editable logistic model")]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Globals {
    /// Artifact store directory.
    #[arg(long, global = true, env = "FACTORLENS_STORE", default_value = "factorlens-store")]
    pub store: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Seed for probe planning, EM and synthetic ground truths.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Timestamp stamped on every artifact of this run (RFC 3339); defaults
    /// to the current time and is recorded in the manifest.
    #[arg(long, global = true)]
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write a random synthetic ground truth and its placeholder factor set.
    Synth(SynthArgs),
    /// Elicit and verify a factor set from the oracle.
    Elicit(ElicitArgs),
    /// Query the oracle on planned configurations.
    Probe(ProbeArgs),
    /// Fit the decision model and verbal map by EM.
    Fit(FitArgs),
    /// Probability for a condition, marginalising uncertain factors.
    Infer(InferArgs),
    /// Exclude a factor, calibrate a ratio, or revert an edit.
    Edit(EditArgs),
    /// Ordinal-consistency audit of a dataset.
    Audit(AuditArgs),
    /// Human-readable model card.
    Report(ReportArgs),
    /// Re-execute a run manifest and compare output hashes.
    Replay(ReplayArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Elicit(_) => "elicit",
            Command::Probe(_) => "probe",
            Command::Fit(_) => "fit",
            Command::Infer(_) => "infer",
            Command::Edit(_) => "edit",
            Command::Audit(_) => "audit",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Remote,
    Replay,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Synthetic oracle specification (JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Replay cache (JSON lines of transcripts).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = RemoteConfig::default().base_url)]
    pub base_url: String,
    #[arg(long = "model-name", default_value_t = RemoteConfig::default().model)]
    pub model_name: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value_t = RemoteConfig::default().auth_env)]
    pub auth_env: String,
    #[arg(long, default_value_t = RemoteConfig::default().timeout_secs)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = RemoteConfig::default().retries)]
    pub retries: u32,
    /// Append every oracle exchange to this replay cache.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2.0)]
    pub max_beta: f64,
    #[arg(long, default_value_t = 3)]
    pub max_interactions: usize,
    /// Adjacent-level corruption rate of verbal answers.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    /// Pairwise correlation of sampled completions.
    #[arg(long, default_value_t = 0.0)]
    pub correlation: f64,
    /// Where to write the specification.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ElicitArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub positive: String,
    #[arg(long)]
    pub negative: String,
    /// Sample condition for the coverage check; repeatable.
    #[arg(long = "condition")]
    pub conditions: Vec<String>,
    #[arg(long, default_value_t = ElicitationConfig::default().statements_per_batch)]
    pub statements_per_batch: usize,
    #[arg(long, default_value_t = ElicitationConfig::default().retry_cap)]
    pub retry_cap: usize,
    #[arg(long, default_value_t = ElicitationConfig::default().max_factors)]
    pub max_factors: usize,
    #[arg(long, default_value_t = ElicitationConfig::default().iteration_cap)]
    pub iteration_cap: usize,
    #[arg(long, default_value_t = ElicitationConfig::default().coverage_conditions)]
    pub coverage_conditions: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Factor set reference (hash, prefix or `latest`).
    #[arg(long, default_value = "latest")]
    pub factors: String,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitAblationArg {
    None,
    NoEm,
    NoInter,
}

impl From<FitAblationArg> for FitAblation {
    fn from(a: FitAblationArg) -> Self {
        match a {
            FitAblationArg::None => FitAblation::None,
            FitAblationArg::NoEm => FitAblation::NoEm,
            FitAblationArg::NoInter => FitAblation::NoInter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, default_value = "latest")]
    pub dataset: String,
    /// Prior variance of the model logit.
    #[arg(long, default_value_t = EmConfig::default().sigma_theta_sq)]
    pub sigma_theta_sq: f64,
    /// Prior variance of the verbal logit.
    #[arg(long, default_value_t = EmConfig::default().sigma_phi_sq, conflicts_with = "precision_ratio")]
    pub sigma_phi_sq: f64,
    /// τ_θ/τ_φ; sets the verbal variance to ratio × model variance.
    #[arg(long)]
    pub precision_ratio: Option<f64>,
    #[arg(long, default_value_t = EmConfig::default().lambda1)]
    pub lambda1: f64,
    #[arg(long, default_value_t = EmConfig::default().lambda2)]
    pub lambda2: f64,
    /// Margin-ranking loss weight.
    #[arg(long, default_value_t = EmConfig::default().lambda_mr)]
    pub lambda_mr: f64,
    #[arg(long, default_value_t = EmConfig::default().margin_eps)]
    pub margin_eps: f64,
    #[arg(long, default_value_t = EmConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = EmConfig::default().inner_steps)]
    pub inner_steps: usize,
    #[arg(long, default_value_t = EmConfig::default().convergence_tol)]
    pub convergence_tol: f64,
    #[arg(long, default_value_t = EmConfig::default().max_iters)]
    pub max_iters: usize,
    /// Half-width of the clipping window around each canonical map value.
    #[arg(long, default_value_t = DEFAULT_HALF_WIDTH)]
    pub bounds_half_width: f64,
    #[arg(long, value_enum, default_value_t = FitAblationArg::None)]
    pub ablation: FitAblationArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferAblationArg {
    None,
    NoMc,
}

impl From<InferAblationArg> for InferAblation {
    fn from(a: InferAblationArg) -> Self {
        match a {
            InferAblationArg::None => InferAblation::None,
            InferAblationArg::NoMc => InferAblation::NoMc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["condition", "observed"])))]
pub struct InferArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value = "latest")]
    pub model: String,
    /// Free-text condition; the oracle determines each factor.
    #[arg(long)]
    pub condition: Option<String>,
    /// Known bits, `?` for uncertain, e.g. `1,?,0,?`.
    #[arg(long)]
    pub observed: Option<String>,
    /// Monte Carlo samples.
    #[arg(long = "t", default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = SAMPLING_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, value_enum, default_value_t = InferAblationArg::None)]
    pub ablation: InferAblationArg,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(clap::ArgGroup::new("action").required(true).args(["exclude", "ratio", "revert"])))]
pub struct EditArgs {
    #[arg(long, default_value = "latest")]
    pub model: String,
    /// Factor index to remove exactly.
    #[arg(long)]
    pub exclude: Option<usize>,
    /// `i j rho`: make AME_j = rho · AME_i.
    #[arg(long, num_args = 3, value_names = ["I", "J", "RHO"])]
    pub ratio: Option<Vec<String>>,
    /// Edit id whose pre-edit snapshot to restore.
    #[arg(long)]
    pub revert: Option<String>,
    #[arg(long, default_value = "cli")]
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AuditArgs {
    #[arg(long, default_value = "latest")]
    pub dataset: String,
    /// Per-factor orientation toward the positive outcome, e.g. `+,-,+`;
    /// all positive when omitted.
    #[arg(long)]
    pub polarity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long, default_value = "latest")]
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long, default_value = "latest")]
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Environment variable holding the shared API token; unset disables auth.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Origin allowed by CORS; any when omitted.
    #[arg(long)]
    pub allowed_origin: Option<String>,
}

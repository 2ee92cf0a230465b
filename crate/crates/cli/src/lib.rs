//! The `factorlens` command-line pipeline. Each command resolves its store
//! references to full hashes, runs at one fixed timestamp, and records a
//! [`RunManifest`] so the run can be replayed and checked hash for hash.

pub mod args;
mod render;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use factorlens_core::editing::{ame_report, calibrate_ratio, exclude_factor, revert, EditMeta, RatioConstraint, Weighting};
use factorlens_core::elicitation::{elicit_factor_set, ElicitationConfig, FactorSetRecord};
use factorlens_core::em::{fit, EmConfig, TrainedModel};
use factorlens_core::inference::{infer, infer_partition, ConditionPartition, InferOptions};
use factorlens_core::oracle::{
    placeholder_factor_set, random_ground_truth, Clock, OracleBackend, OracleClient, RemoteConfig, SyntheticOracleSpec,
};
use factorlens_core::probing::{
    collect_dataset, ordinal_consistency_audit, plan_configurations, BehavioralDataset, CollectOptions, Polarity,
};
use factorlens_core::store::{content_hash, Artifact, ArtifactKind, ArtifactRef, Store, TranscriptLog};
use factorlens_core::verbal::{canonical_map, MonotoneBounds};
use factorlens_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error as ThisError;

use args::*;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("replay of run {manifest} diverged: {detail}")]
    ReplayMismatch { manifest: String, detail: String },
}

impl CliError {
    /// 1 usage, 2 validation, 3 backend, 4 solver non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Backend(_) | Error::Protocol { .. }) => 3,
            CliError::Core(Error::NonConvergence { .. } | Error::Numerical { .. }) => 4,
            CliError::Core(_) | CliError::Io { .. } | CliError::ReplayMismatch { .. } => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Everything needed to re-execute a run and check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The invocation with every store reference resolved to a full hash.
    pub config: Command,
    pub seed: u64,
    /// Timestamp every artifact of the run was stamped with.
    pub now: DateTime<Utc>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: u64,
}

impl Artifact for RunManifest {
    const KIND: ArtifactKind = ArtifactKind::RunManifest;

    fn validate(&self) -> factorlens_core::Result<()> {
        if self.command != self.config.name() {
            return Err(Error::Validation(format!(
                "manifest names command {} but records a {} invocation",
                self.command,
                self.config.name()
            )));
        }
        for (k, h) in self.inputs.iter().chain(&self.outputs) {
            if h.is_empty() || !h.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(Error::Validation(format!("hash for {k} is not hex: {h:?}")));
            }
        }
        Ok(())
    }
}

/// Result of one command, ready for printing.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub json: Value,
    pub text: String,
    /// Hash of the stored manifest; `None` for `serve`.
    pub manifest: Option<String>,
}

struct Ctx<'a> {
    store: &'a Store,
    seed: u64,
    now: DateTime<Utc>,
}

impl Ctx<'_> {
    fn clock(&self) -> Clock {
        Clock::Fixed(self.now)
    }
}

#[derive(Default)]
struct Output {
    json: Value,
    text: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub fn run(globals: &Globals, command: &Command) -> Result<RunReport> {
    let store = Store::open(&globals.store)?;
    if let Command::Serve(a) = command {
        serve(&store, a, globals.now)?;
        return Ok(RunReport {
            json: Value::Null,
            text: String::new(),
            manifest: None,
        });
    }
    let ctx = Ctx {
        store: &store,
        seed: globals.seed,
        now: globals.now.unwrap_or_else(Utc::now),
    };
    let started = Instant::now();
    let (resolved, out) = match command {
        Command::Replay(a) => replay(&ctx, a)?,
        other => execute(&ctx, other)?,
    };
    let manifest = RunManifest {
        command: resolved.name().to_string(),
        config: resolved,
        seed: ctx.seed,
        now: ctx.now,
        inputs: out.inputs,
        outputs: out.outputs,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    let hash = store.save(&manifest, ctx.now)?;
    Ok(RunReport {
        json: out.json,
        text: out.text,
        manifest: Some(hash),
    })
}

/// Runs a non-replay command, returning it with references resolved.
fn execute(ctx: &Ctx, command: &Command) -> Result<(Command, Output)> {
    let mut cmd = command.clone();
    let out = match &mut cmd {
        Command::Synth(a) => synth(ctx, a)?,
        Command::Elicit(a) => elicit(ctx, a)?,
        Command::Probe(a) => probe(ctx, a)?,
        Command::Fit(a) => fit_cmd(ctx, a)?,
        Command::Infer(a) => infer_cmd(ctx, a)?,
        Command::Edit(a) => edit(ctx, a)?,
        Command::Audit(a) => audit(ctx, a)?,
        Command::Report(a) => report(ctx, a)?,
        Command::Replay(_) | Command::Serve(_) => {
            return Err(CliError::Usage(format!("{} cannot be nested", cmd.name())))
        }
    };
    Ok((cmd, out))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Resolves `reference` in place to a full hash and records it as an input.
fn resolve_input(ctx: &Ctx, kind: ArtifactKind, reference: &mut String, inputs: &mut BTreeMap<String, String>) -> Result<ArtifactRef> {
    let r: ArtifactRef = reference.parse()?;
    let hash = ctx.store.resolve(kind, &r)?;
    inputs.insert(kind.as_str().to_string(), hash.clone());
    *reference = hash.clone();
    Ok(ArtifactRef::Hash(hash))
}

fn backend_of(b: &BackendArgs, inputs: &mut BTreeMap<String, String>) -> Result<OracleBackend> {
    let kind = b
        .backend
        .ok_or_else(|| CliError::Usage("--backend remote|replay|synthetic is required".into()))?;
    Ok(match kind {
        BackendArg::Synthetic => {
            let path = b
                .spec
                .as_ref()
                .ok_or_else(|| CliError::Usage("--backend synthetic needs --spec FILE".into()))?;
            inputs.insert("oracle_spec".into(), file_hash(path)?);
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let spec: SyntheticOracleSpec = serde_json::from_str(&text).map_err(Error::from)?;
            OracleBackend::Synthetic(spec)
        }
        BackendArg::Replay => {
            let path = b
                .cache
                .as_ref()
                .ok_or_else(|| CliError::Usage("--backend replay needs --cache FILE".into()))?;
            if !path.is_file() {
                return Err(CliError::Core(Error::Backend(format!(
                    "replay cache {} does not exist",
                    path.display()
                ))));
            }
            inputs.insert("replay_cache".into(), file_hash(path)?);
            OracleBackend::Replay {
                cache_path: path.clone(),
            }
        }
        BackendArg::Remote => OracleBackend::Remote(RemoteConfig {
            base_url: b.base_url.clone(),
            model: b.model_name.clone(),
            auth_env: b.auth_env.clone(),
            timeout_secs: b.timeout_secs,
            retries: b.retries,
        }),
    })
}

fn oracle(ctx: &Ctx, b: &BackendArgs, inputs: &mut BTreeMap<String, String>) -> Result<OracleClient> {
    let backend = backend_of(b, inputs)?;
    let mut client = OracleClient::from_backend(&backend, ctx.clock())?;
    if let Some(path) = &b.record {
        client = client.recording_to(path);
    }
    Ok(client)
}

fn save_transcripts(ctx: &Ctx, oracle: &OracleClient, outputs: &mut BTreeMap<String, String>) -> Result<()> {
    if oracle.transcript_count() > 0 {
        let log = TranscriptLog {
            transcripts: oracle.transcripts(),
        };
        outputs.insert("transcripts".into(), ctx.store.save(&log, ctx.now)?);
    }
    Ok(())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<Output> {
    let truth = random_ground_truth(a.n, a.max_beta, a.max_interactions, ctx.seed)?;
    let mut spec = SyntheticOracleSpec::new(truth, canonical_map(), ctx.seed);
    spec.label_noise = a.label_noise;
    spec.completion_correlation = a.correlation;
    // constructing the backend validates the spec
    OracleBackend::Synthetic(spec.clone()).connect()?;
    let text = serde_json::to_string_pretty(&spec).map_err(Error::from)?;
    fs::write(&a.out, text).map_err(|source| CliError::Io {
        path: a.out.clone(),
        source,
    })?;
    let record = FactorSetRecord {
        factor_set: placeholder_factor_set(a.n)?,
        statements: None,
        report: None,
    };
    let fs_hash = ctx.store.save(&record, ctx.now)?;
    let mut out = Output {
        json: json!({"spec": spec, "factor_set": fs_hash}),
        text: render::synth(&spec, &a.out, &fs_hash),
        ..Default::default()
    };
    out.outputs.insert("oracle_spec".into(), file_hash(&a.out)?);
    out.outputs.insert("factor_set".into(), fs_hash);
    Ok(out)
}

fn elicit(ctx: &Ctx, a: &ElicitArgs) -> Result<Output> {
    let mut out = Output::default();
    let oracle = oracle(ctx, &a.backend, &mut out.inputs)?;
    let cfg = ElicitationConfig {
        statements_per_batch: a.statements_per_batch,
        retry_cap: a.retry_cap,
        max_factors: a.max_factors,
        iteration_cap: a.iteration_cap,
        coverage_conditions: a.coverage_conditions,
    };
    cfg.validate()?;
    let result = elicit_factor_set(&oracle, &a.scenario, &a.positive, &a.negative, &a.conditions, &cfg);
    // transcripts are kept even when elicitation fails
    save_transcripts(ctx, &oracle, &mut out.outputs)?;
    let record = result?;
    let hash = ctx.store.save(&record, ctx.now)?;
    out.text = render::factor_set(&record, &hash);
    out.json = json!({"factor_set": hash, "record": record});
    out.outputs.insert("factor_set".into(), hash);
    Ok(out)
}

fn probe(ctx: &Ctx, a: &mut ProbeArgs) -> Result<Output> {
    let mut out = Output::default();
    let r = resolve_input(ctx, ArtifactKind::FactorSet, &mut a.factors, &mut out.inputs)?;
    let record: FactorSetRecord = ctx.store.load(&r)?;
    let oracle = oracle(ctx, &a.backend, &mut out.inputs)?;
    let plan = plan_configurations(record.factor_set.len(), a.budget, ctx.seed)?;
    let opts = CollectOptions {
        parallelism: a.parallelism,
        clock: ctx.clock(),
        ..Default::default()
    };
    let result = collect_dataset(&oracle, &record.factor_set, &plan, opts);
    save_transcripts(ctx, &oracle, &mut out.outputs)?;
    let ds = result?;
    let hash = ctx.store.save(&ds, ctx.now)?;
    out.text = render::dataset(&ds, &hash);
    out.json = json!({
        "dataset": hash,
        "observations": ds.len(),
        "plan_mode": ds.provenance.plan_mode,
    });
    out.outputs.insert("dataset".into(), hash);
    Ok(out)
}

pub fn em_config(a: &FitArgs, seed: u64) -> Result<EmConfig> {
    if !(a.bounds_half_width > 0.0 && a.bounds_half_width < 0.5) {
        return Err(CliError::Core(Error::Config(format!(
            "bounds half-width {} must lie in (0, 0.5)",
            a.bounds_half_width
        ))));
    }
    let sigma_phi_sq = match a.precision_ratio {
        Some(r) => r * a.sigma_theta_sq,
        None => a.sigma_phi_sq,
    };
    let cfg = EmConfig {
        sigma_theta_sq: a.sigma_theta_sq,
        sigma_phi_sq,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        lambda_mr: a.lambda_mr,
        margin_eps: a.margin_eps,
        learning_rate: a.learning_rate,
        inner_steps: a.inner_steps,
        convergence_tol: a.convergence_tol,
        max_iters: a.max_iters,
        bounds: MonotoneBounds::centered(a.bounds_half_width),
        seed,
        ablation: a.ablation.into(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn fit_cmd(ctx: &Ctx, a: &mut FitArgs) -> Result<Output> {
    let mut out = Output::default();
    let cfg = em_config(a, ctx.seed)?;
    let r = resolve_input(ctx, ArtifactKind::Dataset, &mut a.dataset, &mut out.inputs)?;
    let ds: BehavioralDataset = ctx.store.load(&r)?;
    let model = fit(&ds, &cfg)?;
    let hash = ctx.store.save(&model, ctx.now)?;
    out.text = render::fit(&model, &hash);
    out.json = json!({
        "model": hash,
        "diagnostics": model.diagnostics,
        "map": model.map.values(),
    });
    out.outputs.insert("model".into(), hash);
    Ok(out)
}

fn parse_observed(s: &str, n: usize) -> Result<Vec<Option<bool>>> {
    let bits: Vec<Option<bool>> = s
        .split(',')
        .map(|t| match t.trim() {
            "1" => Ok(Some(true)),
            "0" => Ok(Some(false)),
            "?" => Ok(None),
            other => Err(CliError::Usage(format!("observed entry {other:?} is not 0, 1 or ?"))),
        })
        .collect::<Result<_>>()?;
    if bits.len() != n {
        return Err(CliError::Core(Error::Dimension {
            expected: n,
            actual: bits.len(),
        }));
    }
    Ok(bits)
}

fn infer_cmd(ctx: &Ctx, a: &mut InferArgs) -> Result<Output> {
    let mut out = Output::default();
    let r = resolve_input(ctx, ArtifactKind::Model, &mut a.model, &mut out.inputs)?;
    let model: TrainedModel = ctx.store.load(&r)?;
    let opts = InferOptions {
        samples: a.samples,
        temperature: a.temperature,
        ablation: a.ablation.into(),
    };
    if opts.samples == 0 {
        return Err(CliError::Usage("--t must be at least 1".into()));
    }
    let oracle = oracle(ctx, &a.backend, &mut out.inputs)?;
    let result = match (&a.observed, &a.condition) {
        (Some(obs), _) => {
            let part = ConditionPartition::from_bits(&parse_observed(obs, model.n())?, a.condition.clone().unwrap_or_default())?;
            infer_partition(&model, &oracle, &part, &opts)
        }
        (None, Some(text)) => infer(&model, &oracle, text, &opts),
        (None, None) => return Err(CliError::Usage("give --condition or --observed".into())),
    };
    save_transcripts(ctx, &oracle, &mut out.outputs)?;
    let result = result?;
    out.outputs.insert("inference".into(), content_hash(&result)?);
    out.text = render::inference(&result);
    out.json = serde_json::to_value(&result).map_err(Error::from)?;
    Ok(out)
}

fn edit(ctx: &Ctx, a: &mut EditArgs) -> Result<Output> {
    let mut out = Output::default();
    let r = resolve_input(ctx, ArtifactKind::Model, &mut a.model, &mut out.inputs)?;
    let model: TrainedModel = ctx.store.load(&r)?;
    let meta = EditMeta {
        author: a.author.clone(),
        timestamp: ctx.now,
    };
    let (after, record) = if let Some(k) = a.exclude {
        exclude_factor(&model, k, &meta)?
    } else if let Some(v) = &a.ratio {
        let bad = |what: &str| CliError::Usage(format!("--ratio {what} is not a valid number"));
        let anchor = v[0].parse().map_err(|_| bad("i"))?;
        let target = v[1].parse().map_err(|_| bad("j"))?;
        let rho = v[2].parse().map_err(|_| bad("rho"))?;
        calibrate_ratio(&model, RatioConstraint { anchor, target, rho }, &Weighting::Uniform, &meta)?
    } else if let Some(id) = &a.revert {
        revert(&model, id, &meta)?
    } else {
        return Err(CliError::Usage("give --exclude, --ratio or --revert".into()));
    };
    let edit_hash = ctx.store.save(&record, ctx.now)?;
    let model_hash = ctx.store.save(&after, ctx.now)?;
    let before = ame_report(&model.params, &Weighting::Uniform)?.values;
    let ames_after = ame_report(&after.params, &Weighting::Uniform)?.values;
    out.text = render::edit(&record, &before, &ames_after, &model_hash);
    out.json = json!({
        "model": model_hash,
        "edit": record,
        "ames_before": before,
        "ames_after": ames_after,
    });
    out.outputs.insert("edit".into(), edit_hash);
    out.outputs.insert("model".into(), model_hash);
    Ok(out)
}

fn parse_polarity(s: Option<&str>, n: usize) -> Result<Vec<Polarity>> {
    let Some(s) = s else {
        return Ok(vec![Polarity::Positive; n]);
    };
    let p: Vec<Polarity> = s
        .split(',')
        .map(|t| match t.trim() {
            "+" | "1" => Ok(Polarity::Positive),
            "-" | "-1" => Ok(Polarity::Negative),
            other => Err(CliError::Usage(format!("polarity entry {other:?} is not + or -"))),
        })
        .collect::<Result<_>>()?;
    if p.len() != n {
        return Err(CliError::Core(Error::Dimension {
            expected: n,
            actual: p.len(),
        }));
    }
    Ok(p)
}

fn audit(ctx: &Ctx, a: &mut AuditArgs) -> Result<Output> {
    let mut out = Output::default();
    let r = resolve_input(ctx, ArtifactKind::Dataset, &mut a.dataset, &mut out.inputs)?;
    let ds: BehavioralDataset = ctx.store.load(&r)?;
    let polarity = parse_polarity(a.polarity.as_deref(), ds.n())?;
    let report = ordinal_consistency_audit(&ds, &polarity)?;
    out.outputs.insert("audit".into(), content_hash(&report)?);
    out.text = render::audit(&report);
    out.json = serde_json::to_value(&report).map_err(Error::from)?;
    Ok(out)
}

fn report(ctx: &Ctx, a: &mut ReportArgs) -> Result<Output> {
    let mut out = Output::default();
    let r = resolve_input(ctx, ArtifactKind::Model, &mut a.model, &mut out.inputs)?;
    let hash = a.model.clone();
    let model: TrainedModel = ctx.store.load(&r)?;
    let ames = ame_report(&model.params, &Weighting::Uniform)?;
    let version = content_hash(&model.params)?[..16].to_string();
    let card = factorlens_service::ModelCard::build(hash.clone(), &model, version, None, None);
    out.json = json!({"card": card, "ames": ames});
    out.outputs.insert("report".into(), content_hash(&out.json)?);
    out.text = render::model_card(&model, &hash, &ames.values);
    Ok(out)
}

fn replay(ctx: &Ctx, a: &ReplayArgs) -> Result<(Command, Output)> {
    let r: ArtifactRef = a.manifest.parse()?;
    let hash = ctx.store.resolve(ArtifactKind::RunManifest, &r)?;
    let original: RunManifest = ctx.store.load(&ArtifactRef::Hash(hash.clone()))?;
    let again = Ctx {
        store: ctx.store,
        seed: original.seed,
        now: original.now,
    };
    let (_, out) = match &original.config {
        Command::Replay(inner) => replay(&again, inner)?,
        other => execute(&again, other)?,
    };
    let mut problems = Vec::new();
    if out.inputs != original.inputs {
        problems.push(format!("inputs changed: recorded {:?}, now {:?}", original.inputs, out.inputs));
    }
    if out.outputs != original.outputs {
        problems.push(format!("outputs differ: recorded {:?}, now {:?}", original.outputs, out.outputs));
    }
    if !problems.is_empty() {
        return Err(CliError::ReplayMismatch {
            manifest: hash,
            detail: problems.join("; "),
        });
    }
    let mut inputs = BTreeMap::new();
    inputs.insert("run_manifest".into(), hash.clone());
    let resolved = Command::Replay(ReplayArgs { manifest: hash.clone() });
    Ok((
        resolved,
        Output {
            json: json!({"manifest": hash, "command": original.command, "identical": true, "outputs": out.outputs}),
            text: render::replay(&hash, &original.command, &out.outputs),
            inputs,
            outputs: out.outputs,
        },
    ))
}

fn serve(store: &Store, a: &ServeArgs, now: Option<DateTime<Utc>>) -> Result<()> {
    let backend = match a.backend.backend {
        Some(_) => Some(backend_of(&a.backend, &mut BTreeMap::new())?),
        None => None,
    };
    let token = match &a.token_env {
        Some(var) => Some(
            std::env::var(var).map_err(|_| CliError::Usage(format!("environment variable {var} is not set")))?,
        ),
        None => None,
    };
    let config = factorlens_service::ServiceConfig {
        backend,
        clock: now.map_or(Clock::System, Clock::Fixed),
        token,
        allowed_origin: a.allowed_origin.clone(),
        ..Default::default()
    };
    let state = factorlens_service::AppState::new(store.clone(), config)?;
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: store.root().to_path_buf(),
        source,
    })?;
    eprintln!("serving {} on http://{}/api/v1", store.root().display(), a.addr);
    rt.block_on(factorlens_service::serve(a.addr, state))
        .map_err(|source| CliError::Io {
            path: store.root().to_path_buf(),
            source,
        })
}

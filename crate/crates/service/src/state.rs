//! Shared server state: the store, per-model pending previews, and the
//! successor links that make optimistic concurrency work across immutable
//! model artifacts.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use factorlens_core::editing::{
    ame_report, calibrate_ratio, exclude_factor, revert, set_params, EditMeta, EditRecord,
    RatioConstraint, Weighting,
};
use factorlens_core::em::TrainedModel;
use factorlens_core::factor::DecisionParams;
use factorlens_core::inference::{infer_partition, marginalize, ConditionPartition, InferAblation, InferOptions};
use factorlens_core::oracle::{Clock, OracleBackend, OracleClient};
use factorlens_core::store::{content_hash, ArtifactKind, ArtifactRef, Store};
use factorlens_core::Error;

use crate::dto::*;
use crate::error::ApiError;

/// Short content hash of a parameter vector; every response carries one.
pub fn params_version(params: &DecisionParams) -> Result<String, ApiError> {
    Ok(content_hash(params)?[..16].to_string())
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Backend for live sampling in partial what-if queries.
    pub backend: Option<OracleBackend>,
    pub clock: Clock,
    /// Author recorded on edits whose request names none.
    pub default_author: String,
    /// Shared bearer token; `None` disables the check.
    pub token: Option<String>,
    /// Origin allowed by CORS; `None` allows any.
    pub allowed_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            backend: None,
            clock: Clock::System,
            default_author: "workbench".into(),
            token: None,
            allowed_origin: None,
        }
    }
}

struct Pending {
    base_version: String,
    model: TrainedModel,
    record: EditRecord,
}

#[derive(Default)]
struct Sessions {
    /// Model hash to the model an edit turned it into.
    successor: HashMap<String, String>,
    pending: HashMap<String, Pending>,
}

pub struct AppState {
    store: Store,
    pub(crate) config: ServiceConfig,
    sessions: Mutex<Sessions>,
}

impl AppState {
    /// Opens the store and rebuilds successor links from the edit logs the
    /// stored models carry.
    pub fn new(store: Store, config: ServiceConfig) -> Result<Self, Error> {
        let mut successor = HashMap::new();
        for hash in store.list(ArtifactKind::Model)? {
            let m: TrainedModel = store.load(&ArtifactRef::Hash(hash.clone()))?;
            let mut parent = m;
            let Some(last) = parent.edits.pop() else {
                continue;
            };
            parent.params = last.pre;
            let parent_hash = content_hash(&parent)?;
            if store.exists(ArtifactKind::Model, &parent_hash) {
                successor.insert(parent_hash, hash);
            }
        }
        Ok(AppState {
            store,
            config,
            sessions: Mutex::new(Sessions {
                successor,
                pending: HashMap::new(),
            }),
        })
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, Sessions> {
        self.sessions.lock().expect("session state poisoned")
    }

    fn resolve(&self, model_ref: &str) -> Result<String, ApiError> {
        let r: ArtifactRef = model_ref
            .parse()
            .map_err(|_| ApiError::not_found(format!("no model {model_ref:?}")))?;
        self.store
            .resolve(ArtifactKind::Model, &r)
            .map_err(ApiError::from)
    }

    fn load(&self, model_ref: &str) -> Result<(String, TrainedModel), ApiError> {
        let hash = self.resolve(model_ref)?;
        let model = self.store.load(&ArtifactRef::Hash(hash.clone()))?;
        Ok((hash, model))
    }

    fn meta(&self, author: Option<String>) -> EditMeta {
        EditMeta {
            author: author.unwrap_or_else(|| self.config.default_author.clone()),
            timestamp: self.config.clock.now(),
        }
    }

    /// Parameters for read endpoints plus the version they carry.
    fn params_for(
        &self,
        hash: &str,
        model: &TrainedModel,
        source: ParamSource,
    ) -> Result<(DecisionParams, String), ApiError> {
        if source == ParamSource::Working {
            if let Some(p) = self.sessions().pending.get(hash) {
                let params = p.model.params.clone();
                let v = params_version(&params)?;
                return Ok((params, v));
            }
        }
        Ok((model.params.clone(), params_version(&model.params)?))
    }

    /// Conflict unless `hash` is still the head of its lineage at `version`.
    fn check_head(
        sessions: &Sessions,
        hash: &str,
        model: &TrainedModel,
        version: &str,
    ) -> Result<(), ApiError> {
        let current = params_version(&model.params)?;
        if let Some(next) = sessions.successor.get(hash) {
            return Err(ApiError::conflict(
                format!("model {hash} was superseded by {next}"),
                Some(current),
            ));
        }
        if version != current {
            return Err(ApiError::conflict(
                format!("edit composed against version {version}, current is {current}"),
                Some(current),
            ));
        }
        Ok(())
    }

    pub fn list_models(&self) -> Result<Vec<ModelSummary>, ApiError> {
        let superseded: HashSet<String> = self.sessions().successor.keys().cloned().collect();
        let mut out = Vec::new();
        for hash in self.store.list(ArtifactKind::Model)? {
            let env = self
                .store
                .load_envelope::<TrainedModel>(&ArtifactRef::Hash(hash.clone()))?;
            let m = env.payload;
            out.push(ModelSummary {
                version: params_version(&m.params)?,
                created_at: env.created_at,
                scenario: m.factor_set.scenario.clone(),
                factors: m.factor_set.factors.iter().map(|f| f.name.clone()).collect(),
                edits: m.edits.len(),
                head: !superseded.contains(&hash),
                hash,
            });
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.hash.cmp(&b.hash)));
        Ok(out)
    }

    pub fn model_card(&self, model_ref: &str) -> Result<ModelCard, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        let sessions = self.sessions();
        let pending = match sessions.pending.get(&hash) {
            Some(p) => Some(PendingSummary {
                version: params_version(&p.model.params)?,
                edit: p.record.clone(),
            }),
            None => None,
        };
        let next = sessions.successor.get(&hash).cloned();
        let version = params_version(&model.params)?;
        Ok(ModelCard::build(hash, &model, version, next, pending))
    }

    pub fn ames(&self, model_ref: &str, source: ParamSource) -> Result<AmeResponse, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        let (params, version) = self.params_for(&hash, &model, source)?;
        Ok(AmeResponse {
            version,
            source,
            factors: model.factor_set.factors.iter().map(|f| f.name.clone()).collect(),
            report: ame_report(&params, &Weighting::Uniform)?,
        })
    }

    pub fn what_if(&self, model_ref: &str, req: WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        let (params, version) = self.params_for(&hash, &model, req.params)?;
        let n = model.n();
        let mut working = model.clone();
        working.params = params;
        let result = match (req.config, req.observed) {
            (Some(bits), None) => {
                let c = config_from_bits(&bits, n)?;
                let part = ConditionPartition::from_bits(
                    &c.to_bits().into_iter().map(Some).collect::<Vec<_>>(),
                    req.condition,
                )?;
                marginalize(&working, &[c], &part)?
            }
            (None, Some(observed)) => {
                if observed.len() != n {
                    return Err(ApiError::invalid(format!(
                        "observed has {} entries, model has {n} factors",
                        observed.len()
                    )));
                }
                let bits = observed
                    .iter()
                    .map(|b| match b {
                        None => Ok(None),
                        Some(0) => Ok(Some(false)),
                        Some(1) => Ok(Some(true)),
                        Some(other) => Err(ApiError::invalid(format!("observed bit {other} is not 0 or 1"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let part = ConditionPartition::from_bits(&bits, req.condition)?;
                let defaults = InferOptions::default();
                let opts = InferOptions {
                    samples: req.samples.unwrap_or(defaults.samples),
                    temperature: req.temperature.unwrap_or(defaults.temperature),
                    ablation: if req.no_mc { InferAblation::NoMc } else { InferAblation::None },
                };
                if opts.samples == 0 {
                    return Err(ApiError::invalid("samples must be at least 1"));
                }
                let backend = self
                    .config
                    .backend
                    .as_ref()
                    .ok_or_else(|| ApiError::backend("no oracle backend is configured for sampling"))?;
                let oracle = OracleClient::from_backend(backend, self.config.clock)
                    .map_err(|e| ApiError::backend(e.to_string()))?;
                infer_partition(&working, &oracle, &part, &opts)?
            }
            _ => return Err(ApiError::invalid("give exactly one of config or observed")),
        };
        Ok(WhatIfResponse {
            version,
            source: req.params,
            probability: result.probability,
            standard_error: result.standard_error,
            samples_used: result.samples_used,
            samples: result.samples.iter().map(bits_of).collect(),
            per_sample_probs: result.per_sample_probs,
        })
    }

    /// Computes an edit on a working copy and parks it as the pending
    /// preview, replacing any earlier one. Nothing is persisted.
    pub fn preview(&self, model_ref: &str, req: PreviewRequest) -> Result<PreviewResponse, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        Self::check_head(&self.sessions(), &hash, &model, &req.version)?;
        let meta = self.meta(req.author);
        // solving may take a while, so it runs without the session lock
        let (after, record) = match req.edit {
            EditRequest::Exclude { factor } => exclude_factor(&model, factor, &meta)?,
            EditRequest::Ratio {
                anchor,
                target,
                rho,
                weighting,
            } => calibrate_ratio(&model, RatioConstraint { anchor, target, rho }, &weighting, &meta)?,
            EditRequest::ManualSet { params } => set_params(&model, params, &meta)?,
        };
        let ames_before = ame_report(&model.params, &Weighting::Uniform)?.values;
        let ames_after = ame_report(&after.params, &Weighting::Uniform)?.values;
        let version = params_version(&after.params)?;
        let mut sessions = self.sessions();
        Self::check_head(&sessions, &hash, &model, &req.version)?;
        sessions.pending.insert(
            hash,
            Pending {
                base_version: req.version.clone(),
                model: after,
                record: record.clone(),
            },
        );
        Ok(PreviewResponse {
            base_version: req.version,
            version,
            edit: record,
            ames_before,
            ames_after,
        })
    }

    pub fn discard_preview(&self, model_ref: &str) -> Result<bool, ApiError> {
        let hash = self.resolve(model_ref)?;
        Ok(self.sessions().pending.remove(&hash).is_some())
    }

    /// Persists the pending preview as a new model plus its edit record.
    pub fn commit(&self, model_ref: &str, req: CommitRequest) -> Result<CommitResponse, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        let mut sessions = self.sessions();
        Self::check_head(&sessions, &hash, &model, &req.version)?;
        let pending = sessions
            .pending
            .get(&hash)
            .ok_or_else(|| ApiError::invalid("there is no pending preview to commit"))?;
        if pending.base_version != req.version {
            return Err(ApiError::conflict(
                "the pending preview was composed against another version",
                Some(pending.base_version.clone()),
            ));
        }
        let pending = sessions.pending.remove(&hash).expect("checked above");
        self.persist(&mut sessions, hash, pending.model, pending.record)
    }

    /// Restores the snapshot taken before `edit_id` and commits that at once.
    pub fn revert(
        &self,
        model_ref: &str,
        edit_id: &str,
        req: CommitRequest,
    ) -> Result<CommitResponse, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        let mut sessions = self.sessions();
        Self::check_head(&sessions, &hash, &model, &req.version)?;
        if !model.edits.iter().any(|e| e.id == edit_id) {
            return Err(ApiError::not_found(format!("no edit {edit_id} on model {hash}")));
        }
        let (after, record) = revert(&model, edit_id, &self.meta(req.author))?;
        sessions.pending.remove(&hash);
        self.persist(&mut sessions, hash, after, record)
    }

    fn persist(
        &self,
        sessions: &mut Sessions,
        parent: String,
        model: TrainedModel,
        record: EditRecord,
    ) -> Result<CommitResponse, ApiError> {
        let now = self.config.clock.now();
        self.store.save(&record, now)?;
        let child = self.store.save(&model, now)?;
        sessions.successor.insert(parent, child.clone());
        Ok(CommitResponse {
            model: child,
            version: params_version(&model.params)?,
            edit: record,
        })
    }

    pub fn edit_log(&self, model_ref: &str) -> Result<EditLogResponse, ApiError> {
        let (hash, model) = self.load(model_ref)?;
        Ok(EditLogResponse {
            version: params_version(&model.params)?,
            head: model.edits.last().map(|e| e.id.clone()),
            edits: model.edits,
            model: hash,
        })
    }
}

//! Request and response bodies. Configurations travel as arrays of 0/1.

use chrono::{DateTime, Utc};
use factorlens_core::editing::{AmeReport, EditRecord, Weighting};
use factorlens_core::em::{EmConfig, FitDiagnostics, TrainedModel};
use factorlens_core::factor::{DecisionParams, FactorConfiguration, FactorSet};
use factorlens_core::verbal::VerbalLevel;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub fn bits_of(c: &FactorConfiguration) -> Vec<u8> {
    c.to_bits().into_iter().map(u8::from).collect()
}

pub fn config_from_bits(bits: &[u8], n: usize) -> Result<FactorConfiguration, ApiError> {
    if bits.len() != n {
        return Err(ApiError::invalid(format!(
            "configuration has {} bits, model has {n} factors",
            bits.len()
        )));
    }
    let bools = bits
        .iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(ApiError::invalid(format!("configuration bit {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FactorConfiguration::from_bits(&bools)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub hash: String,
    pub version: String,
    pub created_at: DateTime<Utc>,
    pub scenario: String,
    pub factors: Vec<String>,
    pub edits: usize,
    /// False once an edit committed through this service superseded it.
    pub head: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MapEntry {
    pub ordinal: u8,
    pub level: String,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PendingSummary {
    pub version: String,
    pub edit: EditRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelCard {
    pub hash: String,
    pub version: String,
    pub head: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<String>,
    pub factor_set: FactorSet,
    pub params: DecisionParams,
    pub map: Vec<MapEntry>,
    pub diagnostics: FitDiagnostics,
    pub em_config: EmConfig,
    pub dataset_hash: String,
    pub edits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingSummary>,
}

impl ModelCard {
    pub fn build(
        hash: String,
        model: &TrainedModel,
        version: String,
        superseded_by: Option<String>,
        pending: Option<PendingSummary>,
    ) -> Self {
        let map = VerbalLevel::ALL
            .iter()
            .map(|&l| MapEntry {
                ordinal: l.ordinal(),
                level: l.label().to_string(),
                value: model.map.prob(l),
            })
            .collect();
        ModelCard {
            hash,
            version,
            head: superseded_by.is_none(),
            superseded_by,
            factor_set: model.factor_set.clone(),
            params: model.params.clone(),
            map,
            diagnostics: model.diagnostics.clone(),
            em_config: model.em_config.clone(),
            dataset_hash: model.dataset_hash.clone(),
            edits: model.edits.len(),
            pending,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    /// Pending preview if there is one, else the committed parameters.
    #[default]
    Working,
    Committed,
}

#[derive(Debug, Default, Deserialize)]
pub struct AmeQuery {
    #[serde(default)]
    pub params: ParamSource,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AmeResponse {
    pub version: String,
    pub source: ParamSource,
    pub factors: Vec<String>,
    #[serde(flatten)]
    pub report: AmeReport,
}

#[derive(Debug, Deserialize)]
pub struct WhatIfRequest {
    /// A full configuration; mutually exclusive with `observed`.
    pub config: Option<Vec<u8>>,
    /// Partial configuration, `null` for uncertain factors.
    pub observed: Option<Vec<Option<u8>>>,
    pub samples: Option<usize>,
    pub temperature: Option<f64>,
    #[serde(default)]
    pub condition: String,
    #[serde(default)]
    pub no_mc: bool,
    #[serde(default)]
    pub params: ParamSource,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub version: String,
    pub source: ParamSource,
    pub probability: f64,
    pub standard_error: Option<f64>,
    pub samples_used: usize,
    pub samples: Vec<Vec<u8>>,
    pub per_sample_probs: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EditRequest {
    Exclude {
        factor: usize,
    },
    Ratio {
        anchor: usize,
        target: usize,
        rho: f64,
        #[serde(default = "uniform")]
        weighting: Weighting,
    },
    ManualSet {
        params: DecisionParams,
    },
}

fn uniform() -> Weighting {
    Weighting::Uniform
}

#[derive(Debug, Deserialize)]
pub struct PreviewRequest {
    /// Version of the committed parameters the edit was composed against.
    pub version: String,
    pub edit: EditRequest,
    pub author: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub base_version: String,
    pub version: String,
    pub edit: EditRecord,
    pub ames_before: Vec<f64>,
    pub ames_after: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct CommitRequest {
    pub version: String,
    pub author: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommitResponse {
    /// Store hash of the model the edit produced.
    pub model: String,
    pub version: String,
    pub edit: EditRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditLogResponse {
    pub model: String,
    pub version: String,
    pub head: Option<String>,
    pub edits: Vec<EditRecord>,
}

//! Access to the probabilistic oracle.
//!
//! A transport turns a rendered prompt into raw response text. The
//! [`OracleClient`] on top of it owns parsing, the single corrective
//! reprompt, and the transcript audit log, so every backend behaves the same
//! way from the caller's point of view.

mod noise;
mod remote;
mod replay;
mod synthetic;
pub mod templates;

use std::fmt;
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factor::{FactorConfiguration, FactorSet};
use crate::verbal::VerbalLevel;

pub use noise::corrupt_labels;
pub use remote::{RemoteConfig, RemoteTransport};
pub use replay::{append_transcript, ReplayTransport};
pub use synthetic::{
    placeholder_factor_set, random_ground_truth, SyntheticOracleSpec, SyntheticTransport,
};
pub use templates::{FactorDraft, Request, TemplateId};

/// Default temperature for behavioural probing.
pub const PROBE_TEMPERATURE: f64 = 0.0;
/// Default temperature for joint completion sampling.
pub const SAMPLING_TEMPERATURE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Replay,
    Synthetic,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Remote => "remote",
            BackendKind::Replay => "replay",
            BackendKind::Synthetic => "synthetic",
        })
    }
}

/// Backend selection; exactly one kind's configuration is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleBackend {
    Remote(RemoteConfig),
    Replay { cache_path: PathBuf },
    Synthetic(SyntheticOracleSpec),
}

impl OracleBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            OracleBackend::Remote(_) => BackendKind::Remote,
            OracleBackend::Replay { .. } => BackendKind::Replay,
            OracleBackend::Synthetic(_) => BackendKind::Synthetic,
        }
    }

    pub fn connect(&self) -> Result<Box<dyn OracleTransport>> {
        Ok(match self {
            OracleBackend::Remote(cfg) => Box::new(RemoteTransport::new(cfg.clone())?),
            OracleBackend::Replay { cache_path } => Box::new(ReplayTransport::open(cache_path)?),
            OracleBackend::Synthetic(spec) => Box::new(SyntheticTransport::new(spec.clone())?),
        })
    }
}

/// Produces raw response text for a rendered request.
pub trait OracleTransport: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn respond(&self, request: &Request<'_>, prompt: &str, temperature: f64) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Audit record of one oracle exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTranscript {
    pub template: TemplateId,
    pub prompt_hash: String,
    pub prompt: String,
    pub response: String,
    /// `None` when the response did not parse.
    pub parsed: Option<serde_json::Value>,
    pub temperature: f64,
    pub timestamp: DateTime<Utc>,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// What a condition says about one factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Determination {
    One,
    Zero,
    Unknown,
}

impl Determination {
    pub fn as_bit(self) -> Option<bool> {
        match self {
            Determination::One => Some(true),
            Determination::Zero => Some(false),
            Determination::Unknown => None,
        }
    }

    pub fn response_text(self) -> &'static str {
        match self {
            Determination::One => "1",
            Determination::Zero => "0",
            Determination::Unknown => "unknown",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_lowercase().as_str() {
            "1" => Some(Determination::One),
            "0" => Some(Determination::Zero),
            "unknown" => Some(Determination::Unknown),
            _ => None,
        }
    }
}

pub fn parse_config_bits(raw: &str, n: usize) -> Option<FactorConfiguration> {
    let bits: String = raw.trim().chars().filter(|c| !matches!(c, ' ' | ',')).collect();
    if bits.len() != n {
        return None;
    }
    bits.parse().ok()
}

/// Parsing, reprompting, and transcript capture on top of a transport.
pub struct OracleClient {
    transport: Box<dyn OracleTransport>,
    clock: Clock,
    log: Mutex<Vec<OracleTranscript>>,
    record_to: Option<PathBuf>,
    record_lock: Mutex<()>,
}

impl fmt::Debug for OracleClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleClient")
            .field("kind", &self.transport.kind())
            .field("clock", &self.clock)
            .finish()
    }
}

impl OracleClient {
    pub fn new(transport: Box<dyn OracleTransport>, clock: Clock) -> Self {
        OracleClient {
            transport,
            clock,
            log: Mutex::new(Vec::new()),
            record_to: None,
            record_lock: Mutex::new(()),
        }
    }

    pub fn from_backend(backend: &OracleBackend, clock: Clock) -> Result<Self> {
        Ok(Self::new(backend.connect()?, clock))
    }

    /// Also append every transcript to a replay cache file.
    pub fn recording_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.record_to = Some(path.into());
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.transport.kind()
    }

    pub fn transcripts(&self) -> Vec<OracleTranscript> {
        self.log.lock().expect("transcript log poisoned").clone()
    }

    pub fn transcript_count(&self) -> usize {
        self.log.lock().expect("transcript log poisoned").len()
    }

    fn record(&self, t: OracleTranscript) -> Result<()> {
        if let Some(path) = &self.record_to {
            let _guard = self.record_lock.lock().expect("record lock poisoned");
            append_transcript(path, &t)?;
        }
        self.log.lock().expect("transcript log poisoned").push(t);
        Ok(())
    }

    /// Sends a request and parses the answer, reprompting once on failure.
    pub fn ask<T, P>(&self, request: Request<'_>, temperature: f64, parse: P) -> Result<T>
    where
        T: Serialize,
        P: Fn(&str) -> Option<T>,
    {
        let template = request.template();
        let base = request.render();
        let mut prompt = base.clone();
        let mut last_raw = String::new();
        for attempt in 0..2 {
            if attempt == 1 {
                prompt = format!("{base}{}", templates::reprompt_suffix(template));
            }
            let raw = self.transport.respond(&request, &prompt, temperature)?;
            let parsed = parse(&raw);
            self.record(OracleTranscript {
                template,
                prompt_hash: prompt_hash(&prompt),
                prompt: prompt.clone(),
                response: raw.clone(),
                parsed: parsed.as_ref().map(|v| serde_json::to_value(v)).transpose()?,
                temperature,
                timestamp: self.clock.now(),
            })?;
            if let Some(v) = parsed {
                return Ok(v);
            }
            last_raw = raw;
        }
        Err(Error::Protocol {
            template: template.to_string(),
            raw: last_raw,
        })
    }

    /// Verbal likelihood of the positive outcome for one configuration.
    pub fn elicit_verbal(
        &self,
        factors: &FactorSet,
        config: &FactorConfiguration,
    ) -> Result<VerbalLevel> {
        config.check_len(factors.len())?;
        self.ask(
            Request::VerbalProbability { factors, config },
            PROBE_TEMPERATURE,
            |raw| raw.parse::<VerbalLevel>().ok(),
        )
    }

    /// One joint completion of the unobserved factors.
    pub fn sample_completion(
        &self,
        factors: &FactorSet,
        observed: &[Option<bool>],
        condition: &str,
        temperature: f64,
        sample_index: usize,
    ) -> Result<FactorConfiguration> {
        let n = factors.len();
        if observed.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: observed.len(),
            });
        }
        self.ask(
            Request::MonteCarloSampling {
                factors,
                observed,
                condition,
                sample_index,
            },
            temperature,
            |raw| {
                parse_config_bits(raw, n).filter(|c| {
                    observed
                        .iter()
                        .enumerate()
                        .all(|(j, o)| o.is_none_or(|b| c.get(j) == b))
                })
            },
        )
    }

    pub fn determine_factor(
        &self,
        factors: &FactorSet,
        factor: usize,
        condition: &str,
    ) -> Result<Determination> {
        if factor >= factors.len() {
            return Err(Error::Validation(format!("factor {factor} out of range")));
        }
        self.ask(
            Request::FactorDetermination {
                factors,
                factor,
                condition,
            },
            PROBE_TEMPERATURE,
            Determination::parse,
        )
        .map_err(|e| match e {
            Error::Protocol { template, raw } => Error::Protocol {
                template: format!("{template} (factor {})", factors.factors[factor].name),
                raw,
            },
            other => other,
        })
    }
}

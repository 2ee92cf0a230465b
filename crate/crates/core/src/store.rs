//! Content-addressed artifact store on the local filesystem.
//!
//! Every artifact is written as a JSON envelope holding a schema version, its
//! kind, the SHA-256 of the payload's JSON, a creation time, and the payload.
//! The creation time is outside the hash, so saving an identical payload twice
//! yields the same address and leaves the first file untouched.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::editing::EditRecord;
use crate::elicitation::FactorSetRecord;
use crate::em::TrainedModel;
use crate::error::{Error, Result};
use crate::oracle::OracleTranscript;
use crate::probing::BehavioralDataset;

pub const SCHEMA_VERSION: u32 = 1;
const LATEST: &str = "latest";

/// SHA-256 (hex) of a value's JSON serialisation.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    FactorSet,
    Dataset,
    Model,
    Edit,
    Transcripts,
    RunManifest,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::FactorSet,
        ArtifactKind::Dataset,
        ArtifactKind::Model,
        ArtifactKind::Edit,
        ArtifactKind::Transcripts,
        ArtifactKind::RunManifest,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            ArtifactKind::FactorSet => "factors",
            ArtifactKind::Dataset => "datasets",
            ArtifactKind::Model => "models",
            ArtifactKind::Edit => "edits",
            ArtifactKind::Transcripts => "transcripts",
            ArtifactKind::RunManifest => "runs",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::FactorSet => "factor_set",
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::Model => "model",
            ArtifactKind::Edit => "edit",
            ArtifactKind::Transcripts => "transcripts",
            ArtifactKind::RunManifest => "run_manifest",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A payload type the store knows how to persist.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: ArtifactKind;

    /// Type invariants checked before writing and after reading.
    fn validate(&self) -> Result<()>;
}

impl Artifact for FactorSetRecord {
    const KIND: ArtifactKind = ArtifactKind::FactorSet;

    fn validate(&self) -> Result<()> {
        self.factor_set.validate()
    }
}

impl Artifact for BehavioralDataset {
    const KIND: ArtifactKind = ArtifactKind::Dataset;

    fn validate(&self) -> Result<()> {
        BehavioralDataset::validate(self)
    }
}

impl Artifact for TrainedModel {
    const KIND: ArtifactKind = ArtifactKind::Model;

    fn validate(&self) -> Result<()> {
        TrainedModel::validate(self)
    }
}

impl Artifact for EditRecord {
    const KIND: ArtifactKind = ArtifactKind::Edit;

    fn validate(&self) -> Result<()> {
        self.pre.validate()?;
        self.post.validate()?;
        if self.pre.n() != self.post.n() {
            return Err(Error::Validation("edit changes the factor count".into()));
        }
        Ok(())
    }
}

/// Oracle exchanges of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLog {
    pub transcripts: Vec<OracleTranscript>,
}

impl Artifact for TranscriptLog {
    const KIND: ArtifactKind = ArtifactKind::Transcripts;

    fn validate(&self) -> Result<()> {
        for t in &self.transcripts {
            if t.prompt_hash != crate::oracle::prompt_hash(&t.prompt) {
                return Err(Error::Validation(format!(
                    "transcript prompt hash {} does not match its prompt",
                    t.prompt_hash
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub kind: ArtifactKind,
    pub content_hash: String,
    pub created_at: DateTime<Utc>,
    pub payload: T,
}

/// Which stored artifact to load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArtifactRef {
    Latest,
    /// A full hash or an unambiguous prefix of one.
    Hash(String),
}

impl FromStr for ArtifactRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == LATEST {
            return Ok(ArtifactRef::Latest);
        }
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Validation(format!(
                "artifact reference {s:?} is neither `latest` nor a hex hash"
            )));
        }
        Ok(ArtifactRef::Hash(s.to_ascii_lowercase()))
    }
}

impl fmt::Display for ArtifactRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArtifactRef::Latest => f.write_str(LATEST),
            ArtifactRef::Hash(h) => f.write_str(h),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens a store, creating its directory layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for kind in ArtifactKind::ALL {
            fs::create_dir_all(root.join(kind.dir_name()))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, kind: ArtifactKind) -> PathBuf {
        self.root.join(kind.dir_name())
    }

    pub fn path_of(&self, kind: ArtifactKind, hash: &str) -> PathBuf {
        self.dir(kind).join(format!("{hash}.json"))
    }

    /// Writes an artifact and moves the kind's `latest` pointer to it.
    pub fn save<A: Artifact>(&self, artifact: &A, created_at: DateTime<Utc>) -> Result<String> {
        artifact.validate()?;
        let hash = content_hash(artifact)?;
        let path = self.path_of(A::KIND, &hash);
        if !path.exists() {
            let env = Envelope {
                schema_version: SCHEMA_VERSION,
                kind: A::KIND,
                content_hash: hash.clone(),
                created_at,
                payload: artifact,
            };
            write_atomic(&path, &serde_json::to_vec_pretty(&env)?)?;
        }
        write_atomic(&self.dir(A::KIND).join(LATEST), hash.as_bytes())?;
        Ok(hash)
    }

    pub fn latest_hash(&self, kind: ArtifactKind) -> Result<String> {
        let p = self.dir(kind).join(LATEST);
        match fs::read_to_string(&p) {
            Ok(s) => Ok(s.trim().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::NotFound(format!("no {kind} has been saved yet")))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Full hashes of every stored artifact of a kind, sorted.
    pub fn list(&self, kind: ArtifactKind) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.dir(kind))? {
            let name = entry?.file_name();
            if let Some(h) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                out.push(h.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn resolve(&self, kind: ArtifactKind, r: &ArtifactRef) -> Result<String> {
        match r {
            ArtifactRef::Latest => self.latest_hash(kind),
            ArtifactRef::Hash(h) => {
                if self.path_of(kind, h).exists() {
                    return Ok(h.clone());
                }
                let matches: Vec<String> = self
                    .list(kind)?
                    .into_iter()
                    .filter(|x| x.starts_with(h.as_str()))
                    .collect();
                match matches.as_slice() {
                    [one] => Ok(one.clone()),
                    [] => Err(Error::NotFound(format!("{kind} {h}"))),
                    _ => Err(Error::Validation(format!("{kind} prefix {h} is ambiguous"))),
                }
            }
        }
    }

    pub fn exists(&self, kind: ArtifactKind, hash: &str) -> bool {
        self.path_of(kind, hash).exists()
    }

    pub fn load<A: Artifact>(&self, r: &ArtifactRef) -> Result<A> {
        Ok(self.load_envelope::<A>(r)?.payload)
    }

    pub fn load_envelope<A: Artifact>(&self, r: &ArtifactRef) -> Result<Envelope<A>> {
        let hash = self.resolve(A::KIND, r)?;
        let path = self.path_of(A::KIND, &hash);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("{} {hash}", A::KIND)),
            _ => e.into(),
        })?;
        decode_envelope(&text, &path.display().to_string())
    }
}

/// Parses and verifies an envelope: version, kind, invariants, and hash.
pub fn decode_envelope<A: Artifact>(text: &str, origin: &str) -> Result<Envelope<A>> {
    #[derive(Deserialize)]
    struct Header {
        schema_version: u32,
        kind: ArtifactKind,
    }
    let header: Header = serde_json::from_str(text)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::UnknownVersion {
            kind: A::KIND.to_string(),
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    if header.kind != A::KIND {
        return Err(Error::Validation(format!(
            "{origin} holds a {}, expected a {}",
            header.kind,
            A::KIND
        )));
    }
    let env: Envelope<A> = serde_json::from_str(text)
        .map_err(|e| Error::Validation(format!("{origin}: payload rejected: {e}")))?;
    env.payload.validate()?;
    let computed = content_hash(&env.payload)?;
    if computed != env.content_hash {
        return Err(Error::HashMismatch {
            path: origin.to_string(),
            expected: env.content_hash,
            computed,
        });
    }
    Ok(env)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

//! Append-only transcript cache and the transport that replays it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::templates::{Request, TemplateId};
use super::{prompt_hash, BackendKind, OracleTranscript, OracleTransport};
use crate::error::{Error, Result};

/// Appends one transcript as a JSON line.
pub fn append_transcript(path: &Path, transcript: &OracleTranscript) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(transcript)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

/// Answers only from recorded transcripts; a miss is an error.
#[derive(Debug)]
pub struct ReplayTransport {
    entries: HashMap<(TemplateId, String), String>,
}

impl ReplayTransport {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| {
            Error::Backend(format!("cannot open replay cache {}: {e}", path.display()))
        })?;
        let mut entries = HashMap::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: OracleTranscript = serde_json::from_str(&line).map_err(|e| {
                Error::Backend(format!(
                    "replay cache {} line {}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            // first recording wins so replays stay stable under re-recording
            entries
                .entry((t.template, t.prompt_hash.clone()))
                .or_insert(t.response);
        }
        Ok(ReplayTransport { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl OracleTransport for ReplayTransport {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn respond(&self, request: &Request<'_>, prompt: &str, _temperature: f64) -> Result<String> {
        let key = (request.template(), prompt_hash(prompt));
        self.entries.get(&key).cloned().ok_or_else(|| {
            Error::Backend(format!(
                "replay cache miss for {} prompt {}",
                key.0,
                &key.1[..12]
            ))
        })
    }
}

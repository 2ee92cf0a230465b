//! Chat-completion transport over HTTP+JSON.

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::templates::Request;
use super::{BackendKind, OracleTransport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_secs: u64,
    /// Extra attempts after the first transport failure.
    pub retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            auth_env: "FACTORLENS_API_KEY".into(),
            timeout_secs: 60,
            retries: 3,
        }
    }
}

pub struct RemoteTransport {
    config: RemoteConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl fmt::Debug for RemoteTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteTransport")
            .field("config", &self.config)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl RemoteTransport {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.base_url.trim().is_empty() {
            return Err(Error::Config("remote base URL is empty".into()));
        }
        let token = std::env::var(&config.auth_env).ok().filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        Ok(RemoteTransport {
            config,
            token,
            agent,
        })
    }

    fn once(&self, prompt: &str, temperature: f64) -> std::result::Result<String, String> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response carried no choices".to_string())
    }
}

impl OracleTransport for RemoteTransport {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn respond(&self, _request: &Request<'_>, prompt: &str, temperature: f64) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.once(prompt, temperature) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    last = e;
                    if attempt < self.config.retries {
                        thread::sleep(Duration::from_millis(200 << attempt.min(6)));
                    }
                }
            }
        }
        Err(Error::Backend(format!(
            "{} failed after {} attempts: {last}",
            self.config.base_url,
            self.config.retries + 1
        )))
    }
}

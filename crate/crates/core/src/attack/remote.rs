//! HTTP transcription backend: posts WAV bytes, pulls the transcript out of
//! the JSON response and checks it against the target phrase.

use std::path::Path;
use std::time::Duration;

use serde_json::Value;

use super::{QueryBudget, TranscriberBackend, TranscriberVerdict, DEFAULT_BUDGET};
use crate::audio::{write_wav, AudioBuffer};
use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    /// `POST` or `PUT`.
    pub method: String,
    /// Environment variable holding a bearer token, if the service needs one.
    pub auth_env: Option<String>,
    pub content_type: String,
    /// Dot-separated path into the JSON response (`results.0.transcript`);
    /// empty means the raw response body is the transcript.
    pub transcript_json_path: String,
    pub budget: usize,
    /// Per-word edit distance tolerated when matching the target phrase.
    pub max_word_edits: usize,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            method: "POST".into(),
            auth_env: None,
            content_type: "audio/wav".into(),
            transcript_json_path: String::new(),
            budget: DEFAULT_BUDGET,
            max_word_edits: 2,
            timeout: Duration::from_secs(30),
        }
    }
}

impl RemoteConfig {
    /// Parses `key = value` lines: `url`, `method`, `auth_env`,
    /// `content_type`, `transcript_json_path`, `budget`, `max_word_edits`,
    /// `timeout_s`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| param_err(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let count = || {
                value.parse::<usize>().map_err(|_| {
                    param_err(format!("line {}: `{value}` is not a count", lineno + 1))
                })
            };
            match key {
                "url" => cfg.url = value.to_string(),
                "method" => cfg.method = value.to_ascii_uppercase(),
                "auth_env" => cfg.auth_env = Some(value.to_string()).filter(|v| !v.is_empty()),
                "content_type" => cfg.content_type = value.to_string(),
                "transcript_json_path" => cfg.transcript_json_path = value.to_string(),
                "budget" => cfg.budget = count()?,
                "max_word_edits" => cfg.max_word_edits = count()?,
                "timeout_s" => cfg.timeout = Duration::from_secs(count()? as u64),
                other => {
                    return Err(param_err(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        if cfg.url.is_empty() {
            return Err(param_err("remote backend config needs a url"));
        }
        if cfg.method != "POST" && cfg.method != "PUT" {
            return Err(param_err(format!("unsupported method {}", cfg.method)));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn normalize_words(s: &str) -> Vec<String> {
    s.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Case- and punctuation-insensitive phrase match allowing up to
/// `max_word_edits` Levenshtein edits in each word.
pub fn phrase_matches(transcript: &str, target: &str, max_word_edits: usize) -> bool {
    let got = normalize_words(transcript);
    let want = normalize_words(target);
    got.len() == want.len()
        && got
            .iter()
            .zip(&want)
            .all(|(g, w)| strsim::levenshtein(g, w) <= max_word_edits)
}

fn extract_transcript(body: &str, path: &str) -> Result<String> {
    if path.is_empty() {
        return Ok(body.trim().to_string());
    }
    let mut node: &Value = &serde_json::from_str(body)
        .map_err(|e| Error::Backend(format!("response is not JSON: {e}")))?;
    for seg in path.split('.') {
        node = match node {
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
            Value::Object(map) => map.get(seg),
            _ => None,
        }
        .ok_or_else(|| Error::Backend(format!("response has no `{path}`")))?;
    }
    match node {
        Value::String(s) => Ok(s.clone()),
        other => Err(Error::Backend(format!("`{path}` is not a string: {other}"))),
    }
}

pub struct RemoteTranscriber {
    config: RemoteConfig,
    target_phrase: String,
    client: reqwest::blocking::Client,
    budget: QueryBudget,
}

impl RemoteTranscriber {
    pub fn new(config: RemoteConfig, target_phrase: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Backend(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            budget: QueryBudget::new(config.budget),
            config,
            target_phrase: target_phrase.into(),
            client,
        })
    }

    fn request(&self, audio: &AudioBuffer) -> Result<String> {
        let builder = match self.config.method.as_str() {
            "PUT" => self.client.put(&self.config.url),
            _ => self.client.post(&self.config.url),
        };
        let mut builder = builder
            .header(reqwest::header::CONTENT_TYPE, &self.config.content_type)
            .body(write_wav(audio));
        if let Some(var) = &self.config.auth_env {
            let token = std::env::var(var)
                .map_err(|_| Error::Backend(format!("auth variable {var} is not set")))?;
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| Error::Backend(format!("request failed: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Backend(format!("service answered {status}")));
        }
        response
            .text()
            .map_err(|e| Error::Backend(format!("cannot read response: {e}")))
    }
}

impl TranscriberBackend for RemoteTranscriber {
    fn transcribe(&mut self, audio: &AudioBuffer) -> Result<TranscriberVerdict> {
        self.budget.ensure_available()?;
        let body = self.request(audio)?;
        let transcript = extract_transcript(&body, &self.config.transcript_json_path)?;
        let query_index = self.budget.consume()?;
        Ok(TranscriberVerdict {
            accepted: phrase_matches(&transcript, &self.target_phrase, self.config.max_word_edits),
            transcript,
            query_index,
        })
    }

    fn budget(&self) -> usize {
        self.budget.limit()
    }

    fn queries_used(&self) -> usize {
        self.budget.used()
    }
}

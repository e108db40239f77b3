use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Completion, CompletionRequest, NoteProvider, PromptKind, ProviderError};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full URL of the chat completions endpoint.
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout: Duration::from_secs(120),
        }
    }
}

/// OpenAI-compatible chat completion client.
pub struct LiveProvider {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
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

impl LiveProvider {
    pub fn new(config: &LiveConfig) -> Result<LiveProvider, ProviderError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Auth(format!("environment variable {} is not set", config.api_key_env)))?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: &LiveConfig, api_key: String) -> LiveProvider {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        LiveProvider { agent, endpoint: config.endpoint.clone(), api_key }
    }
}

/// Splits a numbered or bulleted sentence list into one entry per line.
pub(crate) fn split_sentence_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let l = l.strip_prefix('.').or_else(|| l.strip_prefix(')')).unwrap_or(l);
            l.trim_start_matches(['-', '*', ' ']).trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

impl NoteProvider for LiveProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ProviderError> {
        let mut body = json!({
            "model": request.params.model_name,
            "temperature": request.params.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        if let Some(obj) = body.as_object_mut() {
            for (k, v) in &request.params.extra {
                obj.insert(k.clone(), v.clone());
            }
        }
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => return Err(ProviderError::Transient(format!("HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
            }
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Fatal(format!("malformed completion response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::Fatal("completion response has no choices".into()))?;
        let out = match request.kind {
            PromptKind::NoLabelSentences => split_sentence_list(&content)
                .into_iter()
                .take(request.batch)
                .map(|text| Completion { source_id: None, text })
                .collect(),
            _ => vec![Completion { source_id: None, text: content }],
        };
        Ok(out)
    }

    fn name(&self) -> &str {
        "live"
    }
}

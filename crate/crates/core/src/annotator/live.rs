use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AnnotatorError, LlmClient, PromptMessages};

fn default_api_version() -> String {
    "2024-02-01".to_string()
}
fn default_credential_env() -> String {
    "AZURE_OPENAI_API_KEY".to_string()
}
fn default_timeout_secs() -> u64 {
    60
}

/// Azure-style chat-completions endpoint. The key is read from
/// `credential_env` at call time and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub endpoint: String,
    pub deployment: String,
    #[serde(default = "default_api_version")]
    pub api_version: String,
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    /// Decoding parameters are sent only when set.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl LiveConfig {
    pub fn load(path: &Path) -> Result<Self, AnnotatorError> {
        let bytes = std::fs::read(path).map_err(|source| AnnotatorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| AnnotatorError::Config(e.to_string()))
    }

    fn url(&self) -> String {
        format!(
            "{}/openai/deployments/{}/chat/completions?api-version={}",
            self.endpoint.trim_end_matches('/'),
            self.deployment,
            self.api_version
        )
    }
}

pub struct LiveClient {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(config: LiveConfig) -> Result<Self, AnnotatorError> {
        if config.endpoint.is_empty() || config.deployment.is_empty() {
            return Err(AnnotatorError::Config("endpoint and deployment are required".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(LiveClient { config, agent })
    }
}

impl LlmClient for LiveClient {
    fn complete(&self, messages: &PromptMessages) -> Result<String, String> {
        let key = std::env::var(&self.config.credential_env)
            .map_err(|_| format!("environment variable {} is not set", self.config.credential_env))?;
        let mut body = json!({
            "messages": [
                {"role": "system", "content": messages.system},
                {"role": "user", "content": messages.user},
            ]
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut resp = self
            .agent
            .post(&self.config.url())
            .header("api-key", &key)
            .send_json(&body)
            .map_err(|e| format!("request failed: {e}"))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad response body: {e}"))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no message content".to_string())
    }
}

//! Chat-completions client over HTTP.
//!
//! Request body: `{"model", "messages": [{"role": "user", "content"}],
//! "temperature", "max_tokens"}`; the completion is read from
//! `choices[0].message.content`. A bearer token is sent when the configured
//! environment variable is set.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, Request};

pub struct RemoteChatBackend {
    agent: ureq::Agent,
    url: String,
    model_name: String,
    temperature: f64,
    max_tokens: u32,
    api_key: Option<String>,
}

impl RemoteChatBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let url = config
            .endpoint_url
            .clone()
            .ok_or_else(|| BackendError::Config("remote-chat backend needs endpoint_url".into()))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.request_timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteChatBackend {
            agent,
            url,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

impl Backend for RemoteChatBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, req: &Request<'_>) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(self.request_body(req.prompt))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Http { status, body: body.chars().take(200).collect() });
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Protocol("response lacks choices[0].message.content".into()))
    }
}

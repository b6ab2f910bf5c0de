use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("fixture client has no responses left")]
    Exhausted,
}

/// Prompt in, completion out.
pub trait EvolverClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

/// Replays canned completions in order and remembers the prompts it saw.
#[derive(Debug, Default)]
pub struct FixtureClient {
    responses: Mutex<VecDeque<Result<String, ClientError>>>,
    prompts: Mutex<Vec<String>>,
}

impl FixtureClient {
    pub fn new(responses: Vec<Result<String, ClientError>>) -> Self {
        FixtureClient {
            responses: Mutex::new(responses.into()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl EvolverClient for FixtureClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.responses.lock().unwrap().pop_front().unwrap_or(Err(ClientError::Exhausted))
    }
}

/// POSTs `{"prompt": ...}` to `endpoint`. A JSON reply with a string
/// `completion` field is unwrapped; any other body is taken verbatim.
pub struct HttpEvolverClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpEvolverClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpEvolverClient { endpoint: endpoint.into(), agent }
    }
}

impl EvolverClient for HttpEvolverClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let transport = |e: ureq::Error| ClientError::Transport(e.to_string());
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(json!({ "prompt": prompt }))
            .map_err(transport)?;
        let body = resp.body_mut().read_to_string().map_err(transport)?;
        if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&body) {
            if let Some(Value::String(text)) = obj.get("completion") {
                return Ok(text.clone());
            }
        }
        Ok(body)
    }
}

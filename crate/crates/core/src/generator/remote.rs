use std::time::Duration;

use super::{assemble_prompt, BackendError, GenerationBackend, GenerationRequest};

/// Text-in/text-out HTTP backend: POSTs the assembled prompt as
/// `text/plain` and takes the response body as the script.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        RemoteBackend { url: url.into(), agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl GenerationBackend for RemoteBackend {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let prompt = assemble_prompt(request);
        let mut response = self
            .agent
            .post(&self.url)
            .header("Content-Type", "text/plain; charset=utf-8")
            .send(prompt)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))
    }
}

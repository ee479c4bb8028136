//! HTTP client for a locally served language model (Ollama-style
//! `/api/generate`), and the provider built on it.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{build_act_prompt, build_coop_prompt, parse_act_response, parse_coop_response};
use super::{
    heuristic_advise_act, heuristic_advise_coop, ActGuidance, ActHeuristicParams, ActRequest, CoopGuidance,
    CoopRequest, GuidanceCounters, GuidanceProvider, SELF_WEIGHT,
};
use crate::error::{Error, Result};

pub const ENV_URL: &str = "LACMAS_LLM_URL";
pub const ENV_MODEL: &str = "LACMAS_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Ask the model for a self weight as the last list entry instead of
    /// adding the fixed constant.
    pub include_self: bool,
}

impl Default for LlmEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434".to_string(),
            model: "deepseek-r1:14b".to_string(),
            timeout_secs: 30.0,
            include_self: false,
        }
    }
}

impl LlmEndpoint {
    /// Overrides URL and model from `LACMAS_LLM_URL` / `LACMAS_LLM_MODEL`.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            if !url.trim().is_empty() {
                self.base_url = url;
            }
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.trim().is_empty() {
                self.model = model;
            }
        }
        self
    }

    fn generate_url(&self) -> String {
        format!("{}/api/generate", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    endpoint: LlmEndpoint,
    agent: ureq::Agent,
}

impl LlmClient {
    pub fn new(endpoint: LlmEndpoint) -> Self {
        let timeout = Duration::from_secs_f64(endpoint.timeout_secs.max(0.001));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &LlmEndpoint {
        &self.endpoint
    }

    /// One non-streaming completion. Transport errors, timeouts and bodies
    /// without a string `response` field all surface as [`Error::Endpoint`].
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.endpoint.model,
            "prompt": prompt,
            "stream": false,
        });
        let mut resp = self
            .agent
            .post(&self.endpoint.generate_url())
            .send_json(&body)
            .map_err(|e| Error::Endpoint(e.to_string()))?;
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Endpoint(format!("malformed response body: {e}")))?;
        value
            .get("response")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Endpoint("response body has no `response` string".into()))
    }
}

/// Sends `prompt` to the configured endpoint and returns the generated text.
pub fn llm_advise(prompt: &str, endpoint: &LlmEndpoint) -> Result<String> {
    LlmClient::new(endpoint.clone()).complete(prompt)
}

/// Queries the model once per refresh and falls back to the heuristic on
/// any transport or parse failure.
#[derive(Debug, Clone)]
pub struct LlmProvider {
    client: LlmClient,
    params: ActHeuristicParams,
    counters: GuidanceCounters,
    last_error: Option<String>,
}

impl LlmProvider {
    pub fn new(endpoint: LlmEndpoint, params: ActHeuristicParams) -> Self {
        Self {
            client: LlmClient::new(endpoint),
            params,
            counters: GuidanceCounters::default(),
            last_error: None,
        }
    }

    pub fn last_error(&self) -> Option<&str> {
        self.last_error.as_deref()
    }

    /// Parses a coop answer for `req`; `None` means fall back.
    pub fn interpret_coop(&self, req: &CoopRequest, text: &str) -> Option<CoopGuidance> {
        let include_self = self.client.endpoint().include_self;
        let expected = req.neighbor_ids.len() + usize::from(include_self);
        let mut values = parse_coop_response(text, expected).ok()?;
        let self_weight = if include_self {
            values.pop().unwrap_or(SELF_WEIGHT)
        } else {
            SELF_WEIGHT
        };
        Some(CoopGuidance {
            neighbor_weights: values,
            self_weight,
        })
    }

    fn coop_prompt(&self, req: &CoopRequest) -> String {
        if !self.client.endpoint().include_self {
            return build_coop_prompt(req);
        }
        // the agent lists itself last, with its own window statistics
        let mut extended = req.clone();
        extended.neighbor_ids.push(req.owner);
        extended.stats.push(req.own);
        build_coop_prompt(&extended)
    }
}

impl GuidanceProvider for LlmProvider {
    fn advise_act(&mut self, req: &ActRequest) -> ActGuidance {
        self.counters.act_calls += 1;
        let parsed = match self.client.complete(&build_act_prompt(req)) {
            Ok(text) => parse_act_response(&text).map_err(|e| format!("unparseable act response: {e:?}")),
            Err(e) => Err(e.to_string()),
        };
        match parsed {
            Ok(g) => g,
            Err(e) => {
                self.last_error = Some(e);
                self.counters.fallbacks += 1;
                heuristic_advise_act(req, &self.params)
            }
        }
    }

    fn advise_coop(&mut self, req: &CoopRequest) -> CoopGuidance {
        self.counters.coop_calls += 1;
        let text = self.client.complete(&self.coop_prompt(req));
        let parsed = match text {
            Ok(t) => self
                .interpret_coop(req, &t)
                .ok_or_else(|| "unparseable coop response".to_string()),
            Err(e) => Err(e.to_string()),
        };
        match parsed {
            Ok(g) => g,
            Err(e) => {
                self.last_error = Some(e);
                self.counters.fallbacks += 1;
                heuristic_advise_coop(req)
            }
        }
    }

    fn counters(&self) -> GuidanceCounters {
        self.counters
    }
}

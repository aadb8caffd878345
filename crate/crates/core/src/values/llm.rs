//! Language-model value candidates: request model, backends, completion
//! parsing and the per-session cache.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;

use super::stub::StubBackend;
use crate::openapi::{SchemaKind, SchemaNode};
use crate::registry::Registry;

pub const DEFAULT_CANDIDATE_COUNT: usize = 10;

/// Environment variable holding the API key for the chat backend.
pub const API_KEY_ENV: &str = "RESTMARL_LLM_API_KEY";

/// Versioned prompt; placeholders are `{operation}`, `{parameter}`, `{kind}`,
/// `{constraints}`, `{examples}` and `{count}`.
pub const PROMPT_TEMPLATE: &str = include_str!("../../prompts/value_generation.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub operation_id: String,
    pub parameter: String,
    pub schema: SchemaNode,
    pub examples: Vec<Value>,
    pub count: usize,
}

impl LlmRequest {
    pub fn new(operation_id: &str, parameter: &str, schema: &SchemaNode, count: usize) -> Self {
        assert!(count >= 1, "candidate count must be positive");
        let examples = schema.constraints.example.iter().cloned().collect();
        LlmRequest {
            operation_id: operation_id.to_string(),
            parameter: parameter.to_string(),
            schema: schema.clone(),
            examples,
            count,
        }
    }

    pub fn kind(&self) -> SchemaKind {
        self.schema.kind
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("LLM transport failure: {0}")]
    Transport(String),
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("invalid LLM configuration: {0}")]
    Config(String),
}

pub trait LlmBackend: Send {
    fn name(&self) -> &'static str;
    /// Raw completion text, expected to hold a JSON array of candidates.
    fn generate(&mut self, request: &LlmRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmClientConfig {
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub count: usize,
    /// Seed for the deterministic stub.
    pub seed: u64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            endpoint: None,
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.8,
            api_key: None,
            timeout: Duration::from_secs(30),
            count: DEFAULT_CANDIDATE_COUNT,
            seed: 0,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.count == 0 {
            return Err(LlmError::Config("candidate count must be positive".into()));
        }
        Ok(())
    }
}

pub type LlmBackendFactory =
    Box<dyn Fn(&LlmClientConfig) -> Result<Box<dyn LlmBackend>, LlmError> + Send + Sync>;
pub type LlmBackendRegistry = Registry<LlmBackendFactory>;

/// `stub` (deterministic, offline) and `chat` (HTTP chat completions).
pub fn default_llm_backends() -> LlmBackendRegistry {
    let mut r = LlmBackendRegistry::new();
    r.register(
        "stub",
        Box::new(|c: &LlmClientConfig| {
            Ok(Box::new(StubBackend::new(c.seed)) as Box<dyn LlmBackend>)
        }),
    );
    r.register(
        "chat",
        Box::new(|c: &LlmClientConfig| {
            ChatBackend::new(c).map(|b| Box::new(b) as Box<dyn LlmBackend>)
        }),
    );
    r
}

fn constraints_text(schema: &SchemaNode) -> String {
    let c = &schema.constraints;
    if c.is_empty() {
        return "none".to_string();
    }
    let mut v = serde_json::to_value(c).expect("constraints serialize");
    if let Some(m) = v.as_object_mut() {
        m.remove("example");
    }
    v.to_string()
}

pub fn render_prompt(request: &LlmRequest) -> String {
    let examples = if request.examples.is_empty() {
        "none".to_string()
    } else {
        Value::Array(request.examples.clone()).to_string()
    };
    PROMPT_TEMPLATE
        .replace("{operation}", &request.operation_id)
        .replace("{parameter}", &request.parameter)
        .replace("{kind}", request.kind().as_str())
        .replace("{constraints}", &constraints_text(&request.schema))
        .replace("{examples}", &examples)
        .replace("{count}", &request.count.to_string())
}

/// Extracts the JSON array from a completion, tolerating surrounding prose
/// or code fences.
pub fn parse_completion(text: &str) -> Result<Vec<Value>, LlmError> {
    let start = text.find('[');
    let end = text.rfind(']');
    let (Some(s), Some(e)) = (start, end) else {
        return Err(LlmError::MalformedCompletion("no JSON array".into()));
    };
    if e < s {
        return Err(LlmError::MalformedCompletion("no JSON array".into()));
    }
    match serde_json::from_str::<Value>(&text[s..=e]) {
        Ok(Value::Array(xs)) => Ok(xs),
        Ok(_) => Err(LlmError::MalformedCompletion("not an array".into())),
        Err(err) => Err(LlmError::MalformedCompletion(err.to_string())),
    }
}

/// Chat-completions client over blocking HTTP.
pub struct ChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: String,
}

impl ChatBackend {
    pub fn new(config: &LlmClientConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config("the chat backend needs an endpoint".into()))?;
        let api_key = config
            .api_key
            .clone()
            .ok_or_else(|| LlmError::Config(format!("the chat backend needs {API_KEY_ENV}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(ChatBackend {
            client,
            endpoint,
            model: config.model.clone(),
            temperature: config.temperature,
            api_key,
        })
    }
}

impl LlmBackend for ChatBackend {
    fn name(&self) -> &'static str {
        "chat"
    }

    fn generate(&mut self, request: &LlmRequest) -> Result<String, LlmError> {
        let payload = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": "You produce test data for REST APIs as JSON."},
                {"role": "user", "content": render_prompt(request)},
            ],
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&payload)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .map_err(|e| LlmError::MalformedCompletion(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("endpoint answered {status}")));
        }
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                LlmError::MalformedCompletion("missing choices[0].message.content".into())
            })
    }
}

/// True when a string candidate honours the pattern and length bounds.
fn conforms(schema: &SchemaNode, pattern: Option<&Regex>, v: &Value) -> bool {
    if schema.kind != SchemaKind::String {
        return true;
    }
    let Some(s) = v.as_str() else {
        return false;
    };
    let len = s.chars().count() as u64;
    let c = &schema.constraints;
    c.min_length.is_none_or(|m| len >= m)
        && c.max_length.is_none_or(|m| len <= m)
        && pattern.is_none_or(|re| re.is_match(s))
}

/// Per-session cache in front of a backend: one generation per
/// (operation, parameter), failures cached as an empty list.
pub struct LlmValues {
    backend: Box<dyn LlmBackend>,
    cache: BTreeMap<(String, String), Vec<Value>>,
    generations: BTreeMap<(String, String), usize>,
    backend_calls: usize,
}

impl LlmValues {
    pub fn new(backend: Box<dyn LlmBackend>) -> Self {
        LlmValues {
            backend,
            cache: BTreeMap::new(),
            generations: BTreeMap::new(),
            backend_calls: 0,
        }
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    fn call(&mut self, request: &LlmRequest) -> Result<Vec<Value>, LlmError> {
        self.backend_calls += 1;
        let text = self.backend.generate(request)?;
        parse_completion(&text)
    }

    /// Cached candidates; generates them on first use.
    pub fn candidates(&mut self, request: &LlmRequest) -> &[Value] {
        let key = (request.operation_id.clone(), request.parameter.clone());
        if !self.cache.contains_key(&key) {
            *self.generations.entry(key.clone()).or_default() += 1;
            let result = match self.call(request) {
                Err(LlmError::MalformedCompletion(first)) => {
                    tracing::debug!(%first, "malformed completion, retrying once");
                    self.call(request)
                }
                other => other,
            };
            let values = match result {
                Ok(xs) => {
                    let pattern = request
                        .schema
                        .constraints
                        .pattern
                        .as_deref()
                        .and_then(|p| Regex::new(p).ok());
                    xs.into_iter()
                        .filter(|v| conforms(&request.schema, pattern.as_ref(), v))
                        .collect()
                }
                Err(e) => {
                    tracing::warn!(error = %e, op = %request.operation_id, param = %request.parameter, "LLM generation failed");
                    Vec::new()
                }
            };
            self.cache.insert(key.clone(), values);
        }
        &self.cache[&key]
    }

    /// A uniformly chosen candidate, or `None` when generation produced none.
    pub fn pick<R: Rng + ?Sized>(&mut self, request: &LlmRequest, rng: &mut R) -> Option<Value> {
        self.candidates(request).choose(rng).cloned()
    }

    pub fn generations(&self, operation_id: &str, parameter: &str) -> usize {
        self.generations
            .get(&(operation_id.to_string(), parameter.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn generation_counts(&self) -> &BTreeMap<(String, String), usize> {
        &self.generations
    }

    /// Backend invocations including malformed-completion retries.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        replies: Vec<Result<String, LlmError>>,
    }

    impl LlmBackend for Scripted {
        fn name(&self) -> &'static str {
            "scripted"
        }
        fn generate(&mut self, _r: &LlmRequest) -> Result<String, LlmError> {
            if self.replies.is_empty() {
                return Err(LlmError::Transport("exhausted".into()));
            }
            self.replies.remove(0)
        }
    }

    fn req(param: &str) -> LlmRequest {
        let mut s = SchemaNode::scalar(SchemaKind::String);
        s.constraints.pattern = Some("^[a-z]+$".into());
        s.constraints.min_length = Some(2);
        LlmRequest::new("op", param, &s, 3)
    }

    #[test]
    fn parses_fenced_arrays() {
        assert_eq!(
            parse_completion("```json\n[\"a\", 1]\n```").unwrap(),
            vec![json!("a"), json!(1)]
        );
        assert!(parse_completion("sorry").is_err());
        assert!(parse_completion("] [").is_err());
        assert!(parse_completion("[1,").is_err());
    }

    #[test]
    fn cache_hit_makes_no_backend_call() {
        let mut llm = LlmValues::new(Box::new(Scripted {
            replies: vec![Ok(r#"["ab", "cd"]"#.into())],
        }));
        let first = llm.candidates(&req("p")).to_vec();
        let second = llm.candidates(&req("p")).to_vec();
        assert_eq!(first, second);
        assert_eq!(llm.backend_calls(), 1);
        assert_eq!(llm.generations("op", "p"), 1);
    }

    #[test]
    fn non_conforming_candidates_are_filtered() {
        let mut llm = LlmValues::new(Box::new(Scripted {
            replies: vec![Ok(r#"["ok", "NO", "x", 5, "fine"]"#.into())],
        }));
        assert_eq!(llm.candidates(&req("p")), &[json!("ok"), json!("fine")]);
    }

    #[test]
    fn malformed_then_valid_retries_once() {
        let mut llm = LlmValues::new(Box::new(Scripted {
            replies: vec![Ok("garbage".into()), Ok(r#"["ab"]"#.into())],
        }));
        assert_eq!(llm.candidates(&req("p")), &[json!("ab")]);
        assert_eq!(llm.backend_calls(), 2);
        assert_eq!(llm.generations("op", "p"), 1);
    }

    #[test]
    fn repeated_failure_caches_empty() {
        let mut llm = LlmValues::new(Box::new(Scripted {
            replies: vec![Ok("garbage".into()), Ok("still garbage".into())],
        }));
        assert!(llm.candidates(&req("p")).is_empty());
        assert!(llm.candidates(&req("p")).is_empty());
        assert_eq!(llm.backend_calls(), 2);

        let mut llm = LlmValues::new(Box::new(Scripted {
            replies: vec![Err(LlmError::Transport("down".into()))],
        }));
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        assert!(llm.pick(&req("q"), &mut rng).is_none());
        assert_eq!(llm.backend_calls(), 1);
    }

    #[test]
    fn prompt_mentions_every_constraint() {
        let p = render_prompt(&req("password"));
        for needle in [
            "password",
            "string",
            "^[a-z]+$",
            "min_length",
            "3 values",
            "op",
        ] {
            assert!(p.contains(needle), "{needle}\n{p}");
        }
        assert!(
            !p.contains('{') || p.contains("{\""),
            "unfilled placeholder\n{p}"
        );
    }

    #[test]
    fn config_validation() {
        assert!(LlmClientConfig::default().validate().is_ok());
        let bad = LlmClientConfig {
            temperature: 2.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ChatBackend::new(&LlmClientConfig::default()).is_err());
    }

    #[test]
    fn registry_has_stub_and_chat() {
        let r = default_llm_backends();
        assert_eq!(r.names().collect::<Vec<_>>(), ["chat", "stub"]);
        let b = r.get("stub").unwrap()(&LlmClientConfig::default()).unwrap();
        assert_eq!(b.name(), "stub");
    }
}

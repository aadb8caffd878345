//! Value sources: typed random values, language-model candidates and values
//! stored from earlier successful exchanges.

mod llm;
mod random;
mod stub;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use llm::{
    default_llm_backends, parse_completion, render_prompt, ChatBackend, LlmBackend,
    LlmBackendFactory, LlmBackendRegistry, LlmClientConfig, LlmError, LlmRequest, LlmValues,
    API_KEY_ENV, DEFAULT_CANDIDATE_COUNT, PROMPT_TEMPLATE,
};
pub use random::{random_value, RandomPolicy};
pub use stub::{stub_candidates, StubBackend};

use crate::engine::DataBank;
use crate::spdg::ProducerRef;

/// The value agent's actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ValueSource {
    Dependency,
    Llm,
    Random,
}

impl ValueSource {
    pub const ALL: [ValueSource; 3] = [
        ValueSource::Dependency,
        ValueSource::Llm,
        ValueSource::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValueSource::Dependency => "DEPENDENCY",
            ValueSource::Llm => "LLM",
            ValueSource::Random => "RANDOM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ValuesError {
    #[error("no stored values for {0}")]
    EmptyStore(String),
}

/// Uniform pick among the values stored for `producer`.
pub fn databank_value<R: Rng + ?Sized>(
    bank: &DataBank,
    producer: &ProducerRef,
    rng: &mut R,
) -> Result<Value, ValuesError> {
    bank.values(producer)
        .choose(rng)
        .map(|v| (*v).clone())
        .ok_or_else(|| ValuesError::EmptyStore(producer.key()))
}

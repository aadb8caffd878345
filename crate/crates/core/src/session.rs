//! The testing loop: select, mutate, build, dispatch, learn, record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentSet, Features, PlanContext};
use crate::engine::{
    build_request, dispatch, open_transport, MutationFactory, Mutator, RequestError,
    ResponseRecord, TransportConfig, TransportErrorKind, TransportRegistry, TransportSetupError,
    DEFAULT_MUTATION_RATE, DEFAULT_TIMEOUT,
};
use crate::learning::{epsilon_at, epsilon_at_step, LearningConfig, LearningError, QRow};
use crate::openapi::{parse_spec, ApiSpec, DocumentFormat, ParseWarning, SpecError};
use crate::registry::Registry;
use crate::report::{
    emit_report, CoverageSummary, CoverageTracker, ReportError, ReportPaths, RequestLogEntry,
};
use crate::semantics::{load_embeddings, EmbeddingTable, SemanticsError};
use crate::spdg::{build_spdg, Spdg, SpdgConfig, SpdgError};
use crate::values::{LlmBackendRegistry, LlmClientConfig, LlmError, LlmValues, RandomPolicy};

/// Default wall-clock budget when no request cap is given.
pub const DEFAULT_TIME_BUDGET: Duration = Duration::from_secs(3600);

/// A component that an ablation run can switch off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Learning,
    Spdg,
    Llm,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Learning, Component::Spdg, Component::Llm];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Learning => "learning",
            Component::Spdg => "spdg",
            Component::Llm => "llm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

pub fn features_without(disabled: &BTreeSet<Component>) -> Features {
    Features {
        learning: !disabled.contains(&Component::Learning),
        spdg: !disabled.contains(&Component::Spdg),
        llm: !disabled.contains(&Component::Llm),
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub spec_path: PathBuf,
    /// Overrides the specification's first server URL.
    pub base_url: Option<String>,
    pub time_budget: Option<Duration>,
    pub max_requests: Option<u64>,
    pub seed: u64,
    pub mutation_rate: f64,
    pub learning: LearningConfig,
    pub spdg: SpdgConfig,
    /// Registered LLM backend name, e.g. `stub` or `chat`.
    pub llm_backend: String,
    pub llm: LlmClientConfig,
    /// `None` selects the bundled fixture table.
    pub embeddings: Option<PathBuf>,
    pub request_timeout: Duration,
    pub auth_header: Option<(String, String)>,
    /// Where report files go; `None` writes nothing.
    pub report_dir: Option<PathBuf>,
    pub features: Features,
}

impl SessionConfig {
    pub fn new(spec_path: impl Into<PathBuf>) -> Self {
        SessionConfig {
            spec_path: spec_path.into(),
            base_url: None,
            time_budget: Some(DEFAULT_TIME_BUDGET),
            max_requests: None,
            seed: 0,
            mutation_rate: DEFAULT_MUTATION_RATE,
            learning: LearningConfig::default(),
            spdg: SpdgConfig::default(),
            llm_backend: "stub".to_string(),
            llm: LlmClientConfig::default(),
            embeddings: None,
            request_timeout: DEFAULT_TIMEOUT,
            auth_header: None,
            report_dir: None,
            features: Features::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.time_budget.is_none() && self.max_requests.is_none() {
            return Err(SessionError::Config(
                "no stop condition: set a time budget or a request cap".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(SessionError::Config(format!(
                "mutation rate {} outside [0, 1]",
                self.mutation_rate
            )));
        }
        self.learning
            .validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        self.spdg
            .validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        self.llm
            .validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read specification {path}: {source}")]
    SpecIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse specification {path}: {source}")]
    Spec {
        path: String,
        #[source]
        source: SpecError,
    },
    #[error(transparent)]
    Embeddings(#[from] SemanticsError),
    #[error(transparent)]
    Transport(#[from] TransportSetupError),
    #[error("no LLM backend named `{0}`")]
    UnknownLlmBackend(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Graph(#[from] SpdgError),
    #[error(transparent)]
    Schedule(#[from] LearningError),
}

/// Pluggable strategies a session draws from.
pub struct Strategies {
    pub transports: TransportRegistry,
    pub llm_backends: LlmBackendRegistry,
    pub mutations: Registry<MutationFactory>,
}

impl Default for Strategies {
    fn default() -> Self {
        Strategies {
            transports: crate::engine::default_transports(),
            llm_backends: crate::values::default_llm_backends(),
            mutations: crate::engine::default_mutations(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub summary: CoverageSummary,
    pub log: Vec<RequestLogEntry>,
    pub spdg: Spdg,
    pub qtables: Vec<QRow>,
    /// Generations issued per (operation, parameter).
    pub llm_generations: BTreeMap<(String, String), usize>,
    pub report: Option<ReportPaths>,
    pub warnings: Vec<ParseWarning>,
}

pub fn load_spec(config: &SessionConfig) -> Result<(ApiSpec, Vec<ParseWarning>), SessionError> {
    let path = config.spec_path.display().to_string();
    let text = fs::read_to_string(&config.spec_path).map_err(|source| SessionError::SpecIo {
        path: path.clone(),
        source,
    })?;
    let parsed = parse_spec(&text, DocumentFormat::from_path(&config.spec_path))
        .map_err(|source| SessionError::Spec { path, source })?;
    Ok((parsed.spec, parsed.warnings))
}

fn load_table(config: &SessionConfig) -> Result<EmbeddingTable, SessionError> {
    match &config.embeddings {
        Some(p) => Ok(load_embeddings(p)?),
        None => Ok(EmbeddingTable::fixture()),
    }
}

/// Decides when to stop and how far epsilon has decayed. A request cap
/// drives the schedule whenever present, which keeps seeded runs exact.
struct Budget {
    max_requests: Option<u64>,
    time_budget: Option<Duration>,
    started: Instant,
}

impl Budget {
    fn exhausted(&self, issued: u64) -> bool {
        self.max_requests.is_some_and(|m| issued >= m)
            || self
                .time_budget
                .is_some_and(|t| self.started.elapsed() >= t)
    }

    fn epsilon(&self, issued: u64, cfg: &LearningConfig) -> Result<f64, LearningError> {
        match (self.max_requests, self.time_budget) {
            (Some(m), _) => epsilon_at_step(issued, m, cfg),
            (None, Some(t)) => epsilon_at(self.started.elapsed(), t, cfg),
            (None, None) => unreachable!("validated config has a stop condition"),
        }
    }
}

pub fn run_session(
    config: &SessionConfig,
    strategies: &Strategies,
) -> Result<SessionOutcome, SessionError> {
    config.validate()?;
    let (spec, warnings) = load_spec(config)?;
    let table = load_table(config)?;
    let base_url = config
        .base_url
        .clone()
        .unwrap_or_else(|| spec.base_url.clone());
    let mut transport_config = TransportConfig::new(&base_url);
    transport_config.timeout = config.request_timeout;
    transport_config.auth_header = config.auth_header.clone();
    let mut transport = open_transport(&strategies.transports, &transport_config)?;
    let factory = strategies
        .llm_backends
        .get(&config.llm_backend)
        .ok_or_else(|| SessionError::UnknownLlmBackend(config.llm_backend.clone()))?;
    let mut llm = LlmValues::new(factory(&config.llm)?);
    let mutator = Mutator::new(&strategies.mutations, config.mutation_rate);
    let random = RandomPolicy::default();

    let mut spdg = build_spdg(&spec, &table, config.spdg);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agents = AgentSet::new(&spec, config.learning, config.features, &mut rng);
    let mut bank = crate::engine::DataBank::new();
    let mut tracker = CoverageTracker::new(spec.operations.iter().map(|o| o.id.clone()).collect());
    let mut log = Vec::new();
    tracing::info!(
        operations = spec.operations.len(),
        edges = spdg.edges().len(),
        base_url = %base_url,
        "session initialized"
    );

    let budget = Budget {
        max_requests: config.max_requests,
        time_budget: config.time_budget,
        started: Instant::now(),
    };
    let mut seq = 0u64;
    while !spec.operations.is_empty() && !budget.exhausted(seq) {
        let epsilon = budget.epsilon(seq, &config.learning)?;
        let (plan, picks) = {
            let mut ctx = PlanContext {
                spec: &spec,
                spdg: &spdg,
                bank: &bank,
                llm: &mut llm,
                random: &random,
                llm_count: config.llm.count,
                epsilon,
            };
            agents.choose_plan(&mut ctx, &mut rng)
        };
        let plan = mutator.maybe_mutate(plan, &spec, &mut rng);
        let response = match build_request(&plan, &spec) {
            Ok(request) => dispatch(transport.as_mut(), &request),
            Err(e) => unbuildable(&e),
        };
        agents.apply_feedback(
            &spec, &table, &mut spdg, &mut bank, &plan, &picks, &response,
        );
        tracker.observe(
            seq,
            &plan.operation_id,
            plan.mutation,
            response.status,
            &response.body,
        );
        tracing::debug!(seq, op = %plan.operation_id, status = ?response.status, epsilon, "exchange");
        log.push(RequestLogEntry::new(seq, &plan, &response));
        seq += 1;
    }

    let summary = tracker.summary();
    let mut qtables = agents.operation.table.snapshot("operation");
    qtables.extend(agents.parameter.table.snapshot("parameter"));
    qtables.extend(agents.value.table.snapshot("value"));
    qtables.extend(agents.dependency.table.snapshot("dependency"));
    let report = match &config.report_dir {
        Some(dir) => Some(emit_report(dir, &summary, &spdg, &qtables, &log)?),
        None => None,
    };
    tracing::info!(
        requests = summary.requests,
        processed = summary.operations_processed,
        failures = summary.failures.len(),
        "session finished"
    );
    Ok(SessionOutcome {
        summary,
        log,
        spdg,
        qtables,
        llm_generations: llm.generation_counts().clone(),
        report,
        warnings,
    })
}

/// A plan that cannot be rendered never reaches the service; it is logged
/// like a transport failure so it carries no reward.
fn unbuildable(error: &RequestError) -> ResponseRecord {
    tracing::warn!(%error, "request not built");
    ResponseRecord {
        status: None,
        headers: Vec::new(),
        body: error.to_string(),
        latency: Duration::ZERO,
        transport_error: Some(TransportErrorKind::Other),
    }
}

/// Runs a session with the given components switched off.
pub fn run_ablation(
    config: &SessionConfig,
    strategies: &Strategies,
    disabled: &BTreeSet<Component>,
) -> Result<SessionOutcome, SessionError> {
    let mut config = config.clone();
    config.features = features_without(disabled);
    run_session(&config, strategies)
}

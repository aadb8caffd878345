//! The four cooperating agents: operation, parameter, value and dependency.

mod coordinator;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use coordinator::{AgentSet, Features, FeedbackOutcome, PlanContext, StepPicks, ValuePick};

use crate::engine::DataBank;
use crate::learning::{independent_update, select_action, LearningConfig, QTable, TdTrace};
use crate::openapi::OperationNode;
use crate::spdg::{ConsumerRef, EdgeKey, ProducerRef, Spdg};
use crate::values::ValueSource;

/// Largest parameter-combination action space per operation.
pub const MAX_COMBINATIONS: usize = 10;

/// Operation agent reward: server errors are the goal, successes are
/// mildly discouraged, auth failures and wrong methods strongly so.
pub fn operation_reward(status: u16) -> i32 {
    match status {
        401 => -3,
        405 => -10,
        500..=599 => 2,
        400..=499 => 1,
        200..=299 => -1,
        _ => 0,
    }
}

/// Reward shared by the parameter, value and dependency agents.
pub fn shared_reward(status: u16) -> i32 {
    match status {
        200..=299 => 2,
        400..=499 => -2,
        500..=599 => -1,
        _ => 0,
    }
}

/// Single state; the action space is every operation id.
pub const OPERATION_STATE: &str = "available";

#[derive(Debug, Clone)]
pub struct OperationAgent {
    pub table: QTable,
    actions: Vec<String>,
}

impl OperationAgent {
    pub fn new(operation_ids: Vec<String>) -> Self {
        OperationAgent {
            table: QTable::new(),
            actions: operation_ids,
        }
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn select<R: Rng + ?Sized>(&self, epsilon: f64, rng: &mut R) -> &str {
        let i = select_action(&self.table, OPERATION_STATE, &self.actions, epsilon, rng)
            .expect("specification has operations");
        &self.actions[i]
    }

    pub fn update(&mut self, op: &str, status: u16, config: &LearningConfig) -> TdTrace {
        independent_update(
            &mut self.table,
            OPERATION_STATE,
            op,
            f64::from(operation_reward(status)),
            &self.actions,
            config,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterAgentState {
    pub operation_id: String,
    pub available: Vec<String>,
    pub required: Vec<String>,
}

impl ParameterAgentState {
    /// Names in specification order; a name used in two locations appears once.
    pub fn from_operation(op: &OperationNode) -> Self {
        let mut available: Vec<String> = Vec::new();
        let mut required: Vec<String> = Vec::new();
        for p in &op.parameters {
            if !available.contains(&p.name) {
                available.push(p.name.clone());
            }
            if p.required && !required.contains(&p.name) {
                required.push(p.name.clone());
            }
        }
        ParameterAgentState {
            operation_id: op.id.clone(),
            available,
            required,
        }
    }
}

/// Parameter names in specification order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParameterCombination(pub Vec<String>);

impl ParameterCombination {
    pub fn key(&self) -> String {
        self.0.join(",")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|n| n == name)
    }
}

/// Up to [`MAX_COMBINATIONS`] supersets of the required parameters. All of
/// them when few enough exist; otherwise required-only, all, then distinct
/// random supersets.
pub fn parameter_action_space<R: Rng + ?Sized>(
    state: &ParameterAgentState,
    rng: &mut R,
) -> Vec<ParameterCombination> {
    let optional: Vec<&String> = state
        .available
        .iter()
        .filter(|n| !state.required.contains(n))
        .collect();
    let build = |chosen: &dyn Fn(usize) -> bool| {
        let mut opt_i = 0;
        ParameterCombination(
            state
                .available
                .iter()
                .filter(|n| {
                    if state.required.contains(n) {
                        true
                    } else {
                        let keep = chosen(opt_i);
                        opt_i += 1;
                        keep
                    }
                })
                .cloned()
                .collect(),
        )
    };
    let k = optional.len();
    if k < 64 && (1u64 << k) <= MAX_COMBINATIONS as u64 {
        return (0..1u64 << k)
            .map(|mask| build(&|i| mask & (1 << i) != 0))
            .collect();
    }
    let mut out = vec![build(&|_| false), build(&|_| true)];
    let mut seen: BTreeSet<ParameterCombination> = out.iter().cloned().collect();
    let mut attempts = 0;
    while out.len() < MAX_COMBINATIONS && attempts < 1000 {
        attempts += 1;
        let picks: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        let c = build(&|i| picks[i]);
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct ParameterAgent {
    pub table: QTable,
    spaces: BTreeMap<String, Vec<ParameterCombination>>,
}

impl ParameterAgent {
    pub fn new<R: Rng + ?Sized>(ops: &[OperationNode], rng: &mut R) -> Self {
        let spaces = ops
            .iter()
            .map(|op| {
                let state = ParameterAgentState::from_operation(op);
                (op.id.clone(), parameter_action_space(&state, rng))
            })
            .collect();
        ParameterAgent {
            table: QTable::new(),
            spaces,
        }
    }

    pub fn space(&self, op: &str) -> &[ParameterCombination] {
        self.spaces.get(op).map_or(&[], Vec::as_slice)
    }

    pub fn action_keys(&self, op: &str) -> Vec<String> {
        self.space(op)
            .iter()
            .map(ParameterCombination::key)
            .collect()
    }

    pub fn select<R: Rng + ?Sized>(
        &self,
        op: &str,
        epsilon: f64,
        rng: &mut R,
    ) -> ParameterCombination {
        let keys = self.action_keys(op);
        let i = select_action(&self.table, op, &keys, epsilon, rng)
            .expect("every operation has at least the required-only combination");
        self.space(op)[i].clone()
    }
}

#[derive(Debug, Clone)]
pub struct ValueAgent {
    pub table: QTable,
    actions: Vec<ValueSource>,
}

impl ValueAgent {
    pub fn new(llm_enabled: bool) -> Self {
        let actions = ValueSource::ALL
            .into_iter()
            .filter(|s| llm_enabled || *s != ValueSource::Llm)
            .collect();
        ValueAgent {
            table: QTable::new(),
            actions,
        }
    }

    pub fn state_key(op: &str, param: &str) -> String {
        format!("{op}|{param}")
    }

    pub fn actions(&self) -> &[ValueSource] {
        &self.actions
    }

    pub fn action_keys(&self) -> Vec<String> {
        self.actions
            .iter()
            .map(|a| a.as_str().to_string())
            .collect()
    }

    pub fn offers(&self, source: ValueSource) -> bool {
        self.actions.contains(&source)
    }

    pub fn select<R: Rng + ?Sized>(&self, state: &str, epsilon: f64, rng: &mut R) -> ValueSource {
        let keys = self.action_keys();
        let i = select_action(&self.table, state, &keys, epsilon, rng).expect("value actions");
        self.actions[i]
    }
}

/// A resolved dependency: which producer field feeds the consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyChoice {
    pub consumer: ConsumerRef,
    pub producer: ProducerRef,
    /// Graph edge followed; `None` marks a random exploratory query.
    pub edge: Option<EdgeKey>,
    /// Action keys available in this state when the choice was made.
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DependencyAgent {
    pub table: QTable,
}

impl DependencyAgent {
    pub fn new() -> Self {
        Self::default()
    }

    /// Picks a producer for `consumer`. With probability `epsilon`, or when
    /// the graph is not consulted, a uniformly random stored field; otherwise
    /// the highest-Q unpruned edge whose producer has stored values, falling
    /// back to a random field. `None` only when the bank is empty.
    pub fn lookup<R: Rng + ?Sized>(
        &mut self,
        spdg: Option<&Spdg>,
        bank: &DataBank,
        consumer: &ConsumerRef,
        epsilon: f64,
        rng: &mut R,
    ) -> Option<DependencyChoice> {
        if bank.is_empty() {
            return None;
        }
        let state = consumer.key();
        let edges: Vec<_> = spdg
            .map(|g| {
                g.candidates(consumer)
                    .filter(|e| bank.has_values(&e.producer))
                    .collect()
            })
            .unwrap_or_default();
        for e in &edges {
            self.table.seed(&state, &e.producer.key(), e.similarity);
        }
        let mut alternatives: Vec<String> = edges.iter().map(|e| e.producer.key()).collect();
        let explore = spdg.is_none() || edges.is_empty() || rng.random::<f64>() < epsilon;
        if !explore {
            let i = select_action(&self.table, &state, &alternatives, 0.0, rng).expect("non-empty");
            let e = edges[i];
            return Some(DependencyChoice {
                consumer: consumer.clone(),
                producer: e.producer.clone(),
                edge: Some(e.key()),
                alternatives,
            });
        }
        let fields = bank.fields();
        let pick = fields.choose(rng).expect("bank is not empty");
        let producer = pick.producer();
        let edge = edges
            .iter()
            .find(|e| e.producer == producer)
            .map(|e| e.key());
        let key = producer.key();
        if !alternatives.contains(&key) {
            alternatives.push(key);
        }
        Some(DependencyChoice {
            consumer: consumer.clone(),
            producer,
            edge,
            alternatives,
        })
    }
}

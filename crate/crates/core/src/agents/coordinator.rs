//! Plan selection across all agents and the learning step that follows a
//! response.

use std::collections::BTreeSet;

use rand::Rng;
use serde_json::Value;

use super::{
    shared_reward, DependencyAgent, DependencyChoice, OperationAgent, ParameterAgent, ValueAgent,
};
use crate::engine::{Binding, DataBank, DependencyUse, RequestPlan, ResponseRecord};
use crate::learning::{joint_update, LearningConfig, Participant, Pick, TdTrace};
use crate::openapi::{output_fields, ApiSpec, ParameterDef};
use crate::semantics::EmbeddingTable;
use crate::spdg::{ConsumerLocation, EdgeKey, Outcome, Spdg};
use crate::values::{
    databank_value, random_value, LlmRequest, LlmValues, RandomPolicy, ValueSource,
};

/// Components that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Features {
    /// Temporal-difference updates of every agent.
    pub learning: bool,
    /// Graph-guided dependency lookups; off means random queries only.
    pub spdg: bool,
    /// The value agent's LLM action.
    pub llm: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            learning: true,
            spdg: true,
            llm: true,
        }
    }
}

/// Everything plan selection reads besides the agents themselves.
pub struct PlanContext<'a> {
    pub spec: &'a ApiSpec,
    pub spdg: &'a Spdg,
    pub bank: &'a DataBank,
    pub llm: &'a mut LlmValues,
    pub random: &'a RandomPolicy,
    pub llm_count: usize,
    pub epsilon: f64,
}

/// The value agent's decision for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePick {
    pub param: String,
    pub chosen: ValueSource,
    /// Source that produced the value after fallbacks; this is what is credited.
    pub executed: ValueSource,
}

/// What each agent did for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPicks {
    pub operation: String,
    pub combination: String,
    pub values: Vec<ValuePick>,
    pub dependencies: Vec<DependencyChoice>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackOutcome {
    pub operation_trace: Option<TdTrace>,
    pub joint_traces: Vec<TdTrace>,
    pub refined: Vec<(EdgeKey, Outcome)>,
    pub discovered: Vec<EdgeKey>,
}

pub struct AgentSet {
    pub operation: OperationAgent,
    pub parameter: ParameterAgent,
    pub value: ValueAgent,
    pub dependency: DependencyAgent,
    pub config: LearningConfig,
    pub features: Features,
    /// (operation, field) pairs already checked for undocumented links.
    evaluated_fields: BTreeSet<(String, String)>,
}

impl AgentSet {
    pub fn new<R: Rng + ?Sized>(
        spec: &ApiSpec,
        config: LearningConfig,
        features: Features,
        rng: &mut R,
    ) -> Self {
        AgentSet {
            operation: OperationAgent::new(spec.operations.iter().map(|o| o.id.clone()).collect()),
            parameter: ParameterAgent::new(&spec.operations, rng),
            value: ValueAgent::new(features.llm),
            dependency: DependencyAgent::new(),
            config,
            features,
            evaluated_fields: BTreeSet::new(),
        }
    }

    /// Operation, then combination, then a source and value per parameter.
    pub fn choose_plan<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut PlanContext<'_>,
        rng: &mut R,
    ) -> (RequestPlan, StepPicks) {
        let eps = ctx.epsilon;
        let op_id = self.operation.select(eps, rng).to_string();
        let op = ctx
            .spec
            .operation(&op_id)
            .expect("agent actions are spec operations");
        let combination = self.parameter.select(&op_id, eps, rng);

        let mut plan = RequestPlan::new(&op.id, op.method, &op.path);
        plan.combination = combination.0.clone();
        let mut picks = StepPicks {
            operation: op_id.clone(),
            combination: combination.key(),
            values: Vec::new(),
            dependencies: Vec::new(),
        };
        for param in op
            .parameters
            .iter()
            .filter(|p| combination.contains(&p.name))
        {
            let state = ValueAgent::state_key(&op.id, &param.name);
            let chosen = self.value.select(&state, eps, rng);
            let (value, executed, dependency) = self.resolve(ctx, &op.id, param, chosen, rng);
            let mut binding = Binding::new(&param.name, param.location, value, executed);
            if let Some(choice) = dependency {
                binding.dependency = Some(DependencyUse {
                    producer: choice.producer.clone(),
                    edge: choice.edge.clone(),
                });
                picks.dependencies.push(choice);
            }
            plan.bindings.push(binding);
            picks.values.push(ValuePick {
                param: param.name.clone(),
                chosen,
                executed,
            });
        }
        (plan, picks)
    }

    /// Produces a value for `chosen`, falling back from DEPENDENCY to LLM (when
    /// offered) to RANDOM as sources come up empty.
    fn resolve<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut PlanContext<'_>,
        op_id: &str,
        param: &ParameterDef,
        chosen: ValueSource,
        rng: &mut R,
    ) -> (Value, ValueSource, Option<DependencyChoice>) {
        if chosen == ValueSource::Dependency {
            let consumer = ConsumerLocation::from_param(param.location)
                .map(|loc| crate::spdg::ConsumerRef::new(op_id, &param.name, loc));
            if let Some(consumer) = consumer {
                let graph = self.features.spdg.then_some(ctx.spdg);
                if let Some(choice) =
                    self.dependency
                        .lookup(graph, ctx.bank, &consumer, ctx.epsilon, rng)
                {
                    let v = databank_value(ctx.bank, &choice.producer, rng)
                        .expect("lookup only returns producers with stored values");
                    return (v, ValueSource::Dependency, Some(choice));
                }
            }
        }
        if chosen != ValueSource::Random && self.value.offers(ValueSource::Llm) {
            let req = LlmRequest::new(op_id, &param.name, &param.schema, ctx.llm_count);
            if let Some(v) = ctx.llm.pick(&req, rng) {
                return (v, ValueSource::Llm, None);
            }
        }
        (
            random_value(&param.schema, ctx.random, rng),
            ValueSource::Random,
            None,
        )
    }

    /// Learning and graph maintenance after a response. Transport errors
    /// teach nothing. Mutated requests only update the operation agent.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_feedback(
        &mut self,
        spec: &ApiSpec,
        table: &EmbeddingTable,
        spdg: &mut Spdg,
        bank: &mut DataBank,
        plan: &RequestPlan,
        picks: &StepPicks,
        response: &ResponseRecord,
    ) -> FeedbackOutcome {
        let mut out = FeedbackOutcome::default();
        let Some(status) = response.status else {
            return out;
        };
        if self.features.learning {
            out.operation_trace = Some(self.operation.update(
                &picks.operation,
                status,
                &self.config,
            ));
        }
        if plan.mutated() {
            return out;
        }
        let success = (200..300).contains(&status);

        if self.features.learning {
            out.joint_traces = self.joint(picks, status);
        }

        let outcome = if success {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        for d in &picks.dependencies {
            if let Some(key) = &d.edge {
                if spdg.refine_edge(key, outcome).is_ok() {
                    out.refined.push((key.clone(), outcome));
                }
            } else if success && self.features.spdg {
                let w = spdg.config.discovered_weight;
                if let Ok(e) = spdg.add_discovered_edge(d.consumer.clone(), d.producer.clone(), w) {
                    out.discovered.push(e.key());
                }
            }
        }

        if success {
            let pairs = bank.record_success(plan, status, &response.body);
            if self.features.spdg {
                let documented = spec
                    .operation(&plan.operation_id)
                    .map(output_fields)
                    .unwrap_or_default();
                for (path, _) in pairs {
                    let leaf = path.rsplit('.').next().unwrap_or(&path).to_string();
                    if documented.contains(&leaf) {
                        continue;
                    }
                    if self
                        .evaluated_fields
                        .insert((plan.operation_id.clone(), leaf.clone()))
                    {
                        out.discovered.extend(spdg.discover_undocumented(
                            spec,
                            table,
                            &plan.operation_id,
                            &leaf,
                        ));
                    }
                }
            }
        }
        out
    }

    /// Shared-delta update over the parameter, value and dependency agents
    /// that acted this step.
    fn joint(&mut self, picks: &StepPicks, status: u16) -> Vec<TdTrace> {
        let param_pick = Pick::new(
            picks.operation.clone(),
            picks.combination.clone(),
            self.parameter.action_keys(&picks.operation),
        );
        let value_keys = self.value.action_keys();
        let value_picks: Vec<Pick> = picks
            .values
            .iter()
            .map(|v| {
                Pick::new(
                    ValueAgent::state_key(&picks.operation, &v.param),
                    v.executed.as_str(),
                    value_keys.clone(),
                )
            })
            .collect();
        let dep_picks: Vec<Pick> = picks
            .dependencies
            .iter()
            .map(|d| Pick::new(d.consumer.key(), d.producer.key(), d.alternatives.clone()))
            .collect();
        let mut participants = [
            Participant {
                table: &mut self.parameter.table,
                picks: vec![param_pick],
            },
            Participant {
                table: &mut self.value.table,
                picks: value_picks,
            },
            Participant {
                table: &mut self.dependency.table,
                picks: dep_picks,
            },
        ];
        joint_update(
            &mut participants,
            f64::from(shared_reward(status)),
            &self.config,
        )
    }
}

//! Request mutation operators and the mutation step.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::request::RequestPlan;
use crate::openapi::{ApiSpec, HttpMethod, OperationNode, ParamLocation, SchemaKind};
use crate::registry::Registry;

pub const DEFAULT_MUTATION_RATE: f64 = 0.2;

/// Length used for over-long strings when the schema sets no `maxLength`.
pub const OVERLONG_FALLBACK_LEN: usize = 1025;

pub const INVALID_CONTENT_TYPE: &str = "text/x-invalid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    DropRequired,
    WrongType,
    InvalidContentType,
    Overlong,
    MethodSwap,
}

impl MutationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MutationKind::DropRequired => "drop_required",
            MutationKind::WrongType => "wrong_type",
            MutationKind::InvalidContentType => "invalid_content_type",
            MutationKind::Overlong => "overlong",
            MutationKind::MethodSwap => "method_swap",
        }
    }
}

/// A single way of corrupting a plan.
pub trait MutationOperator: Send + Sync {
    fn kind(&self) -> MutationKind;
    fn applicable(&self, plan: &RequestPlan, spec: &ApiSpec) -> bool;
    /// Only called when `applicable` holds.
    fn apply(&self, plan: &mut RequestPlan, spec: &ApiSpec, rng: &mut dyn RngCore);
}

fn operation<'a>(plan: &RequestPlan, spec: &'a ApiSpec) -> Option<&'a OperationNode> {
    spec.operation(&plan.operation_id)
}

fn schema_kind(op: Option<&OperationNode>, name: &str, loc: ParamLocation) -> Option<SchemaKind> {
    op.and_then(|o| o.parameter(name, loc)).map(|p| p.kind())
}

pub struct DropRequired;

impl DropRequired {
    fn targets(plan: &RequestPlan, spec: &ApiSpec) -> Vec<usize> {
        let Some(op) = operation(plan, spec) else {
            return Vec::new();
        };
        plan.bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                b.location != ParamLocation::Path
                    && op
                        .parameter(&b.name, b.location)
                        .is_some_and(|p| p.required)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

impl MutationOperator for DropRequired {
    fn kind(&self) -> MutationKind {
        MutationKind::DropRequired
    }
    fn applicable(&self, plan: &RequestPlan, spec: &ApiSpec) -> bool {
        !Self::targets(plan, spec).is_empty()
    }
    fn apply(&self, plan: &mut RequestPlan, spec: &ApiSpec, rng: &mut dyn RngCore) {
        let targets = Self::targets(plan, spec);
        let i = *targets.choose(rng).expect("applicable");
        plan.bindings.remove(i);
    }
}

pub struct WrongType;

/// A value whose JSON type differs from `kind`.
pub fn wrong_typed(kind: Option<SchemaKind>) -> Value {
    match kind {
        Some(SchemaKind::String) => json!({"unexpected": [1, 2]}),
        Some(SchemaKind::Integer) | Some(SchemaKind::Number) => json!("not-a-number"),
        Some(SchemaKind::Boolean) => json!("maybe"),
        Some(SchemaKind::Array) | Some(SchemaKind::Object) => json!(42),
        None => json!(null),
    }
}

impl MutationOperator for WrongType {
    fn kind(&self) -> MutationKind {
        MutationKind::WrongType
    }
    fn applicable(&self, plan: &RequestPlan, _spec: &ApiSpec) -> bool {
        !plan.bindings.is_empty()
    }
    fn apply(&self, plan: &mut RequestPlan, spec: &ApiSpec, rng: &mut dyn RngCore) {
        let op = operation(plan, spec);
        let i = rng.random_range(0..plan.bindings.len());
        let b = &plan.bindings[i];
        let v = wrong_typed(schema_kind(op, &b.name, b.location));
        plan.bindings[i].value = v;
    }
}

pub struct InvalidContentType;

impl MutationOperator for InvalidContentType {
    fn kind(&self) -> MutationKind {
        MutationKind::InvalidContentType
    }
    fn applicable(&self, _plan: &RequestPlan, _spec: &ApiSpec) -> bool {
        true
    }
    fn apply(&self, plan: &mut RequestPlan, _spec: &ApiSpec, _rng: &mut dyn RngCore) {
        plan.content_type = Some(INVALID_CONTENT_TYPE.to_string());
    }
}

pub struct Overlong;

impl Overlong {
    fn targets(plan: &RequestPlan, spec: &ApiSpec) -> Vec<usize> {
        let op = operation(plan, spec);
        plan.bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| schema_kind(op, &b.name, b.location) == Some(SchemaKind::String))
            .map(|(i, _)| i)
            .collect()
    }
}

impl MutationOperator for Overlong {
    fn kind(&self) -> MutationKind {
        MutationKind::Overlong
    }
    fn applicable(&self, plan: &RequestPlan, spec: &ApiSpec) -> bool {
        !Self::targets(plan, spec).is_empty()
    }
    fn apply(&self, plan: &mut RequestPlan, spec: &ApiSpec, rng: &mut dyn RngCore) {
        let targets = Self::targets(plan, spec);
        let i = *targets.choose(rng).expect("applicable");
        let b = &plan.bindings[i];
        let len = operation(plan, spec)
            .and_then(|o| o.parameter(&b.name, b.location))
            .and_then(|p| p.constraints().max_length)
            .map_or(OVERLONG_FALLBACK_LEN, |m| m as usize + 1);
        plan.bindings[i].value = Value::String("A".repeat(len));
    }
}

pub struct MethodSwap;

/// Common verbs the path does not declare.
pub fn undeclared_methods(spec: &ApiSpec, path: &str) -> Vec<HttpMethod> {
    let declared = spec.methods_for_path(path);
    [
        HttpMethod::Get,
        HttpMethod::Post,
        HttpMethod::Put,
        HttpMethod::Patch,
        HttpMethod::Delete,
    ]
    .into_iter()
    .filter(|m| !declared.contains(m))
    .collect()
}

impl MutationOperator for MethodSwap {
    fn kind(&self) -> MutationKind {
        MutationKind::MethodSwap
    }
    fn applicable(&self, plan: &RequestPlan, spec: &ApiSpec) -> bool {
        !undeclared_methods(spec, &plan.path).is_empty()
    }
    fn apply(&self, plan: &mut RequestPlan, spec: &ApiSpec, rng: &mut dyn RngCore) {
        let ms = undeclared_methods(spec, &plan.path);
        plan.method = *ms.choose(rng).expect("applicable");
    }
}

pub type MutationFactory = fn() -> Box<dyn MutationOperator>;

/// The five built-in operators, registered under their kind names.
pub fn default_mutations() -> Registry<MutationFactory> {
    let mut r: Registry<MutationFactory> = Registry::new();
    r.register(MutationKind::DropRequired.as_str(), || {
        Box::new(DropRequired)
    })
    .register(MutationKind::WrongType.as_str(), || Box::new(WrongType))
    .register(MutationKind::InvalidContentType.as_str(), || {
        Box::new(InvalidContentType)
    })
    .register(MutationKind::Overlong.as_str(), || Box::new(Overlong))
    .register(MutationKind::MethodSwap.as_str(), || Box::new(MethodSwap));
    r
}

/// Instantiated operators in a fixed order.
pub struct Mutator {
    operators: Vec<Box<dyn MutationOperator>>,
    rate: f64,
}

impl Mutator {
    pub fn new(registry: &Registry<MutationFactory>, rate: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&rate),
            "mutation rate {rate} outside [0, 1]"
        );
        Mutator {
            operators: registry.iter().map(|(_, f)| f()).collect(),
            rate,
        }
    }

    pub fn with_defaults(rate: f64) -> Self {
        Self::new(&default_mutations(), rate)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// With probability `rate`, applies exactly one applicable operator chosen
    /// uniformly. One draw decides mutation; unmutated plans come back as is.
    pub fn maybe_mutate<R: Rng>(
        &self,
        plan: RequestPlan,
        spec: &ApiSpec,
        rng: &mut R,
    ) -> RequestPlan {
        if rng.random::<f64>() >= self.rate {
            return plan;
        }
        let candidates: Vec<&dyn MutationOperator> = self
            .operators
            .iter()
            .map(|b| b.as_ref())
            .filter(|o| o.applicable(&plan, spec))
            .collect();
        let Some(op) = candidates.choose(rng).copied() else {
            return plan;
        };
        let mut plan = plan;
        op.apply(&mut plan, spec, rng);
        plan.mutation = Some(op.kind());
        plan
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::request::Binding;
    use crate::openapi::{parse_spec, DocumentFormat};
    use crate::values::ValueSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SPEC: &str = r##"
openapi: 3.0.0
info: {title: t, version: '1'}
paths:
  /register:
    post:
      operationId: register
      requestBody:
        content:
          application/json:
            schema:
              type: object
              required: [email, password]
              properties:
                email: {type: string, maxLength: 50}
                password: {type: string}
                age: {type: integer}
      responses: {"201": {description: ok}}
"##;

    fn spec() -> ApiSpec {
        parse_spec(SPEC, DocumentFormat::Yaml).unwrap().spec
    }

    fn plan() -> RequestPlan {
        let mut p = RequestPlan::new("register", HttpMethod::Post, "/register");
        p.bindings.push(Binding::new(
            "email",
            ParamLocation::Body,
            json!("a@b.cd"),
            ValueSource::Llm,
        ));
        p.bindings.push(Binding::new(
            "password",
            ParamLocation::Body,
            json!("abc123"),
            ValueSource::Llm,
        ));
        p.bindings.push(Binding::new(
            "age",
            ParamLocation::Body,
            json!(3),
            ValueSource::Random,
        ));
        p
    }

    #[test]
    fn rate_zero_never_mutates() {
        let m = Mutator::with_defaults(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(m.maybe_mutate(plan(), &spec(), &mut rng), plan());
        }
    }

    #[test]
    fn rate_one_always_mutates_with_a_kind() {
        let m = Mutator::with_defaults(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut kinds = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let p = m.maybe_mutate(plan(), &spec(), &mut rng);
            assert!(p.mutated());
            assert_ne!(p, plan());
            kinds.insert(p.mutation.unwrap());
        }
        assert_eq!(kinds.len(), 5, "{kinds:?}");
    }

    #[test]
    fn twenty_percent_rate() {
        let m = Mutator::with_defaults(DEFAULT_MUTATION_RATE);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let spec = spec();
        let n = (0..10_000)
            .filter(|_| m.maybe_mutate(plan(), &spec, &mut rng).mutated())
            .count();
        let f = n as f64 / 10_000.0;
        assert!((0.19..=0.21).contains(&f), "{f}");
    }

    #[test]
    fn operators_behave() {
        let spec = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = plan();
        DropRequired.apply(&mut p, &spec, &mut rng);
        assert_eq!(p.bindings.len(), 2);
        assert!(p.binding("age", ParamLocation::Body).is_some());

        let mut p = plan();
        Overlong.apply(&mut p, &spec, &mut rng);
        let lens: Vec<usize> = p
            .bindings
            .iter()
            .filter_map(|b| b.value.as_str().map(str::len))
            .collect();
        assert!(
            lens.contains(&51) || lens.contains(&OVERLONG_FALLBACK_LEN),
            "{lens:?}"
        );

        let mut p = plan();
        MethodSwap.apply(&mut p, &spec, &mut rng);
        assert_ne!(p.method, HttpMethod::Post);

        let mut p = plan();
        InvalidContentType.apply(&mut p, &spec, &mut rng);
        assert_eq!(p.content_type.as_deref(), Some(INVALID_CONTENT_TYPE));

        assert_eq!(
            wrong_typed(Some(SchemaKind::Integer)),
            json!("not-a-number")
        );
        assert!(wrong_typed(Some(SchemaKind::String)).is_object());
    }

    #[test]
    fn drop_required_needs_a_required_binding() {
        let mut p = plan();
        p.bindings.retain(|b| b.name == "age");
        assert!(!DropRequired.applicable(&p, &spec()));
    }
}

//! Typed random values. Schema constraints are deliberately ignored.

use rand::distr::Alphanumeric;
use rand::Rng;
use serde_json::{Map, Value};

use crate::openapi::{SchemaKind, SchemaNode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomPolicy {
    pub string_len: (usize, usize),
    pub int_range: (i64, i64),
    pub number_range: (f64, f64),
    pub array_len: (usize, usize),
}

impl Default for RandomPolicy {
    fn default() -> Self {
        RandomPolicy {
            string_len: (1, 50),
            int_range: (-1024, 1024),
            number_range: (-1024.0, 1024.0),
            array_len: (0, 3),
        }
    }
}

pub fn random_value<R: Rng + ?Sized>(
    schema: &SchemaNode,
    policy: &RandomPolicy,
    rng: &mut R,
) -> Value {
    match schema.kind {
        SchemaKind::String => {
            let len = rng.random_range(policy.string_len.0..=policy.string_len.1);
            let s: String = (0..len).map(|_| rng.sample(Alphanumeric) as char).collect();
            Value::String(s)
        }
        SchemaKind::Integer => {
            Value::from(rng.random_range(policy.int_range.0..=policy.int_range.1))
        }
        SchemaKind::Number => {
            let x = rng.random_range(policy.number_range.0..=policy.number_range.1);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        SchemaKind::Boolean => Value::Bool(rng.random_bool(0.5)),
        SchemaKind::Array => {
            let len = rng.random_range(policy.array_len.0..=policy.array_len.1);
            let item = schema
                .items
                .as_deref()
                .cloned()
                .unwrap_or_else(|| SchemaNode::scalar(SchemaKind::String));
            Value::Array((0..len).map(|_| random_value(&item, policy, rng)).collect())
        }
        SchemaKind::Object => {
            let mut map = Map::new();
            for (name, child) in &schema.properties {
                map.insert(name.clone(), random_value(child, policy, rng));
            }
            Value::Object(map)
        }
    }
}

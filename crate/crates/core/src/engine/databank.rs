//! Stores of values seen in successful exchanges, and response decomposition.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use serde_json::Value;

use super::request::RequestPlan;
use crate::openapi::ParamLocation;
use crate::spdg::{ProducerRef, ProducerTarget};

pub const DEFAULT_FIELD_CAP: usize = 100;

/// Depth-first flattening of a JSON document into `(path, scalar)` pairs.
/// Object keys join with `.`; array positions are dropped so elements share
/// their container's path. Exact repeats are removed. Non-JSON yields nothing.
pub fn decompose_response(body: &str) -> Vec<(String, Value)> {
    match serde_json::from_str::<Value>(body) {
        Ok(v) => decompose_value(&v),
        Err(_) => Vec::new(),
    }
}

pub fn decompose_value(value: &Value) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    walk(value, "", &mut out);
    out
}

fn walk(value: &Value, path: &str, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let child = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                walk(v, &child, out);
            }
        }
        Value::Array(items) => {
            for v in items {
                walk(v, path, out);
            }
        }
        scalar => {
            // a bare top-level scalar has no field name to match against
            if !path.is_empty() && !out.iter().any(|(p, v)| p == path && v == scalar) {
                out.push((path.to_string(), scalar.clone()));
            }
        }
    }
}

/// True when `path` names `field` exactly or ends in `.field`.
pub fn path_matches(path: &str, field: &str) -> bool {
    path == field
        || (path.len() > field.len()
            && path.ends_with(field)
            && path.as_bytes()[path.len() - field.len() - 1] == b'.')
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OperationStore {
    pub successful_params: BTreeMap<String, VecDeque<Value>>,
    pub successful_body_props: BTreeMap<String, VecDeque<Value>>,
    pub response_fields: BTreeMap<String, VecDeque<Value>>,
}

impl OperationStore {
    fn table(&self, target: ProducerTarget) -> &BTreeMap<String, VecDeque<Value>> {
        match target {
            ProducerTarget::Parameters => &self.successful_params,
            ProducerTarget::Body => &self.successful_body_props,
            ProducerTarget::Response => &self.response_fields,
        }
    }

    fn table_mut(&mut self, target: ProducerTarget) -> &mut BTreeMap<String, VecDeque<Value>> {
        match target {
            ProducerTarget::Parameters => &mut self.successful_params,
            ProducerTarget::Body => &mut self.successful_body_props,
            ProducerTarget::Response => &mut self.response_fields,
        }
    }
}

/// A stored field address: operation, table and full path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StoredField {
    pub op: String,
    pub target: ProducerTarget,
    pub path: String,
}

impl StoredField {
    pub fn producer(&self) -> ProducerRef {
        ProducerRef::new(&self.op, &self.path, self.target)
    }
}

/// Per-operation value stores. Every list is deduplicated and capped with
/// oldest-first eviction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataBank {
    cap: usize,
    ops: BTreeMap<String, OperationStore>,
}

impl Default for DataBank {
    fn default() -> Self {
        Self::with_cap(DEFAULT_FIELD_CAP)
    }
}

impl DataBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: usize) -> Self {
        assert!(cap > 0, "field cap must be positive");
        DataBank {
            cap,
            ops: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.values().all(|s| {
            [
                &s.successful_params,
                &s.successful_body_props,
                &s.response_fields,
            ]
            .iter()
            .all(|t| t.values().all(VecDeque::is_empty))
        })
    }

    pub fn store(&self, op: &str) -> Option<&OperationStore> {
        self.ops.get(op)
    }

    /// Adds a value; returns false for an exact repeat or a null.
    pub fn push(&mut self, op: &str, target: ProducerTarget, path: &str, value: Value) -> bool {
        if value.is_null() {
            return false;
        }
        let cap = self.cap;
        let list = self
            .ops
            .entry(op.to_string())
            .or_default()
            .table_mut(target)
            .entry(path.to_string())
            .or_default();
        if list.contains(&value) {
            return false;
        }
        if list.len() == cap {
            list.pop_front();
        }
        list.push_back(value);
        true
    }

    /// Values stored for the producer's field, matched on the full path or a
    /// `.field` suffix, in path order then insertion order.
    pub fn values(&self, producer: &ProducerRef) -> Vec<&Value> {
        let Some(store) = self.ops.get(&producer.op) else {
            return Vec::new();
        };
        store
            .table(producer.target)
            .iter()
            .filter(|(path, _)| path_matches(path, &producer.field))
            .flat_map(|(_, vs)| vs.iter())
            .collect()
    }

    pub fn has_values(&self, producer: &ProducerRef) -> bool {
        !self.values(producer).is_empty()
    }

    /// Every non-empty stored field across all operations, in a stable order.
    pub fn fields(&self) -> Vec<StoredField> {
        let mut out = Vec::new();
        for (op, store) in &self.ops {
            for target in [
                ProducerTarget::Parameters,
                ProducerTarget::Body,
                ProducerTarget::Response,
            ] {
                for (path, vs) in store.table(target) {
                    if !vs.is_empty() {
                        out.push(StoredField {
                            op: op.clone(),
                            target,
                            path: path.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// Stores the bindings and decomposed response of a successful,
    /// unmutated exchange. Anything else leaves the bank untouched. Returns
    /// the decomposed response pairs that were considered.
    pub fn record_success(
        &mut self,
        plan: &RequestPlan,
        status: u16,
        body: &str,
    ) -> Vec<(String, Value)> {
        if !(200..300).contains(&status) || plan.mutation.is_some() {
            return Vec::new();
        }
        let op = plan.operation_id.as_str();
        for b in &plan.bindings {
            match b.location {
                ParamLocation::Body => {
                    self.push(op, ProducerTarget::Body, &b.name, b.value.clone());
                    for (sub, v) in decompose_value(&b.value) {
                        self.push(op, ProducerTarget::Body, &format!("{}.{sub}", b.name), v);
                    }
                }
                _ => {
                    self.push(op, ProducerTarget::Parameters, &b.name, b.value.clone());
                }
            }
        }
        let pairs = decompose_response(body);
        for (path, v) in &pairs {
            self.push(op, ProducerTarget::Response, path, v.clone());
        }
        pairs
    }
}

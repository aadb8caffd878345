//! Request plans and their concrete HTTP form.

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::mutate::MutationKind;
use crate::openapi::{ApiSpec, HttpMethod, ParamLocation, SchemaKind};
use crate::spdg::{EdgeKey, ProducerRef};
use crate::values::ValueSource;

/// Unreserved characters stay literal inside a path segment.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

#[derive(Debug, Error, PartialEq)]
pub enum RequestError {
    #[error("operation `{0}` is not in the specification")]
    UnknownOperation(String),
    #[error("path variable `{0}` has no binding")]
    UnboundPathVariable(String),
}

/// Where a dependency value came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyUse {
    pub producer: ProducerRef,
    /// The graph edge used; `None` for a random exploratory query.
    pub edge: Option<EdgeKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    pub location: ParamLocation,
    pub value: Value,
    pub source: ValueSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<DependencyUse>,
}

impl Binding {
    pub fn new(name: &str, location: ParamLocation, value: Value, source: ValueSource) -> Self {
        Binding {
            name: name.to_string(),
            location,
            value,
            source,
            dependency: None,
        }
    }
}

/// One planned request. `mutation` is set exactly when the plan was mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPlan {
    pub operation_id: String,
    pub method: HttpMethod,
    pub path: String,
    pub combination: Vec<String>,
    pub bindings: Vec<Binding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<MutationKind>,
}

impl RequestPlan {
    pub fn new(operation_id: &str, method: HttpMethod, path: &str) -> Self {
        RequestPlan {
            operation_id: operation_id.to_string(),
            method,
            path: path.to_string(),
            combination: Vec::new(),
            bindings: Vec::new(),
            content_type: None,
            mutation: None,
        }
    }

    pub fn mutated(&self) -> bool {
        self.mutation.is_some()
    }

    pub fn binding(&self, name: &str, location: ParamLocation) -> Option<&Binding> {
        self.bindings
            .iter()
            .find(|b| b.name == name && b.location == location)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HttpRequest {
    pub method: HttpMethod,
    /// Resolved and percent-encoded path, without the query string.
    pub path: String,
    pub query: Vec<(String, String)>,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

impl HttpRequest {
    /// Path plus form-encoded query string.
    pub fn target(&self) -> String {
        if self.query.is_empty() {
            return self.path.clone();
        }
        let qs = url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(self.query.iter())
            .finish();
        format!("{}?{qs}", self.path)
    }

    pub fn url(&self, base_url: &str) -> String {
        format!("{}{}", base_url.trim_end_matches('/'), self.target())
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Text form of a value for paths, queries and headers.
pub fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

pub fn build_request(plan: &RequestPlan, spec: &ApiSpec) -> Result<HttpRequest, RequestError> {
    let op = spec
        .operation(&plan.operation_id)
        .ok_or_else(|| RequestError::UnknownOperation(plan.operation_id.clone()))?;

    let mut path = String::new();
    let mut rest = plan.path.as_str();
    while let Some(open) = rest.find('{') {
        let Some(len) = rest[open..].find('}') else {
            break;
        };
        let var = &rest[open + 1..open + len];
        let b = plan
            .binding(var, ParamLocation::Path)
            .ok_or_else(|| RequestError::UnboundPathVariable(var.to_string()))?;
        path.push_str(&rest[..open]);
        path.extend(utf8_percent_encode(&value_text(&b.value), SEGMENT));
        rest = &rest[open + len + 1..];
    }
    path.push_str(rest);

    let mut query = Vec::new();
    let mut headers = Vec::new();
    let mut body_props = Map::new();
    let mut whole_body = None;
    let body_is_object = op
        .request_body
        .as_ref()
        .is_none_or(|b| b.kind == SchemaKind::Object);
    for b in &plan.bindings {
        match b.location {
            ParamLocation::Path => {}
            ParamLocation::Query => query.push((b.name.clone(), value_text(&b.value))),
            ParamLocation::Header => headers.push((b.name.clone(), value_text(&b.value))),
            ParamLocation::Body if !body_is_object => whole_body = Some(b.value.clone()),
            ParamLocation::Body => {
                body_props.insert(b.name.clone(), b.value.clone());
            }
        }
    }
    let body = match whole_body {
        Some(v) => Some(v.to_string()),
        None if !body_props.is_empty()
            || (op.request_body.is_some() && plan.method == op.method) =>
        {
            Some(Value::Object(body_props).to_string())
        }
        None => None,
    };
    if body.is_some() || plan.content_type.is_some() {
        let ct = plan
            .content_type
            .clone()
            .unwrap_or_else(|| "application/json".to_string());
        headers.push(("Content-Type".to_string(), ct));
    }
    Ok(HttpRequest {
        method: plan.method,
        path,
        query,
        headers,
        body,
    })
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Normalized view of an OpenAPI 3 document: every `$ref` already inlined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSpec {
    pub title: String,
    pub base_url: String,
    pub operations: Vec<OperationNode>,
}

impl ApiSpec {
    pub fn operation(&self, id: &str) -> Option<&OperationNode> {
        self.operations.iter().find(|op| op.id == id)
    }

    /// Methods declared for a path template, in document order.
    pub fn methods_for_path(&self, path: &str) -> Vec<HttpMethod> {
        self.operations
            .iter()
            .filter(|op| op.path == path)
            .map(|op| op.method)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Put,
    Post,
    Delete,
    Options,
    Head,
    Patch,
    Trace,
}

impl HttpMethod {
    pub const ALL: [HttpMethod; 8] = [
        HttpMethod::Get,
        HttpMethod::Put,
        HttpMethod::Post,
        HttpMethod::Delete,
        HttpMethod::Options,
        HttpMethod::Head,
        HttpMethod::Patch,
        HttpMethod::Trace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Put => "PUT",
            HttpMethod::Post => "POST",
            HttpMethod::Delete => "DELETE",
            HttpMethod::Options => "OPTIONS",
            HttpMethod::Head => "HEAD",
            HttpMethod::Patch => "PATCH",
            HttpMethod::Trace => "TRACE",
        }
    }

    /// Parses the lowercase key used under an OpenAPI path item.
    pub fn from_path_item_key(key: &str) -> Option<Self> {
        HttpMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(key))
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One API operation (method + path), the node type of the dependency graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationNode {
    pub id: String,
    pub method: HttpMethod,
    pub path: String,
    /// Path, query and header parameters followed by the top-level request
    /// body properties (location `body`).
    pub parameters: Vec<ParameterDef>,
    pub request_body: Option<SchemaNode>,
    /// Status code pattern (`"201"`, `"2XX"`, `"default"`) to response schema.
    pub responses: BTreeMap<String, SchemaNode>,
}

impl OperationNode {
    pub fn parameter(&self, name: &str, location: ParamLocation) -> Option<&ParameterDef> {
        self.parameters
            .iter()
            .find(|p| p.name == name && p.location == location)
    }

    /// Response schemas for 2xx status patterns only.
    pub fn success_responses(&self) -> impl Iterator<Item = &SchemaNode> {
        self.responses
            .iter()
            .filter(|(code, _)| code.starts_with('2'))
            .map(|(_, schema)| schema)
    }

    /// Names of `{var}` segments in the path template.
    pub fn path_variables(&self) -> Vec<String> {
        path_template_variables(&self.path)
    }
}

pub fn path_template_variables(path: &str) -> Vec<String> {
    let mut vars = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        let name = &rest[start + 1..start + len];
        if !name.is_empty() {
            vars.push(name.to_string());
        }
        rest = &rest[start + len + 1..];
    }
    vars
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    Body,
}

impl ParamLocation {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamLocation::Path => "path",
            ParamLocation::Query => "query",
            ParamLocation::Header => "header",
            ParamLocation::Body => "body",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl SchemaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::String => "string",
            SchemaKind::Integer => "integer",
            SchemaKind::Number => "number",
            SchemaKind::Boolean => "boolean",
            SchemaKind::Array => "array",
            SchemaKind::Object => "object",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => SchemaKind::String,
            "integer" => SchemaKind::Integer,
            "number" => SchemaKind::Number,
            "boolean" => SchemaKind::Boolean,
            "array" => SchemaKind::Array,
            "object" => SchemaKind::Object,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub location: ParamLocation,
    pub required: bool,
    pub schema: SchemaNode,
}

impl ParameterDef {
    pub fn kind(&self) -> SchemaKind {
        self.schema.kind
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.schema.constraints
    }
}

/// Validation keywords carried over from the schema. `format` and `example`
/// are not validation constraints but feed value generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<Value>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self == &ConstraintSet::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaNode {
    pub kind: SchemaKind,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub properties: IndexMap<String, SchemaNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Box<SchemaNode>>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub required_names: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "ConstraintSet::is_empty")]
    pub constraints: ConstraintSet,
}

impl SchemaNode {
    pub fn scalar(kind: SchemaKind) -> Self {
        SchemaNode {
            kind,
            properties: IndexMap::new(),
            items: None,
            required_names: BTreeSet::new(),
            constraints: ConstraintSet::default(),
        }
    }

    /// Every property name reachable from this schema, depth first, first
    /// occurrence wins. Array items are transparent.
    pub fn property_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut Vec<String>) {
        for (name, child) in &self.properties {
            if !out.contains(name) {
                out.push(name.clone());
            }
            child.collect_names(out);
        }
        if let Some(items) = &self.items {
            items.collect_names(out);
        }
    }
}

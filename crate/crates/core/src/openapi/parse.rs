use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use super::model::{
    path_template_variables, ApiSpec, ConstraintSet, HttpMethod, OperationNode, ParamLocation,
    ParameterDef, SchemaKind, SchemaNode,
};

/// How many times the same `$ref` may be expanded along one schema path
/// before the recursion is cut with an opaque object node.
pub const MAX_REF_EXPANSIONS: usize = 5;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unresolvable reference `{0}`")]
    UnresolvableRef(String),
    #[error("unsupported document version `{field}: {value}`; only OpenAPI 3.x is accepted")]
    UnsupportedVersion { field: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    NoOperations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    Json,
    Yaml,
}

impl DocumentFormat {
    /// Guesses from the file extension, defaulting to YAML (a JSON superset).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => DocumentFormat::Json,
            _ => DocumentFormat::Yaml,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedSpec {
    pub spec: ApiSpec,
    pub warnings: Vec<ParseWarning>,
}

pub fn parse_spec(document: &str, format: DocumentFormat) -> Result<ParsedSpec, SpecError> {
    let root = match format {
        DocumentFormat::Json => serde_json::from_str::<Value>(document)
            .map_err(|e| SpecError::MalformedDocument(e.to_string()))?,
        DocumentFormat::Yaml => {
            let yaml: serde_yaml::Value = serde_yaml::from_str(document)
                .map_err(|e| SpecError::MalformedDocument(e.to_string()))?;
            yaml_to_json(yaml)?
        }
    };
    Parser { root: &root }.run()
}

fn yaml_to_json(v: serde_yaml::Value) -> Result<Value, SpecError> {
    use serde_yaml::Value as Y;
    Ok(match v {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                n.as_f64()
                    .and_then(serde_json::Number::from_f64)
                    .map(Value::Number)
                    .unwrap_or(Value::Null)
            }
        }
        Y::String(s) => Value::String(s),
        Y::Sequence(seq) => Value::Array(
            seq.into_iter()
                .map(yaml_to_json)
                .collect::<Result<_, _>>()?,
        ),
        Y::Mapping(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    other => {
                        return Err(SpecError::MalformedDocument(format!(
                            "unsupported mapping key {other:?}"
                        )))
                    }
                };
                out.insert(key, yaml_to_json(v)?);
            }
            Value::Object(out)
        }
        Y::Tagged(tagged) => yaml_to_json(tagged.value)?,
    })
}

struct Parser<'a> {
    root: &'a Value,
}

impl<'a> Parser<'a> {
    fn run(&self) -> Result<ParsedSpec, SpecError> {
        let root = self
            .root
            .as_object()
            .ok_or_else(|| SpecError::MalformedDocument("top level is not a mapping".into()))?;
        check_version(root)?;

        let title = root
            .get("info")
            .and_then(|i| i.get("title"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let base_url = root
            .get("servers")
            .and_then(Value::as_array)
            .and_then(|s| s.first())
            .and_then(|s| s.get("url"))
            .and_then(Value::as_str)
            .unwrap_or("http://localhost")
            .trim_end_matches('/')
            .to_string();

        let mut operations: Vec<OperationNode> = Vec::new();
        if let Some(paths) = root.get("paths") {
            let paths = paths
                .as_object()
                .ok_or_else(|| SpecError::MalformedDocument("`paths` is not a mapping".into()))?;
            for (raw_path, item) in paths {
                let item = self.deref(item)?;
                let Some(item) = item.as_object() else {
                    continue;
                };
                let path = if raw_path.starts_with('/') {
                    raw_path.clone()
                } else {
                    format!("/{raw_path}")
                };
                let shared = self.parameters(item.get("parameters"))?;
                for (key, op) in item {
                    let Some(method) = HttpMethod::from_path_item_key(key) else {
                        continue;
                    };
                    let op = self.deref(op)?;
                    let Some(op) = op.as_object() else {
                        continue;
                    };
                    let node = self.operation(method, &path, op, &shared)?;
                    operations.push(node);
                }
            }
        }
        dedupe_ids(&mut operations);

        let mut warnings = Vec::new();
        if operations.is_empty() {
            tracing::warn!("document declares no operations");
            warnings.push(ParseWarning::NoOperations);
        }
        Ok(ParsedSpec {
            spec: ApiSpec {
                title,
                base_url,
                operations,
            },
            warnings,
        })
    }

    fn operation(
        &self,
        method: HttpMethod,
        path: &str,
        op: &'a Map<String, Value>,
        shared: &[ParameterDef],
    ) -> Result<OperationNode, SpecError> {
        let id = op
            .get("operationId")
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| synthesized_id(method, path));

        // Operation-level parameters override path-level ones with the same (name, in).
        let mut parameters: Vec<ParameterDef> = shared.to_vec();
        for p in self.parameters(op.get("parameters"))? {
            if let Some(existing) = parameters
                .iter_mut()
                .find(|e| e.name == p.name && e.location == p.location)
            {
                *existing = p;
            } else {
                parameters.push(p);
            }
        }
        for var in path_template_variables(path) {
            if !parameters
                .iter()
                .any(|p| p.location == ParamLocation::Path && p.name == var)
            {
                parameters.push(ParameterDef {
                    name: var,
                    location: ParamLocation::Path,
                    required: true,
                    schema: SchemaNode::scalar(SchemaKind::String),
                });
            }
        }

        let mut request_body = None;
        if let Some(body) = op.get("requestBody") {
            let body = self.deref(body)?;
            let body_required = body
                .get("required")
                .and_then(Value::as_bool)
                .unwrap_or(false);
            if let Some(schema) = body.get("content").and_then(pick_media_schema) {
                let node = self.schema(schema, &mut Vec::new())?;
                if node.kind == SchemaKind::Object {
                    for (name, prop) in &node.properties {
                        parameters.push(ParameterDef {
                            name: name.clone(),
                            location: ParamLocation::Body,
                            required: node.required_names.contains(name),
                            schema: prop.clone(),
                        });
                    }
                } else {
                    parameters.push(ParameterDef {
                        name: "body".into(),
                        location: ParamLocation::Body,
                        required: body_required,
                        schema: node.clone(),
                    });
                }
                request_body = Some(node);
            }
        }

        let mut responses = BTreeMap::new();
        if let Some(map) = op.get("responses").and_then(Value::as_object) {
            for (code, response) in map {
                let response = self.deref(response)?;
                if let Some(schema) = response.get("content").and_then(pick_media_schema) {
                    responses.insert(code.clone(), self.schema(schema, &mut Vec::new())?);
                }
            }
        }

        Ok(OperationNode {
            id,
            method,
            path: path.to_string(),
            parameters,
            request_body,
            responses,
        })
    }

    fn parameters(&self, list: Option<&'a Value>) -> Result<Vec<ParameterDef>, SpecError> {
        let mut out = Vec::new();
        let Some(list) = list.and_then(Value::as_array) else {
            return Ok(out);
        };
        for raw in list {
            let p = self.deref(raw)?;
            let Some(name) = p
                .get("name")
                .and_then(Value::as_str)
                .filter(|n| !n.is_empty())
            else {
                continue;
            };
            let location = match p.get("in").and_then(Value::as_str) {
                Some("path") => ParamLocation::Path,
                Some("query") => ParamLocation::Query,
                Some("header") => ParamLocation::Header,
                // cookie parameters and unknown locations are not requestable here
                _ => continue,
            };
            let schema = match (
                p.get("schema"),
                p.get("content").and_then(pick_media_schema),
            ) {
                (Some(s), _) | (None, Some(s)) => self.schema(s, &mut Vec::new())?,
                (None, None) => SchemaNode::scalar(SchemaKind::String),
            };
            let required = location == ParamLocation::Path
                || p.get("required").and_then(Value::as_bool).unwrap_or(false);
            out.push(ParameterDef {
                name: name.to_string(),
                location,
                required,
                schema,
            });
        }
        Ok(out)
    }

    /// Follows `$ref` chains on non-schema objects (parameters, bodies, responses).
    fn deref(&self, mut v: &'a Value) -> Result<&'a Value, SpecError> {
        let mut hops = 0;
        while let Some(r) = v.get("$ref").and_then(Value::as_str) {
            v = self.lookup(r)?;
            hops += 1;
            if hops > 32 {
                return Err(SpecError::UnresolvableRef(r.to_string()));
            }
        }
        Ok(v)
    }

    fn lookup(&self, reference: &str) -> Result<&'a Value, SpecError> {
        let pointer = reference
            .strip_prefix('#')
            .ok_or_else(|| SpecError::UnresolvableRef(reference.to_string()))?;
        self.root
            .pointer(pointer)
            .ok_or_else(|| SpecError::UnresolvableRef(reference.to_string()))
    }

    fn schema(&self, v: &'a Value, stack: &mut Vec<String>) -> Result<SchemaNode, SpecError> {
        if let Some(r) = v.get("$ref").and_then(Value::as_str) {
            let target = self.lookup(r)?;
            if stack.iter().filter(|s| *s == r).count() >= MAX_REF_EXPANSIONS {
                return Ok(SchemaNode::scalar(SchemaKind::Object));
            }
            stack.push(r.to_string());
            let node = self.schema(target, stack);
            stack.pop();
            return node;
        }
        let Some(obj) = v.as_object() else {
            // `true` / `{}`-like schemas
            return Ok(SchemaNode::scalar(SchemaKind::Object));
        };

        if let Some(all) = obj.get("allOf").and_then(Value::as_array) {
            let mut merged = SchemaNode::scalar(SchemaKind::Object);
            let mut kind = None;
            for part in all {
                let node = self.schema(part, stack)?;
                if node.kind != SchemaKind::Object {
                    kind.get_or_insert(node.kind);
                }
                merge_into(&mut merged, node);
            }
            let own = self.plain_schema(obj, stack)?;
            merge_into(&mut merged, own);
            if merged.properties.is_empty() {
                if let Some(k) = kind {
                    merged.kind = k;
                }
            }
            return Ok(merged);
        }
        for key in ["oneOf", "anyOf"] {
            if let Some(first) = obj
                .get(key)
                .and_then(Value::as_array)
                .and_then(|a| a.first())
            {
                let mut node = self.schema(first, stack)?;
                if node.kind == SchemaKind::Object {
                    let own = self.plain_schema(obj, stack)?;
                    merge_into(&mut node, own);
                }
                return Ok(node);
            }
        }
        self.plain_schema(obj, stack)
    }

    fn plain_schema(
        &self,
        obj: &'a Map<String, Value>,
        stack: &mut Vec<String>,
    ) -> Result<SchemaNode, SpecError> {
        let declared = match obj.get("type") {
            Some(Value::String(t)) => SchemaKind::parse(t),
            Some(Value::Array(ts)) => ts
                .iter()
                .filter_map(Value::as_str)
                .filter(|t| *t != "null")
                .find_map(SchemaKind::parse),
            _ => None,
        };
        let kind = declared.unwrap_or_else(|| {
            if obj.contains_key("properties") {
                SchemaKind::Object
            } else if obj.contains_key("items") {
                SchemaKind::Array
            } else if obj.contains_key("enum") || obj.contains_key("pattern") {
                SchemaKind::String
            } else {
                SchemaKind::Object
            }
        });

        let mut node = SchemaNode::scalar(kind);
        node.constraints = constraints(obj)?;
        match kind {
            SchemaKind::Object => {
                if let Some(props) = obj.get("properties").and_then(Value::as_object) {
                    let mut out = IndexMap::new();
                    for (name, prop) in props {
                        out.insert(name.clone(), self.schema(prop, stack)?);
                    }
                    node.properties = out;
                }
                if let Some(req) = obj.get("required").and_then(Value::as_array) {
                    node.required_names = req
                        .iter()
                        .filter_map(Value::as_str)
                        .map(str::to_string)
                        .collect::<BTreeSet<_>>();
                }
            }
            SchemaKind::Array => {
                let items = match obj.get("items") {
                    Some(items) => self.schema(items, stack)?,
                    None => SchemaNode::scalar(SchemaKind::String),
                };
                node.items = Some(Box::new(items));
            }
            _ => {}
        }
        Ok(node)
    }
}

fn check_version(root: &Map<String, Value>) -> Result<(), SpecError> {
    if let Some(v) = root.get("openapi") {
        let v = value_text(v);
        if v.starts_with('3') {
            return Ok(());
        }
        return Err(SpecError::UnsupportedVersion {
            field: "openapi",
            value: v,
        });
    }
    if let Some(v) = root.get("swagger") {
        return Err(SpecError::UnsupportedVersion {
            field: "swagger",
            value: value_text(v),
        });
    }
    Err(SpecError::MalformedDocument(
        "missing `openapi` version field".into(),
    ))
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn pick_media_schema(content: &Value) -> Option<&Value> {
    let content = content.as_object()?;
    let choice = content
        .get("application/json")
        .or_else(|| {
            content
                .iter()
                .find(|(k, _)| k.contains("json"))
                .map(|(_, v)| v)
        })
        .or_else(|| content.values().next())?;
    choice.get("schema")
}

fn constraints(obj: &Map<String, Value>) -> Result<ConstraintSet, SpecError> {
    let c = ConstraintSet {
        pattern: obj
            .get("pattern")
            .and_then(Value::as_str)
            .map(str::to_string),
        min_length: obj.get("minLength").and_then(Value::as_u64),
        max_length: obj.get("maxLength").and_then(Value::as_u64),
        minimum: obj.get("minimum").and_then(Value::as_f64),
        maximum: obj.get("maximum").and_then(Value::as_f64),
        enum_values: obj.get("enum").and_then(Value::as_array).cloned(),
        format: obj
            .get("format")
            .and_then(Value::as_str)
            .map(str::to_string),
        example: obj.get("example").cloned().or_else(|| {
            obj.get("examples")
                .and_then(Value::as_array)
                .and_then(|a| a.first())
                .cloned()
        }),
    };
    if let (Some(lo), Some(hi)) = (c.min_length, c.max_length) {
        if lo > hi {
            return Err(SpecError::MalformedDocument(format!(
                "minLength {lo} exceeds maxLength {hi}"
            )));
        }
    }
    if let (Some(lo), Some(hi)) = (c.minimum, c.maximum) {
        if lo > hi {
            return Err(SpecError::MalformedDocument(format!(
                "minimum {lo} exceeds maximum {hi}"
            )));
        }
    }
    Ok(c)
}

fn merge_into(target: &mut SchemaNode, other: SchemaNode) {
    for (k, v) in other.properties {
        target.properties.entry(k).or_insert(v);
    }
    target.required_names.extend(other.required_names);
    let c = &mut target.constraints;
    let o = other.constraints;
    c.pattern = c.pattern.take().or(o.pattern);
    c.min_length = c.min_length.or(o.min_length);
    c.max_length = c.max_length.or(o.max_length);
    c.minimum = c.minimum.or(o.minimum);
    c.maximum = c.maximum.or(o.maximum);
    c.enum_values = c.enum_values.take().or(o.enum_values);
    c.format = c.format.take().or(o.format);
    c.example = c.example.take().or(o.example);
    if target.items.is_none() {
        target.items = other.items;
    }
}

pub fn synthesized_id(method: HttpMethod, path: &str) -> String {
    format!("{method} {path}")
}

fn dedupe_ids(ops: &mut [OperationNode]) {
    let mut seen = BTreeSet::new();
    for op in ops.iter_mut() {
        if !seen.insert(op.id.clone()) {
            let fresh = synthesized_id(op.method, &op.path);
            tracing::warn!(duplicate = %op.id, replacement = %fresh, "duplicate operationId");
            op.id = fresh;
            seen.insert(op.id.clone());
        }
    }
}

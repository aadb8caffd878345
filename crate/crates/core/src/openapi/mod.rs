//! OpenAPI 3 parsing into a normalized operation model.

mod model;
mod parse;

pub use model::{
    path_template_variables, ApiSpec, ConstraintSet, HttpMethod, OperationNode, ParamLocation,
    ParameterDef, SchemaKind, SchemaNode,
};
pub use parse::{
    parse_spec, synthesized_id, DocumentFormat, ParseWarning, ParsedSpec, SpecError,
    MAX_REF_EXPANSIONS,
};

/// An input field of an operation with the location it is sent in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputField {
    pub name: String,
    pub location: ParamLocation,
}

/// Input fields of an operation: parameter names, then every property name
/// inside the request body (nested names included, first occurrence wins).
pub fn input_fields(op: &OperationNode) -> Vec<InputField> {
    let mut out: Vec<InputField> = Vec::new();
    let mut push = |name: &str, location: ParamLocation| {
        if !out.iter().any(|f| f.name == name && f.location == location) {
            out.push(InputField {
                name: name.to_string(),
                location,
            });
        }
    };
    for p in &op.parameters {
        push(&p.name, p.location);
    }
    if let Some(body) = &op.request_body {
        for name in body.property_names() {
            push(&name, ParamLocation::Body);
        }
    }
    out
}

/// Property names of all 2xx response schemas, recursively.
pub fn output_fields(op: &OperationNode) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for schema in op.success_responses() {
        for name in schema.property_names() {
            if !out.contains(&name) {
                out.push(name);
            }
        }
    }
    out
}

/// `(inputs, outputs)` name lists used for dependency inference.
pub fn extract_io_names(op: &OperationNode) -> (Vec<String>, Vec<String>) {
    let mut inputs: Vec<String> = Vec::new();
    for f in input_fields(op) {
        if !inputs.contains(&f.name) {
            inputs.push(f.name);
        }
    }
    (inputs, output_fields(op))
}

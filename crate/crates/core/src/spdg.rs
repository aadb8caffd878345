//! Semantic property dependency graph.
//!
//! An edge `consumer -> producer` says the producer operation may supply a
//! value for one of the consumer's input fields. Edges are seeded from
//! embedding similarity of field names, then strengthened or weakened by
//! server feedback; edges that drop below the prune floor are never offered
//! again.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::openapi::{input_fields, output_fields, ApiSpec, ParamLocation};
use crate::semantics::{cosine, name_vector, EmbeddingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsumerLocation {
    Query,
    Body,
}

impl ConsumerLocation {
    /// Path parameters are categorized with query parameters; headers take
    /// no part in dependency inference.
    pub fn from_param(location: ParamLocation) -> Option<Self> {
        match location {
            ParamLocation::Path | ParamLocation::Query => Some(ConsumerLocation::Query),
            ParamLocation::Body => Some(ConsumerLocation::Body),
            ParamLocation::Header => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConsumerLocation::Query => "query",
            ConsumerLocation::Body => "body",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProducerTarget {
    Parameters,
    Body,
    Response,
}

impl ProducerTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ProducerTarget::Parameters => "parameters",
            ProducerTarget::Body => "body",
            ProducerTarget::Response => "response",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOrigin {
    Semantic,
    Discovered,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConsumerRef {
    pub op: String,
    pub field: String,
    pub location: ConsumerLocation,
}

impl ConsumerRef {
    pub fn new(op: &str, field: &str, location: ConsumerLocation) -> Self {
        ConsumerRef {
            op: op.to_string(),
            field: field.to_string(),
            location,
        }
    }

    /// State key used by the dependency agent's Q-table.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.op, self.location.as_str(), self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProducerRef {
    pub op: String,
    pub field: String,
    pub target: ProducerTarget,
}

impl ProducerRef {
    pub fn new(op: &str, field: &str, target: ProducerTarget) -> Self {
        ProducerRef {
            op: op.to_string(),
            field: field.to_string(),
            target,
        }
    }

    /// Action key used by the dependency agent's Q-table.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.op, self.target.as_str(), self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub consumer: ConsumerRef,
    pub producer: ProducerRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdgEdge {
    pub consumer: ConsumerRef,
    pub producer: ProducerRef,
    pub similarity: f64,
    pub refined_weight: f64,
    pub origin: EdgeOrigin,
    /// Created by the top-k fallback rather than by passing the threshold.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub pruned: bool,
}

impl SpdgEdge {
    pub fn key(&self) -> EdgeKey {
        EdgeKey {
            consumer: self.consumer.clone(),
            producer: self.producer.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdgConfig {
    pub similarity_threshold: f64,
    pub fallback_top_k: usize,
    pub refine_step: f64,
    pub prune_floor: f64,
    /// Initial weight of edges discovered at runtime.
    pub discovered_weight: f64,
}

impl Default for SpdgConfig {
    fn default() -> Self {
        SpdgConfig {
            similarity_threshold: 0.7,
            fallback_top_k: 5,
            refine_step: 0.05,
            prune_floor: 0.1,
            discovered_weight: 0.75,
        }
    }
}

impl SpdgConfig {
    pub fn validate(&self) -> Result<(), SpdgError> {
        let ok = self.similarity_threshold > 0.0
            && self.similarity_threshold < 1.0
            && self.fallback_top_k >= 1
            && self.refine_step > 0.0
            && self.refine_step < 1.0
            && (0.0..=1.0).contains(&self.prune_floor)
            && (0.0..=1.0).contains(&self.discovered_weight);
        if ok {
            Ok(())
        } else {
            Err(SpdgError::InvalidConfig(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Error)]
pub enum SpdgError {
    #[error("no edge {0}")]
    UnknownEdge(EdgeKey),
    #[error("edge {0} already exists")]
    DuplicateEdge(EdgeKey),
    #[error("edge {0} would connect an operation to itself")]
    SelfEdge(EdgeKey),
    #[error("invalid graph configuration {0:?}")]
    InvalidConfig(SpdgConfig),
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}({}) <- {}.{}({})",
            self.consumer.op,
            self.consumer.field,
            self.consumer.location.as_str(),
            self.producer.op,
            self.producer.field,
            self.producer.target.as_str()
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Spdg {
    pub nodes: Vec<String>,
    edges: Vec<SpdgEdge>,
    pub config: SpdgConfig,
    #[serde(skip)]
    index: HashMap<EdgeKey, usize>,
}

impl Spdg {
    pub fn empty(nodes: Vec<String>, config: SpdgConfig) -> Self {
        Spdg {
            nodes,
            edges: Vec::new(),
            config,
            index: HashMap::new(),
        }
    }

    pub fn edges(&self) -> &[SpdgEdge] {
        &self.edges
    }

    pub fn edge(&self, key: &EdgeKey) -> Option<&SpdgEdge> {
        self.index.get(key).map(|&i| &self.edges[i])
    }

    /// Unpruned edges whose consumer is exactly `consumer`.
    pub fn candidates<'a>(
        &'a self,
        consumer: &'a ConsumerRef,
    ) -> impl Iterator<Item = &'a SpdgEdge> {
        self.edges
            .iter()
            .filter(move |e| !e.pruned && &e.consumer == consumer)
    }

    pub fn outgoing<'a>(&'a self, op: &'a str) -> impl Iterator<Item = &'a SpdgEdge> {
        self.edges.iter().filter(move |e| e.consumer.op == op)
    }

    /// Operation-level weight: the maximum refined weight over unpruned field
    /// edges between the two operations.
    pub fn operation_weight(&self, consumer_op: &str, producer_op: &str) -> Option<f64> {
        self.edges
            .iter()
            .filter(|e| !e.pruned && e.consumer.op == consumer_op && e.producer.op == producer_op)
            .map(|e| e.refined_weight)
            .fold(None, |acc: Option<f64>, w| {
                Some(acc.map_or(w, |a| a.max(w)))
            })
    }

    fn insert(&mut self, edge: SpdgEdge) -> Result<&SpdgEdge, SpdgError> {
        let key = edge.key();
        if key.consumer.op == key.producer.op {
            return Err(SpdgError::SelfEdge(key));
        }
        if self.index.contains_key(&key) {
            return Err(SpdgError::DuplicateEdge(key));
        }
        self.edges.push(edge);
        let i = self.edges.len() - 1;
        self.index.insert(key, i);
        Ok(&self.edges[i])
    }

    pub fn refine_edge(&mut self, key: &EdgeKey, outcome: Outcome) -> Result<&SpdgEdge, SpdgError> {
        let &i = self
            .index
            .get(key)
            .ok_or_else(|| SpdgError::UnknownEdge(key.clone()))?;
        let step = self.config.refine_step;
        let floor = self.config.prune_floor;
        let edge = &mut self.edges[i];
        let w = match outcome {
            Outcome::Success => edge.refined_weight + step,
            Outcome::Failure => edge.refined_weight - step,
        };
        edge.refined_weight = w.clamp(0.0, 1.0);
        if edge.refined_weight < floor {
            edge.pruned = true;
        }
        Ok(edge)
    }

    pub fn add_discovered_edge(
        &mut self,
        consumer: ConsumerRef,
        producer: ProducerRef,
        initial_weight: f64,
    ) -> Result<&SpdgEdge, SpdgError> {
        let w = initial_weight.clamp(0.0, 1.0);
        self.insert(SpdgEdge {
            consumer,
            producer,
            similarity: w,
            refined_weight: w,
            origin: EdgeOrigin::Discovered,
            fallback: false,
            pruned: false,
        })
    }

    /// Links an undocumented response field of `producer_op` to every input
    /// of another operation whose name similarity passes the threshold. The
    /// similarity becomes the initial weight. Returns the new edge keys.
    pub fn discover_undocumented(
        &mut self,
        spec: &ApiSpec,
        table: &EmbeddingTable,
        producer_op: &str,
        field: &str,
    ) -> Vec<EdgeKey> {
        let field_vec = name_vector(table, field).vector;
        let mut added = Vec::new();
        for op in &spec.operations {
            if op.id == producer_op {
                continue;
            }
            for input in input_fields(op) {
                let Some(loc) = ConsumerLocation::from_param(input.location) else {
                    continue;
                };
                let score =
                    cosine(&name_vector(table, &input.name).vector, &field_vec).unwrap_or(0.0);
                if score <= self.config.similarity_threshold {
                    continue;
                }
                let consumer = ConsumerRef::new(&op.id, &input.name, loc);
                let producer = ProducerRef::new(producer_op, field, ProducerTarget::Response);
                if let Ok(e) = self.add_discovered_edge(consumer, producer, score) {
                    added.push(e.key());
                }
            }
        }
        added
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serializes")
    }

    /// Graphviz rendering: one arrow per field-level edge.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph spdg {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{}\";", escape(n));
        }
        for e in &self.edges {
            let style = match (e.pruned, e.origin) {
                (true, _) => "dotted",
                (false, EdgeOrigin::Discovered) => "dashed",
                (false, EdgeOrigin::Semantic) => "solid",
            };
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{} <- {} ({:.2})\", style={}];",
                escape(&e.consumer.op),
                escape(&e.producer.op),
                escape(&e.consumer.field),
                escape(&e.producer.field),
                e.refined_weight,
                style
            );
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

struct OpFields {
    id: String,
    inputs: Vec<(String, ConsumerLocation, Vec<f64>)>,
    outputs: Vec<(String, Vec<f64>)>,
}

/// Builds the initial graph from name similarity between every consumer input
/// and every producer output.
pub fn build_spdg(spec: &ApiSpec, table: &EmbeddingTable, config: SpdgConfig) -> Spdg {
    let ops: Vec<OpFields> = spec
        .operations
        .iter()
        .map(|op| OpFields {
            id: op.id.clone(),
            inputs: input_fields(op)
                .into_iter()
                .filter_map(|f| {
                    ConsumerLocation::from_param(f.location)
                        .map(|loc| (f.name.clone(), loc, name_vector(table, &f.name).vector))
                })
                .collect(),
            outputs: output_fields(op)
                .into_iter()
                .map(|name| {
                    let v = name_vector(table, &name).vector;
                    (name, v)
                })
                .collect(),
        })
        .collect();

    let mut graph = Spdg::empty(ops.iter().map(|o| o.id.clone()).collect(), config);
    for consumer in &ops {
        // best pair per producer, kept for the fallback ranking
        let mut best: Vec<(usize, f64, usize, usize)> = Vec::new();
        let mut added = 0usize;
        for (pi, producer) in ops.iter().enumerate() {
            if producer.id == consumer.id {
                continue;
            }
            let mut top: Option<(f64, usize, usize)> = None;
            for (ii, (in_name, in_loc, in_vec)) in consumer.inputs.iter().enumerate() {
                for (oi, (out_name, out_vec)) in producer.outputs.iter().enumerate() {
                    let score = cosine(in_vec, out_vec).unwrap_or(0.0);
                    if top.is_none_or(|(s, _, _)| score > s) {
                        top = Some((score, ii, oi));
                    }
                    if score > config.similarity_threshold {
                        let sim = score.clamp(0.0, 1.0);
                        let inserted = graph.insert(SpdgEdge {
                            consumer: ConsumerRef::new(&consumer.id, in_name, *in_loc),
                            producer: ProducerRef::new(
                                &producer.id,
                                out_name,
                                ProducerTarget::Response,
                            ),
                            similarity: sim,
                            refined_weight: sim,
                            origin: EdgeOrigin::Semantic,
                            fallback: false,
                            pruned: false,
                        });
                        if inserted.is_ok() {
                            added += 1;
                        }
                    }
                }
            }
            if let Some((s, ii, oi)) = top {
                best.push((pi, s, ii, oi));
            }
        }
        if added > 0 {
            continue;
        }
        // stable sort keeps document order among equal scores
        best.sort_by(|a, b| b.1.total_cmp(&a.1));
        for &(pi, score, ii, oi) in best.iter().take(config.fallback_top_k) {
            let producer = &ops[pi];
            let (in_name, in_loc, _) = &consumer.inputs[ii];
            let (out_name, _) = &producer.outputs[oi];
            let sim = score.clamp(0.0, 1.0);
            let _ = graph.insert(SpdgEdge {
                consumer: ConsumerRef::new(&consumer.id, in_name, *in_loc),
                producer: ProducerRef::new(&producer.id, out_name, ProducerTarget::Response),
                similarity: sim,
                refined_weight: sim,
                origin: EdgeOrigin::Semantic,
                fallback: true,
                pruned: false,
            });
        }
    }
    graph
}

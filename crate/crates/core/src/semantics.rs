//! Word embeddings, identifier tokenization and cosine similarity of field names.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Small 8-dimensional table covering the vocabulary of the bundled service.
pub const FIXTURE_EMBEDDINGS: &str = include_str!("../fixtures/embeddings-8d.txt");

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("embedding file is empty")]
    EmptyFile,
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: invalid number `{token}`")]
    InvalidNumber { line: usize, token: String },
    #[error("vector dimensions differ: {0} vs {1}")]
    VectorDimensions(usize, usize),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Parses GloVe text format: `token f1 f2 ... fd` per line.
    pub fn parse(text: &str) -> Result<Self, SemanticsError> {
        let mut dimension = None;
        let mut vectors = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else {
                continue;
            };
            let vector = parts
                .map(|t| {
                    t.parse::<f64>().map_err(|_| SemanticsError::InvalidNumber {
                        line: line_no,
                        token: t.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected || expected == 0 {
                return Err(SemanticsError::DimensionMismatch {
                    line: line_no,
                    expected,
                    found: vector.len(),
                });
            }
            vectors.entry(token.to_lowercase()).or_insert(vector);
        }
        match dimension {
            Some(dimension) => Ok(EmbeddingTable { dimension, vectors }),
            None => Err(SemanticsError::EmptyFile),
        }
    }

    pub fn fixture() -> Self {
        Self::parse(FIXTURE_EMBEDDINGS).expect("bundled embedding fixture is well formed")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, SemanticsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SemanticsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingTable::parse(&text)
}

/// Splits an identifier on separators, digits and lower-to-upper camelCase
/// boundaries; tokens come back lowercased.
pub fn tokenize_identifier(name: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for c in name.chars() {
        if !c.is_alphabetic() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        prev_lower = c.is_lowercase();
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq)]
pub struct NameVector {
    pub source_name: String,
    pub vector: Vec<f64>,
    /// Every token was missing from the table.
    pub oov: bool,
}

/// Mean of the in-vocabulary token vectors; out-of-vocabulary tokens are skipped.
pub fn name_vector(table: &EmbeddingTable, name: &str) -> NameVector {
    let mut sum = vec![0.0; table.dimension];
    let mut hits = 0usize;
    for token in tokenize_identifier(name) {
        if let Some(v) = table.get(&token) {
            for (acc, x) in sum.iter_mut().zip(v) {
                *acc += x;
            }
            hits += 1;
        }
    }
    if hits > 0 {
        let n = hits as f64;
        for x in &mut sum {
            *x /= n;
        }
    }
    NameVector {
        source_name: name.to_string(),
        vector: sum,
        oov: hits == 0,
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SemanticsError> {
    if u.len() != v.len() {
        return Err(SemanticsError::VectorDimensions(u.len(), v.len()));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Name-level similarity through [`name_vector`] and [`cosine`].
pub fn name_similarity(table: &EmbeddingTable, a: &str, b: &str) -> f64 {
    let va = name_vector(table, a);
    let vb = name_vector(table, b);
    cosine(&va.vector, &vb.vector).unwrap_or(0.0)
}

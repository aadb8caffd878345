//! Deterministic offline stand-in for a language model. Candidates are built
//! from the schema: enums and examples first, then templates for common
//! string shapes, then pattern sampling, then padded alphanumerics.

use rand::distr::Alphanumeric;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::llm::{LlmBackend, LlmError, LlmRequest};
use crate::openapi::{SchemaKind, SchemaNode};

const FIRST_NAMES: &[&str] = &[
    "john", "jane", "alice", "bob", "carol", "david", "emma", "frank", "grace", "henry", "irene",
    "jack",
];
const LAST_NAMES: &[&str] = &[
    "doe", "smith", "jones", "brown", "taylor", "wilson", "evans", "walker", "wright", "green",
];
const DOMAINS: &[&str] = &["example.com", "mail.com", "test.org", "example.net"];
const WORDS: &[&str] = &[
    "alpha", "sample", "value", "test", "item", "data", "demo", "record", "entry", "node",
];

pub struct StubBackend {
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        StubBackend { seed }
    }
}

impl LlmBackend for StubBackend {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn generate(&mut self, request: &LlmRequest) -> Result<String, LlmError> {
        Ok(Value::Array(stub_candidates(request, self.seed)).to_string())
    }
}

/// RNG keyed by (operation, parameter, seed) so each parameter's candidates
/// are independent of generation order.
fn keyed_rng(request: &LlmRequest, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(request.operation_id.as_bytes());
    h.update([0]);
    h.update(request.parameter.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Pure function of the request and seed.
pub fn stub_candidates(request: &LlmRequest, seed: u64) -> Vec<Value> {
    let mut rng = keyed_rng(request, seed);
    candidates_for(
        &request.schema,
        &request.parameter,
        &request.examples,
        request.count,
        &mut rng,
    )
}

fn candidates_for(
    schema: &SchemaNode,
    name: &str,
    examples: &[Value],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Value> {
    let c = &schema.constraints;
    if let Some(values) = &c.enum_values {
        if !values.is_empty() {
            return values.iter().take(count).cloned().collect();
        }
    }
    let mut out: Vec<Value> = examples.iter().take(count).cloned().collect();
    let mut attempts = 0;
    while out.len() < count && attempts < count * 20 {
        attempts += 1;
        let v = one_value(schema, name, rng);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn one_value(schema: &SchemaNode, name: &str, rng: &mut ChaCha8Rng) -> Value {
    let c = &schema.constraints;
    match schema.kind {
        SchemaKind::String => Value::String(string_value(schema, name, rng)),
        SchemaKind::Integer => {
            let lo = c
                .minimum
                .map(|m| m.ceil() as i64)
                .unwrap_or(if is_id_like(name) { 1 } else { 0 });
            let hi = c
                .maximum
                .map(|m| m.floor() as i64)
                .unwrap_or(lo.saturating_add(100))
                .max(lo);
            Value::from(rng.random_range(lo..=hi))
        }
        SchemaKind::Number => {
            let lo = c.minimum.unwrap_or(0.0);
            let hi = c.maximum.unwrap_or(lo + 100.0).max(lo);
            let x = ((rng.random_range(lo..=hi)) * 100.0).round() / 100.0;
            serde_json::Number::from_f64(x.clamp(lo, hi)).map_or(Value::Null, Value::Number)
        }
        SchemaKind::Boolean => Value::Bool(rng.random_bool(0.5)),
        SchemaKind::Array => {
            let item = schema
                .items
                .as_deref()
                .cloned()
                .unwrap_or_else(|| SchemaNode::scalar(SchemaKind::String));
            let n = rng.random_range(1..=2);
            Value::Array(candidates_for(&item, name, &[], n, rng))
        }
        SchemaKind::Object => {
            let mut m = Map::new();
            for (k, child) in &schema.properties {
                let v = candidates_for(child, k, &[], 1, rng)
                    .into_iter()
                    .next()
                    .unwrap_or(Value::Null);
                m.insert(k.clone(), v);
            }
            Value::Object(m)
        }
    }
}

fn is_id_like(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    n == "id" || n.ends_with("id") || n.ends_with("_id")
}

fn length_bounds(schema: &SchemaNode, default_hi: usize) -> (usize, usize) {
    let c = &schema.constraints;
    let lo = c.min_length.map_or(1, |m| m.max(1) as usize);
    let hi = c
        .max_length
        .map_or(lo.max(default_hi), |m| m as usize)
        .max(lo);
    (lo, hi)
}

fn fits(schema: &SchemaNode, s: &str) -> bool {
    let (lo, hi) = length_bounds(schema, usize::MAX);
    let n = s.chars().count();
    let pattern_ok = schema
        .constraints
        .pattern
        .as_deref()
        .and_then(|p| Regex::new(p).ok())
        .is_none_or(|re| re.is_match(s));
    n >= lo && n <= hi && pattern_ok
}

fn string_value(schema: &SchemaNode, name: &str, rng: &mut ChaCha8Rng) -> String {
    let c = &schema.constraints;
    let format = c.format.as_deref().unwrap_or("");
    let pattern = c.pattern.as_deref().unwrap_or("");
    let lname = name.to_ascii_lowercase();

    let mut tries: Vec<String> = Vec::new();
    match format {
        "date" => tries.push(date(rng)),
        "date-time" => tries.push(format!(
            "{}T{:02}:{:02}:00Z",
            date(rng),
            rng.random_range(0..24),
            rng.random_range(0..60)
        )),
        "uuid" => tries.push(
            uuid::Builder::from_random_bytes(rng.random())
                .into_uuid()
                .to_string(),
        ),
        "uri" | "url" => tries.push(format!(
            "https://{}/{}",
            DOMAINS.choose(rng).unwrap(),
            WORDS.choose(rng).unwrap()
        )),
        _ => {}
    }
    if format == "email"
        || pattern.contains('@')
        || lname.contains("email")
        || lname.contains("mail")
    {
        tries.push(email(rng));
    }
    if let Some(class) = single_class(pattern) {
        if class.letters && class.space {
            tries.push(person_name(rng));
        }
        tries.push(from_class(&class, schema, rng));
    }
    if !pattern.is_empty() {
        if let Ok(gen) = rand_regex::Regex::compile(strip_anchors(pattern), 8) {
            for _ in 0..10 {
                tries.push(rng.sample::<String, _>(&gen));
            }
        }
    }
    if lname.contains("name") && pattern.is_empty() {
        tries.push(person_name(rng));
    }
    if let Some(s) = tries.into_iter().find(|s| fits(schema, s)) {
        return s;
    }
    padded_word(schema, rng)
}

/// The sampler rejects anchors; an anchored pattern's samples match anyway.
fn strip_anchors(pattern: &str) -> &str {
    let p = pattern.strip_prefix('^').unwrap_or(pattern);
    match p.strip_suffix('$') {
        Some(q) if !q.ends_with('\\') => q,
        _ => p,
    }
}

fn date(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{:04}-{:02}-{:02}",
        rng.random_range(2000..=2030),
        rng.random_range(1..=12),
        rng.random_range(1..=28)
    )
}

fn email(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}.{}@{}",
        FIRST_NAMES.choose(rng).unwrap(),
        LAST_NAMES.choose(rng).unwrap(),
        DOMAINS.choose(rng).unwrap()
    )
}

fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    cs.next()
        .map(|f| f.to_uppercase().chain(cs).collect())
        .unwrap_or_default()
}

fn person_name(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {}",
        capitalize(FIRST_NAMES.choose(rng).unwrap()),
        capitalize(LAST_NAMES.choose(rng).unwrap())
    )
}

/// Word stem padded with alphanumerics up to the length bounds.
fn padded_word(schema: &SchemaNode, rng: &mut ChaCha8Rng) -> String {
    let (lo, hi) = length_bounds(schema, 12);
    let mut s: String = WORDS.choose(rng).unwrap().to_string();
    let target = rng.random_range(lo..=hi.min(lo + 12).max(lo));
    while s.len() < target {
        s.push(rng.sample(Alphanumeric) as char);
    }
    s.truncate(target.max(lo).min(hi));
    s
}

/// Character classes allowed by a pattern of the form `^[...]+$`,
/// `^[...]*$` or `^[...]{m,n}$`.
#[derive(Debug, Default, PartialEq)]
struct ClassSpec {
    letters: bool,
    lower_only: bool,
    upper_only: bool,
    digits: bool,
    space: bool,
    extra: Vec<char>,
}

fn single_class(pattern: &str) -> Option<ClassSpec> {
    let inner = pattern.strip_prefix("^[")?.strip_suffix('$')?;
    let close = inner.rfind(']')?;
    let quant = &inner[close + 1..];
    if !(quant == "+" || quant == "*" || (quant.starts_with('{') && quant.ends_with('}'))) {
        return None;
    }
    let body = &inner[..close];
    if body.starts_with('^') || body.contains(['[', ']']) {
        return None;
    }
    let mut spec = ClassSpec::default();
    let (mut lower, mut upper) = (false, false);
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch == '\\' && i + 1 < chars.len() {
            match chars[i + 1] {
                'd' => spec.digits = true,
                'w' => {
                    lower = true;
                    upper = true;
                    spec.digits = true;
                    spec.extra.push('_');
                }
                'p' | 'P' => {
                    lower = true;
                    upper = true;
                    // skip the class name, e.g. \pL or \p{L}
                    if chars.get(i + 2) == Some(&'{') {
                        while i < chars.len() && chars[i] != '}' {
                            i += 1;
                        }
                        i += 1;
                        continue;
                    }
                    i += 1;
                }
                's' => spec.space = true,
                other => spec.extra.push(other),
            }
            i += 2;
            continue;
        }
        if i + 2 < chars.len() && chars[i + 1] == '-' {
            match (ch, chars[i + 2]) {
                ('a', 'z') => lower = true,
                ('A', 'Z') => upper = true,
                ('0', '9') => spec.digits = true,
                _ => return None,
            }
            i += 3;
            continue;
        }
        if ch == ' ' {
            spec.space = true;
        } else {
            spec.extra.push(ch);
        }
        i += 1;
    }
    spec.letters = lower || upper;
    spec.lower_only = lower && !upper;
    spec.upper_only = upper && !lower;
    if !spec.letters && !spec.digits && !spec.space && spec.extra.is_empty() {
        return None;
    }
    Some(spec)
}

fn from_class(class: &ClassSpec, schema: &SchemaNode, rng: &mut ChaCha8Rng) -> String {
    let mut alphabet: Vec<char> = Vec::new();
    if class.letters {
        if !class.upper_only {
            alphabet.extend('a'..='z');
        }
        if !class.lower_only {
            alphabet.extend('A'..='Z');
        }
    }
    if class.digits {
        alphabet.extend('0'..='9');
    }
    if alphabet.is_empty() {
        alphabet.extend(class.extra.iter().copied());
        if class.space {
            alphabet.push(' ');
        }
    }
    let (lo, hi) = length_bounds(schema, 16);
    // prefer 8 to 16 characters inside the schema bounds
    let from = lo.max(8).min(hi);
    let to = hi.min(from + 8);
    let len = rng.random_range(from..=to);
    let mut s: String = (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect();
    // mix letters and digits so the value reads like a credential or code
    if class.letters && class.digits && len >= 2 {
        let d = char::from(b'0' + rng.random_range(0..10u8));
        s.replace_range(len - 1.., &d.to_string());
    }
    s
}

//! Deterministic local stand-in for a web search and page-fetch tool server.
//!
//! Documents live in an immutable BM25 index (k1 = 1.2, b = 0.75,
//! `idf = ln(1 + (N − df + 0.5)/(df + 0.5))`). Tool calls are routed by name and
//! can be made to fail from a seeded fault stream so tool-execution rewards see
//! realistic error responses.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::kernels::{SEARCH_TOOL, VISIT_TOOL};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const SNIPPET_CHARS: usize = 200;
pub const DEFAULT_SEARCH_K: usize = 5;

/// Prefix of every failed tool payload.
pub const ERROR_PREFIX: &str = "ERROR:";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("DUPLICATE_DOC_ID: {0}")]
    DuplicateDocId(String),
    #[error("EMPTY_BODY: document {0} has an empty body")]
    EmptyBody(String),
    #[error("PARSE_ERROR at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position in the id-sorted document list.
    pub doc: usize,
    pub tf: u32,
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_len: Vec<usize>,
    avg_doc_len: f64,
}

/// Title and body are both indexed.
fn indexed_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.body)
}

impl CorpusIndex {
    pub fn build(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut docs = docs;
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(CorpusError::DuplicateDocId(w[0].doc_id.clone()));
        }
        if let Some(d) = docs.iter().find(|d| d.body.is_empty()) {
            return Err(CorpusError::EmptyBody(d.doc_id.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let tokens = tokenize(&indexed_text(doc));
            doc_len.push(tokens.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings
                    .entry(term)
                    .or_default()
                    .push(Posting { doc: i, tf });
            }
        }
        let avg_doc_len = if docs.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / docs.len() as f64
        };
        let by_id = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        Ok(Self {
            docs,
            by_id,
            postings,
            doc_len,
            avg_doc_len,
        })
    }

    /// Reads one JSON document per line; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        Self::build(read_documents(std::io::BufReader::new(file))?)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).map(|&i| self.doc_len[i])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `k` documents by BM25 over the distinct query terms. Ties go to the
    /// smaller doc id.
    pub fn search(&self, query: &str, k: usize) -> Vec<SearchHit> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &terms {
            let idf = self.idf(term);
            for p in self.postings(term) {
                let tf = f64::from(p.tf);
                let norm = 1.0 - BM25_B + BM25_B * self.doc_len[p.doc] as f64 / self.avg_doc_len;
                *scores.entry(p.doc).or_default() +=
                    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
        // Doc positions follow id order, so position order is id order.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(k)
            .map(|(i, score)| {
                let d = &self.docs[i];
                SearchHit {
                    doc_id: d.doc_id.clone(),
                    title: d.title.clone(),
                    snippet: d.body.chars().take(SNIPPET_CHARS).collect(),
                    score,
                }
            })
            .collect()
    }

    pub fn visit(&self, doc_id: &str) -> Result<&str, ToolError> {
        self.by_id
            .get(doc_id)
            .map(|&i| self.docs[i].body.as_str())
            .ok_or_else(|| ToolError::UnknownDocId(doc_id.to_string()))
    }
}

pub fn read_documents<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub title: String,
    pub snippet: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("UNKNOWN_DOC_ID: {0}")]
    UnknownDocId(String),
    #[error("MALFORMED_CALL: {0}")]
    MalformedCall(String),
}

/// Seeded fault stream. Whether call `i` fails depends only on `(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub error_probability: f64,
    pub seed: u64,
}

impl FaultConfig {
    pub fn none() -> Self {
        Self {
            error_probability: 0.0,
            seed: 0,
        }
    }

    pub fn fires(&self, call_index: u64) -> bool {
        if self.error_probability <= 0.0 {
            return false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(call_index);
        rng.random::<f64>() < self.error_probability
    }

    /// Fault stream for one episode of a batch, independent of other episodes.
    pub fn for_episode(&self, episode_index: u64) -> Self {
        Self {
            error_probability: self.error_probability,
            seed: splitmix64(self.seed ^ splitmix64(episode_index)),
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A parsed tool call: `{"name": ..., "arguments": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

impl ToolCall {
    pub fn parse(text: &str) -> Result<Self, ToolError> {
        serde_json::from_str(text.trim()).map_err(|e| ToolError::MalformedCall(e.to_string()))
    }

    pub fn search(query: &str, k: usize) -> Self {
        Self {
            name: SEARCH_TOOL.into(),
            arguments: serde_json::json!({ "query": query, "k": k }),
        }
    }

    pub fn visit(doc_id: &str) -> Self {
        Self {
            name: VISIT_TOOL.into(),
            arguments: serde_json::json!({ "doc_id": doc_id }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tool call serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub ok: bool,
    pub payload: String,
}

impl ToolResponse {
    fn success(payload: String) -> Self {
        Self { ok: true, payload }
    }

    pub fn failure(message: impl std::fmt::Display) -> Self {
        Self {
            ok: false,
            payload: format!("{ERROR_PREFIX} {message}"),
        }
    }
}

/// Payload for a search: the hit list as JSON.
pub fn search_payload(index: &CorpusIndex, query: &str, k: usize) -> ToolResponse {
    if k == 0 {
        return ToolResponse::failure("INVALID_ARGUMENT: k must be >= 1");
    }
    let hits = index.search(query, k);
    ToolResponse::success(serde_json::to_string(&hits).expect("hits serialize"))
}

/// Payload for a visit: the document body verbatim.
pub fn visit_payload(index: &CorpusIndex, doc_id: &str) -> ToolResponse {
    match index.visit(doc_id) {
        Ok(body) => ToolResponse::success(body.to_string()),
        Err(e) => ToolResponse::failure(e),
    }
}

/// Routes one call. A fault at `call_index` overrides the real outcome.
pub fn dispatch(
    index: &CorpusIndex,
    call: &ToolCall,
    faults: &FaultConfig,
    call_index: u64,
) -> ToolResponse {
    if faults.fires(call_index) {
        return ToolResponse::failure(format!("TOOL_FAULT: injected failure on call {call_index}"));
    }
    let args = &call.arguments;
    match call.name.as_str() {
        SEARCH_TOOL => {
            let Some(query) = args.get("query").and_then(Value::as_str) else {
                return ToolResponse::failure("INVALID_ARGUMENT: search needs a string `query`");
            };
            let k = match args.get("k") {
                None | Some(Value::Null) => DEFAULT_SEARCH_K,
                Some(v) => match v.as_u64() {
                    Some(k) => k as usize,
                    None => {
                        return ToolResponse::failure(
                            "INVALID_ARGUMENT: `k` must be a positive integer",
                        )
                    }
                },
            };
            search_payload(index, query, k)
        }
        VISIT_TOOL => match args.get("doc_id").and_then(Value::as_str) {
            Some(id) => visit_payload(index, id),
            None => ToolResponse::failure("INVALID_ARGUMENT: visit needs a string `doc_id`"),
        },
        other => ToolResponse::failure(format!("UNKNOWN_TOOL: {other}")),
    }
}

/// Parses the inner text of a `<tool_call>` span and dispatches it.
pub fn dispatch_tool(
    index: &CorpusIndex,
    call_text: &str,
    faults: &FaultConfig,
    call_index: u64,
) -> Result<(ToolCall, ToolResponse), ToolError> {
    let call = ToolCall::parse(call_text)?;
    let response = dispatch(index, &call, faults, call_index);
    Ok((call, response))
}

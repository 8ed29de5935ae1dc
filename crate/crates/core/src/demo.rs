//! Bundled demo corpus, questions and hand-written episodes.

use crate::composer::Episode;
use crate::kernels::{ToolCallLog, SEARCH_TOOL, VISIT_TOOL};
use crate::rollout::{read_qa_dataset, QAPair, DEFAULT_SYSTEM_PROMPT};
use crate::search::{read_documents, CorpusIndex, Document};
use crate::trace::{Role, Transcript};

pub const CORPUS_JSONL: &str = include_str!("../data/demo_corpus.jsonl");
pub const QA_JSONL: &str = include_str!("../data/demo_qa.jsonl");

pub fn corpus() -> Vec<Document> {
    read_documents(CORPUS_JSONL.as_bytes()).expect("bundled corpus parses")
}

pub fn corpus_index() -> CorpusIndex {
    CorpusIndex::build(corpus()).expect("bundled corpus indexes")
}

pub fn qa() -> Vec<QAPair> {
    read_qa_dataset(QA_JSONL.as_bytes()).expect("bundled questions parse")
}

/// The first bundled question: the capital of France.
pub fn exemplar_qa() -> QAPair {
    qa().into_iter()
        .next()
        .expect("bundled questions are non-empty")
}

/// A three-turn script answering [`exemplar_qa`]: search, visit, answer.
pub const EXEMPLAR_SCRIPT: [&str; 3] = [
    r#"<think>I should look this up.</think>
<tool_call>{"name": "search", "arguments": {"query": "capital of France", "k": 3}}</tool_call>"#,
    r#"<think>The France article should name the capital.</think>
<tool_call>{"name": "visit", "arguments": {"doc_id": "france"}}</tool_call>"#,
    r#"<think>The article says the capital is Paris.</think>
<answer>Paris</answer>"#,
];

/// A finished episode with one search and two visits issued in a single turn,
/// followed by the answer.
pub fn exemplar_episode() -> Episode {
    let search = r#"{"name": "search", "arguments": {"query": "capital of France"}}"#;
    let visit_fr = r#"{"name": "visit", "arguments": {"doc_id": "france"}}"#;
    let visit_pa = r#"{"name": "visit", "arguments": {"doc_id": "paris"}}"#;
    let qa = exemplar_qa();
    let idx = corpus_index();

    let mut t = Transcript::new();
    t.metadata.episode_id = Some(qa.id.clone());
    t.push(Role::System, DEFAULT_SYSTEM_PROMPT);
    t.push(Role::User, qa.question.as_str());
    t.push(
        Role::Assistant,
        format!(
            "<think>Search first, then read both articles.</think>\n\
             <tool_call>{search}</tool_call>\n<tool_call>{visit_fr}</tool_call>\n<tool_call>{visit_pa}</tool_call>"
        ),
    );
    let hits = serde_json::to_string(&idx.search("capital of France", 5)).expect("hits serialize");
    t.push(Role::User, format!("<tool_response>{hits}</tool_response>"));
    for id in ["france", "paris"] {
        let body = idx.visit(id).expect("bundled doc exists");
        t.push(Role::User, format!("<tool_response>{body}</tool_response>"));
    }
    t.push(Role::Assistant, "<answer>Paris</answer>");

    let tool_log: ToolCallLog = [(SEARCH_TOOL, true), (VISIT_TOOL, true), (VISIT_TOOL, true)]
        .into_iter()
        .collect();
    Episode {
        transcript: t,
        truths: qa.answers,
        tool_log,
    }
}

//! Data model for multi-turn agent transcripts.
//!
//! A [`Transcript`] is an ordered list of [`ParsedTurn`]s. Each turn keeps the
//! raw message text plus the tag spans the parser extracted from it, so every
//! reward can work from the same view of the episode without re-scanning.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::parser;

/// Speaker of a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    /// Reserved for environment-injected tool output.
    Tool,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::System, Role::User, Role::Assistant, Role::Tool];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// The four recognized tag kinds. Anything else in angle brackets is plain text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    Think,
    ToolCall,
    ToolResponse,
    Answer,
}

impl TagKind {
    pub const ALL: [TagKind; 4] = [
        TagKind::Think,
        TagKind::ToolCall,
        TagKind::ToolResponse,
        TagKind::Answer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TagKind::Think => "think",
            TagKind::ToolCall => "tool_call",
            TagKind::ToolResponse => "tool_response",
            TagKind::Answer => "answer",
        }
    }

    pub fn open_tag(self) -> &'static str {
        match self {
            TagKind::Think => "<think>",
            TagKind::ToolCall => "<tool_call>",
            TagKind::ToolResponse => "<tool_response>",
            TagKind::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            TagKind::Think => "</think>",
            TagKind::ToolCall => "</tool_call>",
            TagKind::ToolResponse => "</tool_response>",
            TagKind::Answer => "</answer>",
        }
    }

    /// Wraps `inner` in this tag's opener and closer.
    pub fn wrap(self, inner: &str) -> String {
        format!("{}{}{}", self.open_tag(), inner, self.close_tag())
    }
}

/// One complete top-level tag occurrence inside a message.
///
/// `byte_range` covers the whole span including the opening and closing tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpan {
    pub kind: TagKind,
    pub inner_text: String,
    pub byte_range: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    UnbalancedTag,
    CallAndAnswerSameTurn,
    StrayTopLevelTag,
    NestedTag,
}

impl ViolationCode {
    /// Whether this violation zeroes the XML validity reward.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            ViolationCode::UnbalancedTag | ViolationCode::CallAndAnswerSameTurn
        )
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationCode::UnbalancedTag => "UNBALANCED_TAG",
            ViolationCode::CallAndAnswerSameTurn => "CALL_AND_ANSWER_SAME_TURN",
            ViolationCode::StrayTopLevelTag => "STRAY_TOP_LEVEL_TAG",
            ViolationCode::NestedTag => "NESTED_TAG",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTurn {
    pub message: Message,
    pub spans: Vec<TagSpan>,
    pub violations: Vec<ViolationCode>,
}

impl ParsedTurn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        let content = content.into();
        let mut turn = parser::parse_turn(&content);
        turn.message.role = role;
        turn
    }

    pub fn role(&self) -> Role {
        self.message.role
    }

    pub fn content(&self) -> &str {
        &self.message.content
    }

    pub fn is_assistant(&self) -> bool {
        self.message.role == Role::Assistant
    }

    pub fn spans_of(&self, kind: TagKind) -> impl Iterator<Item = &TagSpan> {
        self.spans.iter().filter(move |s| s.kind == kind)
    }

    pub fn count(&self, kind: TagKind) -> usize {
        self.spans_of(kind).count()
    }

    pub fn has(&self, kind: TagKind) -> bool {
        self.spans.iter().any(|s| s.kind == kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<ParsedTurn>,
    #[serde(default)]
    pub metadata: TranscriptMeta,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a transcript from plain messages, parsing each one.
    pub fn from_messages<I>(messages: I) -> Self
    where
        I: IntoIterator<Item = Message>,
    {
        Self {
            turns: messages
                .into_iter()
                .map(|m| ParsedTurn::new(m.role, m.content))
                .collect(),
            metadata: TranscriptMeta::default(),
        }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) -> &ParsedTurn {
        self.turns.push(ParsedTurn::new(role, content));
        self.turns.last().expect("just pushed")
    }

    pub fn messages(&self) -> Vec<Message> {
        self.turns.iter().map(|t| t.message.clone()).collect()
    }

    pub fn assistant_turns(&self) -> impl DoubleEndedIterator<Item = &ParsedTurn> {
        self.turns.iter().filter(|t| t.is_assistant())
    }

    pub fn assistant_turn_count(&self) -> usize {
        self.assistant_turns().count()
    }

    /// Total bytes of turn content, framing excluded.
    pub fn content_bytes(&self) -> usize {
        self.turns.iter().map(|t| t.content().len()).sum()
    }
}

/// The tag census feeding the XML validity reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub n_answer: usize,
    pub n_think: usize,
    /// `tool_call` spans only.
    pub n_tool: usize,
    /// Assistant turns only.
    pub n_turn: usize,
}

impl std::ops::Add for TagCounts {
    type Output = TagCounts;

    fn add(self, rhs: TagCounts) -> TagCounts {
        TagCounts {
            n_answer: self.n_answer + rhs.n_answer,
            n_think: self.n_think + rhs.n_think,
            n_tool: self.n_tool + rhs.n_tool,
            n_turn: self.n_turn + rhs.n_turn,
        }
    }
}

/// Counts tag spans over assistant turns. Spans in other roles are ignored.
pub fn count_tags(transcript: &Transcript) -> TagCounts {
    transcript
        .assistant_turns()
        .fold(TagCounts::default(), |acc, turn| {
            acc + TagCounts {
                n_answer: turn.count(TagKind::Answer),
                n_think: turn.count(TagKind::Think),
                n_tool: turn.count(TagKind::ToolCall),
                n_turn: 1,
            }
        })
}

/// The text to grade for correctness.
///
/// Inner text of the last `<answer>` span in the latest assistant turn that has
/// one. When no assistant turn carries an answer span, the whole content of the
/// last assistant turn is used instead.
pub fn terminal_answer(transcript: &Transcript) -> Option<String> {
    let last = transcript.assistant_turns().last()?;
    let answered = transcript
        .assistant_turns()
        .rev()
        .find_map(|t| t.spans_of(TagKind::Answer).last());
    Some(match answered {
        Some(span) => span.inner_text.clone(),
        None => last.content().to_string(),
    })
}

/// One line of the episode file: a question, its accepted answers and the turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub turns: Vec<Message>,
    /// Inferred from the transcript when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_log: Option<crate::kernels::ToolCallLog>,
}

impl EpisodeRecord {
    pub fn transcript(&self) -> Transcript {
        let mut t = Transcript::from_messages(self.turns.iter().cloned());
        t.metadata.episode_id = Some(self.id.clone());
        t
    }
}

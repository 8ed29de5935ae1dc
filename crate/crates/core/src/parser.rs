//! Tag extraction and chat framing.
//!
//! The tag grammar is a flat scan over exactly four literal tag pairs. Only
//! top-level pairs become spans; recognized tags found inside an open span are
//! recorded as `NESTED_TAG` and stay part of the enclosing span's text. Any other
//! angle-bracket text is ordinary content.
//!
//! Turns are framed as `<|im_start|>{role}\n{content}<|im_end|>`. The parser also
//! accepts a single space after the role name and turns that are closed
//! implicitly by a start marker beginning a new line, which is how prompt
//! listings without end markers are laid out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels;
use crate::trace::{Message, ParsedTurn, Role, TagKind, TagSpan, Transcript, ViolationCode};

pub const START_MARKER: &str = "<|im_start|>";
pub const END_MARKER: &str = "<|im_end|>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("MALFORMED_FRAMING at byte {offset}: {reason}")]
    MalformedFraming { offset: usize, reason: String },
}

impl ParseError {
    fn framing(offset: usize, reason: impl Into<String>) -> Self {
        ParseError::MalformedFraming {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Open(TagKind),
    Close(TagKind),
}

impl Token {
    fn text(self) -> &'static str {
        match self {
            Token::Open(k) => k.open_tag(),
            Token::Close(k) => k.close_tag(),
        }
    }
}

fn token_at(content: &str, pos: usize) -> Option<Token> {
    let rest = &content[pos..];
    TagKind::ALL.into_iter().find_map(|k| {
        if rest.starts_with(k.open_tag()) {
            Some(Token::Open(k))
        } else if rest.starts_with(k.close_tag()) {
            Some(Token::Close(k))
        } else {
            None
        }
    })
}

/// Recognized tag tokens in `content`, in order, with their byte offsets.
fn tokens(content: &str) -> impl Iterator<Item = (usize, Token)> + '_ {
    let mut pos = 0;
    std::iter::from_fn(move || {
        while let Some(rel) = content[pos..].find('<') {
            let at = pos + rel;
            if let Some(tok) = token_at(content, at) {
                pos = at + tok.text().len();
                return Some((at, tok));
            }
            pos = at + 1;
        }
        pos = content.len();
        None
    })
}

/// Extracts top-level spans and structural violations from one message body.
///
/// The returned turn has role `assistant`; callers that know the role overwrite it.
pub fn parse_turn(content: &str) -> ParsedTurn {
    let mut spans = Vec::new();
    let mut violations = Vec::new();
    let note = |v: ViolationCode, out: &mut Vec<ViolationCode>| {
        if !out.contains(&v) {
            out.push(v);
        }
    };

    // (kind, start of opener, end of opener)
    let mut open: Option<(TagKind, usize, usize)> = None;
    let mut nested: Vec<TagKind> = Vec::new();

    for (at, tok) in tokens(content) {
        match (open, tok) {
            (None, Token::Open(kind)) => open = Some((kind, at, at + tok.text().len())),
            (None, Token::Close(_)) => note(ViolationCode::UnbalancedTag, &mut violations),
            (Some(_), Token::Open(kind)) => {
                note(ViolationCode::NestedTag, &mut violations);
                nested.push(kind);
            }
            (Some((outer, start, inner_start)), Token::Close(kind)) => {
                if nested.last() == Some(&kind) {
                    nested.pop();
                } else if kind == outer {
                    if !nested.is_empty() {
                        note(ViolationCode::UnbalancedTag, &mut violations);
                        nested.clear();
                    }
                    let end = at + tok.text().len();
                    spans.push(TagSpan {
                        kind: outer,
                        inner_text: content[inner_start..at].to_string(),
                        byte_range: start..end,
                    });
                    open = None;
                } else {
                    note(ViolationCode::UnbalancedTag, &mut violations);
                }
            }
        }
    }
    if open.is_some() {
        note(ViolationCode::UnbalancedTag, &mut violations);
    }

    let has_call = spans.iter().any(|s| s.kind == TagKind::ToolCall);
    let has_answer = spans.iter().any(|s| s.kind == TagKind::Answer);
    if has_call && has_answer {
        note(ViolationCode::CallAndAnswerSameTurn, &mut violations);
    }

    ParsedTurn {
        message: Message::new(Role::Assistant, content),
        spans,
        violations,
    }
}

/// Splits chat-framed text into turns.
///
/// A final assistant turn may be left open; its partial content is kept.
pub fn parse_transcript(raw: &str) -> Result<Transcript, ParseError> {
    let mut transcript = Transcript::new();
    let mut pos = 0;

    loop {
        let rest = &raw[pos..];
        let Some(rel) = rest.find(START_MARKER) else {
            if let Some(off) = rest.find(|c: char| !c.is_whitespace()) {
                return Err(ParseError::framing(pos + off, "text outside of a turn"));
            }
            break;
        };
        if let Some(off) = rest[..rel].find(|c: char| !c.is_whitespace()) {
            return Err(ParseError::framing(pos + off, "text outside of a turn"));
        }

        let header_start = pos + rel + START_MARKER.len();
        let header = &raw[header_start..];
        let name_len = header.find(['\n', ' ', '<']).unwrap_or(header.len());
        let name = &header[..name_len];
        let role: Role = name.parse().map_err(|_| {
            ParseError::framing(header_start, format!("unrecognized role {name:?}"))
        })?;
        let mut body_start = header_start + name_len;
        if matches!(raw[body_start..].chars().next(), Some('\n' | ' ')) {
            body_start += 1;
        }

        let body = &raw[body_start..];
        let end = body.find(END_MARKER);
        let next_start = body.find(START_MARKER);
        match (end, next_start) {
            (Some(e), s) if s.is_none_or(|s| e < s) => {
                transcript.push(role, &body[..e]);
                pos = body_start + e + END_MARKER.len();
            }
            (_, Some(s)) => {
                // Implicit close: the next start marker must begin a line.
                if s == 0 || !body[..s].ends_with('\n') {
                    return Err(ParseError::framing(
                        body_start + s,
                        "start marker inside an unterminated turn",
                    ));
                }
                transcript.push(role, &body[..s]);
                pos = body_start + s;
            }
            (_, None) => {
                if role != Role::Assistant {
                    return Err(ParseError::framing(
                        body_start,
                        format!("unterminated trailing {role} turn"),
                    ));
                }
                transcript.push(role, body);
                break;
            }
        }
    }
    Ok(transcript)
}

/// Emits explicit framing for every turn; the inverse of [`parse_transcript`]
/// for contents that do not themselves contain framing markers.
pub fn serialize_transcript(t: &Transcript) -> String {
    let mut out = String::with_capacity(t.content_bytes() + t.turns.len() * 32);
    for turn in &t.turns {
        push_framed(&mut out, turn.role(), turn.content());
    }
    out
}

fn push_framed(out: &mut String, role: Role, content: &str) {
    out.push_str(START_MARKER);
    out.push_str(role.as_str());
    out.push('\n');
    out.push_str(content);
    out.push_str(END_MARKER);
    out.push('\n');
}

/// Serialized conversation followed by an open assistant header, ready for a
/// policy to continue.
pub fn render_prompt(t: &Transcript) -> String {
    let mut out = serialize_transcript(t);
    out.push_str(START_MARKER);
    out.push_str(Role::Assistant.as_str());
    out.push('\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnViolation {
    pub turn_index: usize,
    pub code: ViolationCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub balanced: bool,
    pub violations: Vec<TurnViolation>,
    /// One flag per assistant turn, in order.
    pub per_turn_compliant: Vec<bool>,
}

impl StructureReport {
    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    /// True when a violation that invalidates the XML structure is present.
    pub fn has_structural_violation(&self) -> bool {
        self.violations.iter().any(|v| v.code.is_structural())
    }
}

/// Aggregates violations over assistant turns.
///
/// Besides the per-turn codes, a `<tool_response>` span at the top level of an
/// assistant turn is reported as `STRAY_TOP_LEVEL_TAG`: responses are written by
/// the environment, never by the policy.
pub fn validate_structure(t: &Transcript) -> StructureReport {
    let mut violations = Vec::new();
    let mut per_turn_compliant = Vec::new();
    for (turn_index, turn) in t.turns.iter().enumerate() {
        if !turn.is_assistant() {
            continue;
        }
        violations.extend(
            turn.violations
                .iter()
                .map(|&code| TurnViolation { turn_index, code }),
        );
        if turn.has(TagKind::ToolResponse) {
            violations.push(TurnViolation {
                turn_index,
                code: ViolationCode::StrayTopLevelTag,
            });
        }
        per_turn_compliant.push(kernels::is_compliant_turn(turn));
    }
    StructureReport {
        balanced: !violations
            .iter()
            .any(|v| v.code == ViolationCode::UnbalancedTag),
        violations,
        per_turn_compliant,
    }
}

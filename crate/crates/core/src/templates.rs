//! Prompt layouts that place tool calls and responses at different positions
//! relative to `<think>` blocks.
//!
//! Each renderer produces a prompt that ends where the model is expected to
//! continue. The outputs are compared byte for byte against the files in
//! `tests/golden/`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::parser::{END_MARKER, START_MARKER};

pub const T3_TERMINATOR: &str = "End of tools call.\n</think>";
pub const ANSWER_LEAD_IN: &str = "Now let me think about this information and provide an answer:";
pub const REASONING_LEAD_IN: &str = "Reasoning:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    #[serde(rename = "T1_BASELINE")]
    T1Baseline,
    #[serde(rename = "T2_THINK_OPEN")]
    T2ThinkOpen,
    #[serde(rename = "T3_ALL_INSIDE_THINK")]
    T3AllInsideThink,
    #[serde(rename = "T4_CALLS_OUT_RESPONSES_IN")]
    T4CallsOutResponsesIn,
    #[serde(rename = "T5_SEQUENCED_THINK")]
    T5SequencedThink,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::T1Baseline,
        TemplateId::T2ThinkOpen,
        TemplateId::T3AllInsideThink,
        TemplateId::T4CallsOutResponsesIn,
        TemplateId::T5SequencedThink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::T1Baseline => "T1_BASELINE",
            TemplateId::T2ThinkOpen => "T2_THINK_OPEN",
            TemplateId::T3AllInsideThink => "T3_ALL_INSIDE_THINK",
            TemplateId::T4CallsOutResponsesIn => "T4_CALLS_OUT_RESPONSES_IN",
            TemplateId::T5SequencedThink => "T5_SEQUENCED_THINK",
        }
    }

    /// `T1` .. `T5`.
    pub fn short(self) -> &'static str {
        &self.name()[..2]
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown template id {0:?}")]
pub struct UnknownTemplate(pub String);

/// Accepts the full name or the `T1`..`T5` short form, case-insensitively.
impl FromStr for TemplateId {
    type Err = UnknownTemplate;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        TemplateId::ALL
            .into_iter()
            .find(|id| id.name() == upper || id.short() == upper)
            .ok_or_else(|| UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPair {
    pub call_text: String,
    pub response_text: String,
}

impl ToolPair {
    pub fn new(call: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            call_text: call.into(),
            response_text: response.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeContext {
    pub system_prompt: String,
    pub question: String,
    #[serde(default)]
    pub tool_pairs: Vec<ToolPair>,
}

impl EpisodeContext {
    /// Placeholder context whose rendering matches the golden files.
    pub fn demo() -> Self {
        Self {
            system_prompt: "{system_prompt}".into(),
            question: "What episode of the TV show \"Sister, Sister\" did Chip Fields-Hurd".into(),
            tool_pairs: (1..=2)
                .map(|i| {
                    ToolPair::new(
                        format!("{{tool_call_{i}}}"),
                        format!("{{tool_response_{i}}}"),
                    )
                })
                .collect(),
        }
    }
}

fn call(text: &str) -> String {
    format!("<tool_call>{text}</tool_call>")
}

fn response(text: &str) -> String {
    format!("<tool_response>{text}</tool_response>")
}

pub fn render(id: TemplateId, ctx: &EpisodeContext) -> String {
    let mut out = format!(
        "{START_MARKER}system {}{END_MARKER}\n\n{START_MARKER}user\n{}{END_MARKER}\n\n",
        ctx.system_prompt, ctx.question
    );
    let assistant = format!("{START_MARKER}assistant");
    let pairs = &ctx.tool_pairs;
    match id {
        TemplateId::T1Baseline => {
            for p in pairs {
                out += &format!("{assistant}\n{}\n\n", call(&p.call_text));
                out += &format!("{START_MARKER}user\n{}\n\n", response(&p.response_text));
            }
            out += &assistant;
        }
        TemplateId::T2ThinkOpen | TemplateId::T3AllInsideThink => {
            out += &format!("{assistant}\n\n<think>\n\n");
            for p in pairs {
                out += &format!("{}\n{}\n\n", call(&p.call_text), response(&p.response_text));
            }
            out += if id == TemplateId::T2ThinkOpen {
                REASONING_LEAD_IN
            } else {
                T3_TERMINATOR
            };
        }
        TemplateId::T4CallsOutResponsesIn => {
            out += &format!("{assistant}\n\n<think>\n</think>\n\n");
            for p in pairs {
                out += &call(&p.call_text);
                out.push('\n');
            }
            out += "\n<think>\n\n";
            for p in pairs {
                out += &response(&p.response_text);
                out.push('\n');
            }
            out.push('\n');
            out += ANSWER_LEAD_IN;
        }
        TemplateId::T5SequencedThink => {
            out += &format!("{assistant}\n\n<think>\n</think>\n\n");
            for (i, p) in pairs.iter().enumerate() {
                out += &format!(
                    "{}\n\n<think>\n{}\n",
                    call(&p.call_text),
                    response(&p.response_text)
                );
                if i + 1 < pairs.len() {
                    out += "</think>\n\n";
                } else {
                    out.push('\n');
                }
            }
            out += ANSWER_LEAD_IN;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateDescriptor {
    pub id: TemplateId,
    pub summary: &'static str,
    /// Recorded behaviour of a 4B reasoning model; `None` where nothing was noted.
    pub observation: Option<&'static str>,
    /// Recorded dry-run accuracy of the same model, as a fraction.
    pub reported_accuracy: f64,
}

pub fn list_templates() -> Vec<TemplateDescriptor> {
    vec![
        TemplateDescriptor {
            id: TemplateId::T1Baseline,
            summary: "Tool calls and responses as alternating assistant and user turns.",
            observation: None,
            reported_accuracy: 0.816,
        },
        TemplateDescriptor {
            id: TemplateId::T2ThinkOpen,
            summary: "One open think block holding every call and response, ending in a reasoning cue.",
            observation: None,
            reported_accuracy: 0.822,
        },
        TemplateDescriptor {
            id: TemplateId::T3AllInsideThink,
            summary: "One think block holding every call and response, closed after a fixed terminator line.",
            observation: Some("Model tries to call tools"),
            reported_accuracy: 0.774,
        },
        TemplateDescriptor {
            id: TemplateId::T4CallsOutResponsesIn,
            summary: "Empty think block, calls outside, then an open think block holding the responses.",
            observation: Some("Model returns empty string"),
            reported_accuracy: 0.738,
        },
        TemplateDescriptor {
            id: TemplateId::T5SequencedThink,
            summary: "Each call followed by its own think block holding the response; the last stays open.",
            observation: Some("Model returns empty string"),
            reported_accuracy: 0.630,
        },
    ]
}

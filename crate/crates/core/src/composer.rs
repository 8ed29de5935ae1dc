//! Stage-1 and Stage-2 composite rewards.
//!
//! Stage 1 multiplies correctness into a log-shaped behavioral score; Stage 2
//! is a product of binary gates. [`score_episode`] always fills in both.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::LabConfig;
use crate::kernels::{self, KernelError, ToolCallLog, WhitespaceTokenizer};
use crate::parser::validate_structure;
use crate::search::{ToolCall, ERROR_PREFIX};
use crate::trace::{count_tags, terminal_answer, EpisodeRecord, Role, TagKind, Transcript};

/// Behavioral score assigned when the XML structure is invalid.
pub const INVALID_XML_PENALTY: f64 = -0.5;

/// Offset inside the Stage-1 logarithm.
pub const STAGE1_LOG_OFFSET: f64 = 1.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Weights {
    pub w_tool: f64,
    pub w_format: f64,
    pub w_think: f64,
    pub w_xml: f64,
    pub w_vs: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Self {
            w_tool: 0.2,
            w_format: 0.2,
            w_think: 0.1,
            w_xml: 0.1,
            w_vs: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposerConfig {
    pub weights: Stage1Weights,
    pub b_floor: f64,
    pub log_arg_floor: f64,
    pub format_gate_threshold: f64,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            weights: Stage1Weights::default(),
            b_floor: -0.5,
            log_arg_floor: 0.001,
            format_gate_threshold: 1.0,
        }
    }
}

/// The five secondary rewards that feed the behavioral score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub r_tool: f64,
    pub r_format: f64,
    pub r_think: f64,
    pub r_xml: f64,
    pub r_vs: f64,
}

/// Which composite reward is the training signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One,
    Two,
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(format!("stage must be 1 or 2, got {other}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// Every component and composite value for one scored episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_correct: f64,
    pub r_xml: f64,
    pub r_format: f64,
    pub r_tool: f64,
    pub r_think: f64,
    pub r_vs: f64,
    pub b: f64,
    pub r1: f64,
    pub r2: f64,
    pub g_format: bool,
    pub g_xml: bool,
}

impl RewardBreakdown {
    pub fn signal(&self, stage: Stage) -> f64 {
        match stage {
            Stage::One => self.r1,
            Stage::Two => self.r2,
        }
    }

    /// Recomputes both composites with the given correctness.
    pub fn with_correctness(mut self, r_correct: f64, cfg: &ComposerConfig) -> Self {
        self.r_correct = r_correct;
        self.r1 = stage1_reward(r_correct, self.b, cfg);
        self.r2 = stage2_reward(r_correct, self.r_format, self.r_xml, cfg);
        self
    }

    pub fn components(&self) -> Components {
        Components {
            r_tool: self.r_tool,
            r_format: self.r_format,
            r_think: self.r_think,
            r_xml: self.r_xml,
            r_vs: self.r_vs,
        }
    }
}

/// Weighted sum of the secondary rewards, floored at `b_floor`; a fixed −0.5
/// when the XML structure is invalid.
pub fn behavioral_score(
    c: &Components,
    w: &Stage1Weights,
    xml_valid: bool,
    cfg: &ComposerConfig,
) -> f64 {
    if !xml_valid {
        return INVALID_XML_PENALTY;
    }
    let sum = w.w_tool * c.r_tool
        + w.w_format * c.r_format
        + w.w_think * c.r_think
        + w.w_xml * c.r_xml
        + w.w_vs * c.r_vs;
    sum.max(cfg.b_floor)
}

/// `r_correct × ln(max(log_arg_floor, 1.001 + r_correct × b))`.
pub fn stage1_reward(r_correct: f64, b: f64, cfg: &ComposerConfig) -> f64 {
    r_correct
        * (STAGE1_LOG_OFFSET + r_correct * b)
            .max(cfg.log_arg_floor)
            .ln()
}

pub fn format_gate(r_format: f64, cfg: &ComposerConfig) -> bool {
    r_format >= cfg.format_gate_threshold
}

pub fn xml_gate(r_xml: f64) -> bool {
    r_xml > 0.0
}

/// `r_correct × g_format × g_xml`.
pub fn stage2_reward(r_correct: f64, r_format: f64, r_xml: f64, cfg: &ComposerConfig) -> f64 {
    if r_correct > 0.0 && format_gate(r_format, cfg) && xml_gate(r_xml) {
        r_correct
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("TOOL_LOG_MISMATCH: {log_len} logged calls for {span_count} tool_call spans")]
    ToolLogMismatch { log_len: usize, span_count: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// A transcript with its accepted answers and tool outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transcript: Transcript,
    pub truths: Vec<String>,
    pub tool_log: ToolCallLog,
}

impl Episode {
    /// Uses the record's tool log, or infers one with [`infer_tool_log`].
    pub fn from_record(record: &EpisodeRecord) -> Self {
        let transcript = record.transcript();
        let tool_log = match &record.tool_log {
            Some(log) => log.clone(),
            None => infer_tool_log(&transcript),
        };
        Self {
            transcript,
            truths: record.answers.clone(),
            tool_log,
        }
    }
}

/// Reconstructs tool outcomes from a recorded transcript.
///
/// `tool_call` spans in assistant turns are matched in order with
/// `tool_response` spans in later user or tool turns. A call is ok when its
/// response exists and does not start with `ERROR:`.
pub fn infer_tool_log(t: &Transcript) -> ToolCallLog {
    let mut names = Vec::new();
    let mut outcomes = Vec::new();
    for turn in &t.turns {
        match turn.role() {
            Role::Assistant => {
                for span in turn.spans_of(TagKind::ToolCall) {
                    let name = ToolCall::parse(&span.inner_text).map_or_else(
                        |_| crate::rollout::MALFORMED_TOOL_NAME.to_string(),
                        |c| c.name,
                    );
                    names.push(name);
                }
            }
            Role::User | Role::Tool => {
                for span in turn.spans_of(TagKind::ToolResponse) {
                    if outcomes.len() < names.len() {
                        outcomes.push(!span.inner_text.trim_start().starts_with(ERROR_PREFIX));
                    }
                }
            }
            Role::System => {}
        }
    }
    outcomes.resize(names.len(), false);
    names
        .into_iter()
        .zip(outcomes)
        .map(|(n, ok)| kernels::ToolCallEntry { tool_name: n, ok })
        .collect()
}

/// Scores one episode under the full reward configuration.
///
/// The tool log must hold exactly one entry per `tool_call` span in assistant
/// turns.
pub fn score_episode(episode: &Episode, lab: &LabConfig) -> Result<RewardBreakdown, ScoreError> {
    let (cfg, rewards) = (&lab.composer, &lab.rewards);
    let t = &episode.transcript;
    let counts = count_tags(t);
    if counts.n_tool != episode.tool_log.len() {
        return Err(ScoreError::ToolLogMismatch {
            log_len: episode.tool_log.len(),
            span_count: counts.n_tool,
        });
    }
    if episode.truths.is_empty() {
        return Err(KernelError::EmptyTruths.into());
    }

    let answer = terminal_answer(t);
    let r_correct = match &answer {
        Some(a) => kernels::correctness_reward(a, &episode.truths, rewards.normalization)?,
        None => 0.0,
    };

    let report = validate_structure(t);
    let r_xml = if rewards.clamp.xml {
        kernels::xml_validity_reward(&counts, &report)
    } else {
        kernels::xml_validity_reward_raw(&counts, &report)
    };
    let r_format = kernels::format_adherence_reward(t);
    let r_tool = kernels::tool_execution_reward(&episode.tool_log);
    let (visits, searches) = (
        episode.tool_log.visit_count(),
        episode.tool_log.search_count(),
    );
    let r_vs = if rewards.clamp.visit_search {
        kernels::visit_search_reward(visits, searches)
    } else {
        kernels::visit_search_reward_raw(visits, searches)
    };
    let tokens = kernels::count_think_tokens(t, &WhitespaceTokenizer);
    let r_think = kernels::aggregate_think_reward(&tokens, &rewards.think);

    let components = Components {
        r_tool,
        r_format,
        r_think,
        r_xml,
        r_vs,
    };
    let xml_valid = !report.has_structural_violation();
    let b = behavioral_score(&components, &cfg.weights, xml_valid, cfg);

    Ok(RewardBreakdown {
        r_correct,
        r_xml,
        r_format,
        r_tool,
        r_think,
        r_vs,
        b,
        r1: stage1_reward(r_correct, b, cfg),
        r2: stage2_reward(r_correct, r_format, r_xml, cfg),
        g_format: format_gate(r_format, cfg),
        g_xml: xml_gate(r_xml),
    })
}

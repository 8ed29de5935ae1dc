//! Request and response bodies, and the scoring path shared by the score
//! endpoints.

use rewardlab_core::composer::infer_tool_log;
use rewardlab_core::composer::{score_episode, Episode, RewardBreakdown, ScoreError, Stage};
use rewardlab_core::config::LabConfig;
use rewardlab_core::kernels::{KernelError, ToolCallLog};
use rewardlab_core::parser::parse_transcript;
use rewardlab_core::rollout::{EpisodeLimits, QAPair};
use rewardlab_core::trace::{Message, TagKind, Transcript};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MAX_BATCH: usize = 1024;

/// Raw chat-framed text or a list of turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranscriptInput {
    Raw(String),
    Turns(Vec<Message>),
}

impl TranscriptInput {
    pub fn to_transcript(&self) -> Result<Transcript, ErrorBody> {
        match self {
            TranscriptInput::Raw(text) => parse_transcript(text)
                .map_err(|e| ErrorBody::new(ErrorCode::MalformedFraming, e.to_string())),
            TranscriptInput::Turns(turns) => Ok(Transcript::from_messages(turns.iter().cloned())),
        }
    }
}

fn stage_one() -> Stage {
    Stage::One
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub transcript: TranscriptInput,
    pub truths: Vec<String>,
    #[serde(default = "stage_one")]
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_log: Option<ToolCallLog>,
    /// Partial composer config merged over the service config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_overrides: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub breakdown: RewardBreakdown,
    /// `breakdown.r1` or `breakdown.r2`, following the requested stage.
    pub reward: f64,
    pub config_hash: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    MalformedRequest,
    MalformedFraming,
    EmptyTruths,
    InvalidConfig,
    ToolLogMismatch,
    BatchTooLarge,
    PolicyUnreachable,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorBody {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn status(&self) -> u16 {
        match self.code {
            ErrorCode::MalformedRequest
            | ErrorCode::MalformedFraming
            | ErrorCode::EmptyTruths
            | ErrorCode::InvalidConfig => 400,
            ErrorCode::ToolLogMismatch => 422,
            ErrorCode::BatchTooLarge => 413,
            ErrorCode::PolicyUnreachable => 502,
            ErrorCode::Internal => 500,
        }
    }
}

/// `{"error": {...}}`, used for error responses and failed batch items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchItem {
    Scored(ScoreResponse),
    Failed(ErrorEnvelope),
}

/// Scores one request against the service's base config.
pub fn score_request(req: &ScoreRequest, base: &LabConfig) -> Result<ScoreResponse, ErrorBody> {
    let lab = match &req.config_overrides {
        Some(o) => base
            .with_composer_overrides(o)
            .map_err(|e| ErrorBody::new(ErrorCode::InvalidConfig, e.to_string()))?,
        None => *base,
    };
    let transcript = req.transcript.to_transcript()?;

    let mut warnings = Vec::new();
    let tool_log = match &req.tool_log {
        Some(log) => log.clone(),
        None => {
            warnings.push("tool_log inferred from transcript".to_string());
            infer_tool_log(&transcript)
        }
    };
    if transcript.assistant_turn_count() == 0 {
        warnings.push("transcript has no assistant turns".to_string());
    } else if !transcript.assistant_turns().any(|t| t.has(TagKind::Answer)) {
        warnings.push("no answer span; last assistant message used as the answer".to_string());
    }

    let episode = Episode {
        transcript,
        truths: req.truths.clone(),
        tool_log,
    };
    let breakdown = score_episode(&episode, &lab).map_err(|e| match e {
        ScoreError::ToolLogMismatch { .. } => {
            ErrorBody::new(ErrorCode::ToolLogMismatch, e.to_string())
        }
        ScoreError::Kernel(KernelError::EmptyTruths) => {
            ErrorBody::new(ErrorCode::EmptyTruths, "truths must not be empty")
        }
        ScoreError::Kernel(k) => ErrorBody::new(ErrorCode::InvalidConfig, k.to_string()),
    })?;
    Ok(ScoreResponse {
        reward: breakdown.signal(req.stage),
        breakdown,
        config_hash: lab.hash(),
        warnings,
    })
}

/// Parses and scores one batch element; never fails the batch.
pub fn score_batch_item(item: Value, base: &LabConfig) -> BatchItem {
    let result = serde_json::from_value::<ScoreRequest>(item)
        .map_err(|e| ErrorBody::new(ErrorCode::MalformedRequest, e.to_string()))
        .and_then(|req| score_request(&req, base));
    match result {
        Ok(r) => BatchItem::Scored(r),
        Err(error) => BatchItem::Failed(ErrorEnvelope { error }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    rewardlab_core::search::DEFAULT_SEARCH_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRequest {
    pub doc_id: String,
}

/// Runs one episode with either a remote policy or an inline script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEpisodeRequest {
    pub qa: QAPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<String>>,
    /// Fault seed; the service seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub limits: EpisodeLimits,
    #[serde(default = "stage_one")]
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub corpus_doc_count: usize,
    pub config_hash: String,
}

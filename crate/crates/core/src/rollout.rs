//! Multi-turn rollouts against the simulated tool environment.
//!
//! A policy is anything that maps the conversation so far to the next assistant
//! message. The engine parses each message, dispatches its tool calls, injects
//! the responses as user turns wrapped in `<tool_response>` tags, and stops on
//! an answer or a limit. The finished transcript is then scored as a whole.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{score_episode, Episode, RewardBreakdown, ScoreError, Stage};
use crate::config::LabConfig;
use crate::kernels::ToolCallLog;
use crate::parser::render_prompt;
use crate::search::{dispatch, CorpusIndex, FaultConfig, ToolCall, ToolResponse};
use crate::trace::{Role, TagKind, Transcript};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a research assistant with two tools. \
Call a tool by writing <tool_call>{\"name\": \"search\", \"arguments\": {\"query\": \"...\", \"k\": 5}}</tool_call> \
or <tool_call>{\"name\": \"visit\", \"arguments\": {\"doc_id\": \"...\"}}</tool_call>. \
Think inside <think></think> before acting when it helps. \
Give the final answer as <answer>...</answer>.";

/// Tool name recorded for calls whose text could not be parsed.
pub const MALFORMED_TOOL_NAME: &str = "malformed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("PARSE_ERROR at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("DUPLICATE_ID {id} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads one QA record per line. Extra fields (such as `turns`) are ignored.
pub fn read_qa_dataset<R: BufRead>(reader: R) -> Result<Vec<QAPair>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let qa: QAPair = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if qa.answers.is_empty() {
            return Err(DatasetError::Parse {
                line: lineno,
                message: "answers must not be empty".into(),
            });
        }
        if !seen.insert(qa.id.clone()) {
            return Err(DatasetError::DuplicateId {
                id: qa.id,
                line: lineno,
            });
        }
        out.push(qa);
    }
    Ok(out)
}

pub fn load_qa_dataset(path: &Path) -> Result<Vec<QAPair>, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_qa_dataset(std::io::BufReader::new(file))
}

/// What a policy sees each turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTurnRequest {
    /// Chat-framed conversation ending with an open assistant header.
    pub conversation: String,
    pub episode_id: String,
    pub turn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFailureKind {
    /// The endpoint could not be reached.
    Unreachable,
    /// The endpoint answered with an error or an unusable body.
    Failed,
    /// A scripted policy ran out of turns.
    Exhausted,
    /// Two consecutive empty messages.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyFailure {
    pub kind: PolicyFailureKind,
    pub message: String,
}

impl PolicyFailure {
    pub fn new(kind: PolicyFailureKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for PolicyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Turn-level text-in, text-out contract.
pub trait Policy {
    fn respond(&mut self, request: &PolicyTurnRequest) -> Result<String, PolicyFailure>;
}

/// Replays fixed assistant messages in order, ignoring the conversation.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    script: Vec<String>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            cursor: 0,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn respond(&mut self, _request: &PolicyTurnRequest) -> Result<String, PolicyFailure> {
        let msg = self.script.get(self.cursor).cloned().ok_or_else(|| {
            PolicyFailure::new(
                PolicyFailureKind::Exhausted,
                format!("script exhausted after {} turns", self.script.len()),
            )
        })?;
        self.cursor += 1;
        Ok(msg)
    }
}

/// `scripted_policy(script)`.
pub fn scripted_policy<S: Into<String>>(script: impl IntoIterator<Item = S>) -> ScriptedPolicy {
    ScriptedPolicy::new(script)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLimits {
    pub max_assistant_turns: usize,
    pub max_tool_calls: usize,
    pub max_total_bytes: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            max_assistant_turns: 10,
            max_tool_calls: 16,
            max_total_bytes: 256 * 1024,
        }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_assistant_turns == 0 || self.max_tool_calls == 0 || self.max_total_bytes == 0 {
            Err("episode limits must all be >= 1".into())
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Answered,
    TurnLimit,
    ToolLimit,
    ByteLimit,
    PolicyError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub limits: EpisodeLimits,
    pub stage: Stage,
    pub lab: LabConfig,
    pub system_prompt: String,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            limits: EpisodeLimits::default(),
            stage: Stage::One,
            lab: LabConfig::default(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub id: String,
    pub transcript: Transcript,
    pub tool_log: ToolCallLog,
    pub breakdown: RewardBreakdown,
    pub termination: Termination,
    pub stage: Stage,
    /// The training signal for `stage`.
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_error: Option<PolicyFailure>,
}

struct Rollout<'a> {
    index: &'a CorpusIndex,
    faults: &'a FaultConfig,
    limits: EpisodeLimits,
    transcript: Transcript,
    log: ToolCallLog,
    calls_made: u64,
}

impl Rollout<'_> {
    fn over_bytes(&self) -> bool {
        self.transcript.content_bytes() > self.limits.max_total_bytes
    }

    /// Dispatches the calls of the latest assistant turn. Calls that cannot be
    /// dispatched because a limit was hit are logged as failed without a
    /// response turn, keeping the log aligned with the `tool_call` spans.
    fn run_calls(&mut self, calls: Vec<String>) -> Option<Termination> {
        let mut stop = None;
        for text in calls {
            if stop.is_none() && self.calls_made as usize >= self.limits.max_tool_calls {
                stop = Some(Termination::ToolLimit);
            }
            if stop.is_some() {
                let name =
                    ToolCall::parse(&text).map_or(MALFORMED_TOOL_NAME.to_string(), |c| c.name);
                self.log.push(name, false);
                continue;
            }
            let (name, response) = match ToolCall::parse(&text) {
                Ok(call) => {
                    let r = dispatch(self.index, &call, self.faults, self.calls_made);
                    (call.name, r)
                }
                Err(e) => (MALFORMED_TOOL_NAME.to_string(), ToolResponse::failure(e)),
            };
            self.calls_made += 1;
            self.log.push(name, response.ok);
            self.transcript
                .push(Role::User, TagKind::ToolResponse.wrap(&response.payload));
            if self.over_bytes() {
                stop = Some(Termination::ByteLimit);
            }
        }
        stop
    }
}

/// Runs one episode and scores the final transcript.
///
/// Deterministic for a deterministic policy: the fault stream is indexed by
/// the episode's own call counter.
pub fn run_episode(
    policy: &mut dyn Policy,
    qa: &QAPair,
    index: &CorpusIndex,
    faults: &FaultConfig,
    opts: &RolloutOptions,
) -> Result<EpisodeResult, ScoreError> {
    let mut run = Rollout {
        index,
        faults,
        limits: opts.limits,
        transcript: Transcript::new(),
        log: ToolCallLog::new(),
        calls_made: 0,
    };
    run.transcript.metadata.episode_id = Some(qa.id.clone());
    run.transcript.metadata.seed = Some(faults.seed);
    run.transcript
        .push(Role::System, opts.system_prompt.as_str());
    run.transcript.push(Role::User, qa.question.as_str());

    let mut policy_error = None;
    let mut assistant_turns = 0;
    let termination = loop {
        if assistant_turns >= opts.limits.max_assistant_turns {
            break Termination::TurnLimit;
        }
        let mut empties = 0;
        let reply = loop {
            let request = PolicyTurnRequest {
                conversation: render_prompt(&run.transcript),
                episode_id: qa.id.clone(),
                turn: assistant_turns,
            };
            match policy.respond(&request) {
                Ok(text) if text.is_empty() => {
                    empties += 1;
                    if empties == 2 {
                        break Err(PolicyFailure::new(
                            PolicyFailureKind::Empty,
                            "policy returned empty content twice in a row",
                        ));
                    }
                }
                other => break other,
            }
        };
        let reply = match reply {
            Ok(text) => text,
            Err(failure) => {
                policy_error = Some(failure);
                break Termination::PolicyError;
            }
        };

        assistant_turns += 1;
        let turn = run.transcript.push(Role::Assistant, reply);
        let answered = turn.has(TagKind::Answer);
        let calls: Vec<String> = turn
            .spans_of(TagKind::ToolCall)
            .map(|s| s.inner_text.clone())
            .collect();

        if answered {
            // Calls issued alongside an answer are never executed.
            for text in calls {
                let name =
                    ToolCall::parse(&text).map_or(MALFORMED_TOOL_NAME.to_string(), |c| c.name);
                run.log.push(name, false);
            }
            break Termination::Answered;
        }
        if run.over_bytes() {
            for text in calls {
                let name =
                    ToolCall::parse(&text).map_or(MALFORMED_TOOL_NAME.to_string(), |c| c.name);
                run.log.push(name, false);
            }
            break Termination::ByteLimit;
        }
        if let Some(stop) = run.run_calls(calls) {
            break stop;
        }
    };

    let episode = Episode {
        transcript: run.transcript,
        truths: qa.answers.clone(),
        tool_log: run.log,
    };
    let mut breakdown = score_episode(&episode, &opts.lab)?;
    if termination == Termination::PolicyError {
        breakdown = breakdown.with_correctness(0.0, &opts.lab.composer);
    }
    Ok(EpisodeResult {
        id: qa.id.clone(),
        transcript: episode.transcript,
        tool_log: episode.tool_log,
        reward: breakdown.signal(opts.stage),
        breakdown,
        termination,
        stage: opts.stage,
        policy_error,
    })
}

/// One line of a breakdown file: the flat form written by `score` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRecord {
    pub id: String,
    pub stage: Stage,
    pub reward: f64,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub config_hash: String,
}

impl BreakdownRecord {
    pub fn new(
        id: impl Into<String>,
        stage: Stage,
        breakdown: RewardBreakdown,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            stage,
            reward: breakdown.signal(stage),
            breakdown,
            termination: None,
            config_hash: config_hash.into(),
        }
    }

    pub fn from_result(r: &EpisodeResult, config_hash: &str) -> Self {
        Self {
            termination: Some(r.termination),
            ..Self::new(r.id.clone(), r.stage, r.breakdown, config_hash)
        }
    }
}

/// Per-question assistant messages for [`ScriptedPolicy`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub id: String,
    pub turns: Vec<String>,
}

/// Reads one [`ScriptRecord`] per line, keyed by question id.
pub fn read_scripts<R: BufRead>(reader: R) -> Result<HashMap<String, Vec<String>>, DatasetError> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScriptRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.contains_key(&rec.id) {
            return Err(DatasetError::DuplicateId {
                id: rec.id,
                line: i + 1,
            });
        }
        out.insert(rec.id, rec.turns);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
    /// In dataset order.
    pub episodes: Vec<EpisodeResult>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("building worker pool: {0}")]
    Pool(String),
    #[error("episode {id}: {source}")]
    Score { id: String, source: ScoreError },
}

/// Creates a fresh policy for each question.
pub trait PolicyFactory: Sync {
    fn policy_for(&self, qa: &QAPair) -> Box<dyn Policy>;
}

impl<F> PolicyFactory for F
where
    F: Fn(&QAPair) -> Box<dyn Policy> + Sync,
{
    fn policy_for(&self, qa: &QAPair) -> Box<dyn Policy> {
        self(qa)
    }
}

/// Runs every question, up to `jobs` at a time. Episode `i` uses the fault
/// stream `faults.for_episode(i)`, so results do not depend on `jobs`.
pub fn evaluate(
    factory: &dyn PolicyFactory,
    dataset: &[QAPair],
    index: &CorpusIndex,
    faults: &FaultConfig,
    opts: &RolloutOptions,
    jobs: usize,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let results: Vec<Result<EpisodeResult, EvalError>> = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, qa)| {
                let mut policy = factory.policy_for(qa);
                let episode_faults = faults.for_episode(i as u64);
                run_episode(policy.as_mut(), qa, index, &episode_faults, opts).map_err(|source| {
                    EvalError::Score {
                        id: qa.id.clone(),
                        source,
                    }
                })
            })
            .collect()
    });
    let episodes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = episodes.len() as f64;
    let mean =
        |f: fn(&RewardBreakdown) -> f64| episodes.iter().map(|e| f(&e.breakdown)).sum::<f64>() / n;
    Ok(EvalReport {
        accuracy: mean(|b| b.r_correct),
        mean_r1: mean(|b| b.r1),
        mean_r2: mean(|b| b.r2),
        episodes,
    })
}

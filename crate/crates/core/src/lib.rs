//! Reward kernels, transcript parsing, a BM25 tool environment and a rollout
//! engine for multi-turn search agents.

pub mod composer;
pub mod config;
pub mod demo;
pub mod kernels;
pub mod normal;
pub mod parser;
pub mod rollout;
pub mod search;
pub mod templates;
pub mod trace;

pub use composer::{score_episode, Episode, RewardBreakdown, ScoreError, Stage};
pub use config::LabConfig;
pub use parser::{parse_transcript, serialize_transcript, validate_structure};
pub use rollout::{evaluate, run_episode, EpisodeLimits, Policy, QAPair, Termination};
pub use search::{CorpusIndex, FaultConfig};
pub use trace::{Message, Role, TagKind, Transcript};

//! Remote policy over HTTP.
//!
//! Each turn is a POST of a [`PolicyTurnRequest`] to the policy URL; the reply
//! must be `{"content": "<next assistant message>"}`.

use std::time::Duration;

use rewardlab_core::rollout::{Policy, PolicyFailure, PolicyFailureKind, PolicyTurnRequest};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyReply {
    pub content: String,
}

#[derive(Clone)]
pub struct HttpPolicy {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpPolicy {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, PolicyFailure> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PolicyFailure::new(PolicyFailureKind::Failed, e.to_string()))?;
        Ok(Self {
            url: url.into(),
            client,
        })
    }
}

impl Policy for HttpPolicy {
    fn respond(&mut self, request: &PolicyTurnRequest) -> Result<String, PolicyFailure> {
        let resp = self
            .client
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| {
                let kind = if e.is_connect() || e.is_timeout() {
                    PolicyFailureKind::Unreachable
                } else {
                    PolicyFailureKind::Failed
                };
                PolicyFailure::new(kind, format!("{}: {e}", self.url))
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(PolicyFailure::new(
                PolicyFailureKind::Failed,
                format!("{} answered {status}", self.url),
            ));
        }
        let reply: PolicyReply = resp.json().map_err(|e| {
            PolicyFailure::new(PolicyFailureKind::Failed, format!("bad reply body: {e}"))
        })?;
        Ok(reply.content)
    }
}

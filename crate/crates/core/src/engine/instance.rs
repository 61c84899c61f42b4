use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{EventBody, ExecutionEvent};
use crate::vars::VariableTree;
use crate::version::Version;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Arrived,
    AwaitingService,
    Departing,
}

/// A token sitting on a node. `via` is the flow it arrived by, which is what
/// a parallel join counts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TokenPosition {
    pub node_id: String,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<String>,
}

impl TokenPosition {
    pub fn arrived(node_id: impl Into<String>, via: Option<String>) -> Self {
        Self {
            node_id: node_id.into(),
            phase: Phase::Arrived,
            via,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceStatus {
    Running,
    Completed,
    Faulted,
    Cancelled,
}

impl InstanceStatus {
    pub fn is_terminal(self) -> bool {
        self != Self::Running
    }
}

impl std::fmt::Display for InstanceStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultDetail {
    pub node_id: String,
    pub error: String,
}

/// One execution of a deployed definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessInstance {
    pub instance_id: String,
    pub definition_id: String,
    pub definition_version: Version,
    /// Multiset of token positions, kept sorted.
    pub tokens: Vec<TokenPosition>,
    pub variables: VariableTree,
    pub status: InstanceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_detail: Option<FaultDetail>,
    pub started_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<u64>,
    pub resolved_services: BTreeMap<String, Version>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event seq {seq} does not fit instance {instance_id}: {message}")]
pub struct ApplyError {
    pub instance_id: String,
    pub seq: u64,
    pub message: String,
}

impl ProcessInstance {
    /// Builds the initial state from an `InstanceStarted` event.
    pub fn from_started(event: &ExecutionEvent) -> Result<Self, ApplyError> {
        let fail = |message: &str| ApplyError {
            instance_id: event.instance_id.clone().unwrap_or_default(),
            seq: event.seq,
            message: message.to_string(),
        };
        let EventBody::InstanceStarted {
            definition_id,
            definition_version,
            start_node,
            variables,
            resolved_services,
        } = &event.body
        else {
            return Err(fail("not an InstanceStarted event"));
        };
        let instance_id = event
            .instance_id
            .clone()
            .ok_or_else(|| fail("InstanceStarted without instance id"))?;
        Ok(Self {
            instance_id,
            definition_id: definition_id.clone(),
            definition_version: definition_version.clone(),
            tokens: vec![TokenPosition::arrived(start_node.clone(), None)],
            variables: variables.clone(),
            status: InstanceStatus::Running,
            fault_detail: None,
            started_at: event.timestamp,
            finished_at: None,
            resolved_services: resolved_services.clone(),
        })
    }

    pub fn tokens_at<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a TokenPosition> + 'a {
        self.tokens.iter().filter(move |t| t.node_id == node_id)
    }

    pub fn has_token(&self, token: &TokenPosition) -> bool {
        self.tokens.contains(token)
    }

    /// Folds one event into the state. This is the only way instance state
    /// changes, live or during replay.
    pub fn apply(&mut self, event: &ExecutionEvent) -> Result<(), ApplyError> {
        let instance_id = self.instance_id.clone();
        let fail = |message: String| ApplyError {
            instance_id: instance_id.clone(),
            seq: event.seq,
            message,
        };
        if self.status.is_terminal() {
            return Err(fail(format!("{} after terminal status {}", event.kind(), self.status)));
        }
        match &event.body {
            EventBody::TokenMoved { consumed, produced, .. } => {
                for token in consumed {
                    self.take(token).map_err(&fail)?;
                }
                self.tokens.extend(produced.iter().cloned());
                self.tokens.sort();
            }
            EventBody::TaskInvoked { node_id, .. } => {
                if let Some(t) = self.first_at(node_id, Phase::Arrived) {
                    t.phase = Phase::AwaitingService;
                    self.tokens.sort();
                } else if self.first_at(node_id, Phase::AwaitingService).is_none() {
                    return Err(fail(format!("no token waiting at `{node_id}`")));
                }
            }
            EventBody::TaskCompleted { node_id, updates, .. } => {
                let token = self
                    .first_at(node_id, Phase::AwaitingService)
                    .ok_or_else(|| fail(format!("no invocation pending at `{node_id}`")))?;
                token.phase = Phase::Departing;
                self.tokens.sort();
                for update in updates {
                    self.variables.set_path(&update.path, update.value.clone());
                }
            }
            EventBody::InstanceCompleted { consumed, .. } => {
                self.take(consumed).map_err(&fail)?;
                if !self.tokens.is_empty() {
                    return Err(fail("instance completed with tokens left".into()));
                }
                self.status = InstanceStatus::Completed;
                self.finished_at = Some(event.timestamp);
            }
            EventBody::InstanceFaulted { node_id, error } => {
                self.tokens.clear();
                self.status = InstanceStatus::Faulted;
                self.fault_detail = Some(FaultDetail {
                    node_id: node_id.clone(),
                    error: error.clone(),
                });
                self.finished_at = Some(event.timestamp);
            }
            EventBody::InstanceCancelled {} => {
                self.tokens.clear();
                self.status = InstanceStatus::Cancelled;
                self.finished_at = Some(event.timestamp);
            }
            EventBody::InstanceStarted { .. } => return Err(fail("instance started twice".into())),
            EventBody::TaskFailed { .. } | EventBody::RetryScheduled { .. } => {}
            _ => {}
        }
        Ok(())
    }

    fn first_at(&mut self, node_id: &str, phase: Phase) -> Option<&mut TokenPosition> {
        self.tokens
            .iter_mut()
            .find(|t| t.node_id == node_id && t.phase == phase)
    }

    fn take(&mut self, token: &TokenPosition) -> Result<(), String> {
        let pos = self
            .tokens
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| format!("token {token:?} is not present"))?;
        self.tokens.remove(pos);
        Ok(())
    }
}

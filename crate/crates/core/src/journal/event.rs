use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::TokenPosition;
use crate::invoker::FailureKind;
use crate::registry::{FunctionSpec, ServiceRegistration};
use crate::vars::VariableTree;
use crate::version::Version;

/// One journal record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionEvent {
    pub seq: u64,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl ExecutionEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    /// Canonical single-line form: sorted keys, no trailing newline.
    pub fn to_line(&self) -> String {
        let value = serde_json::to_value(self).expect("events always serialize");
        serde_json::to_string(&value).expect("values always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VarUpdate {
    pub path: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all_fields = "camelCase")]
pub enum EventBody {
    InstanceStarted {
        definition_id: String,
        definition_version: Version,
        start_node: String,
        variables: VariableTree,
        resolved_services: BTreeMap<String, Version>,
    },
    /// Tokens leave `consumed` and appear at `produced` in one transition.
    TokenMoved {
        node_id: String,
        consumed: Vec<TokenPosition>,
        produced: Vec<TokenPosition>,
    },
    TaskInvoked {
        node_id: String,
        service_id: String,
        version: Version,
        attempt: u32,
        request: Value,
    },
    TaskCompleted {
        node_id: String,
        attempts: u32,
        latency_ms: u64,
        response: Value,
        updates: Vec<VarUpdate>,
    },
    TaskFailed {
        node_id: String,
        attempts: u32,
        error: FailureKind,
        message: String,
    },
    RetryScheduled {
        node_id: String,
        attempt: u32,
        delay_ms: u64,
        error: FailureKind,
    },
    CircuitOpened {
        service_id: String,
        version: Version,
        reopen_at: u64,
    },
    CircuitClosed {
        service_id: String,
        version: Version,
    },
    InstanceCompleted {
        node_id: String,
        consumed: TokenPosition,
    },
    InstanceFaulted {
        node_id: String,
        error: String,
    },
    InstanceCancelled {},
    ServiceRegistered {
        registration: ServiceRegistration,
    },
    FunctionRegistered {
        function_ref: String,
        spec: FunctionSpec,
    },
    DeploymentRecorded {
        definition_id: String,
        version: Version,
        document: String,
    },
    WorkflowRetired {
        definition_id: String,
        version: Version,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    InstanceStarted,
    TokenMoved,
    TaskInvoked,
    TaskCompleted,
    TaskFailed,
    RetryScheduled,
    CircuitOpened,
    CircuitClosed,
    InstanceCompleted,
    InstanceFaulted,
    InstanceCancelled,
    ServiceRegistered,
    FunctionRegistered,
    DeploymentRecorded,
    WorkflowRetired,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Self::InstanceCompleted | Self::InstanceFaulted | Self::InstanceCancelled
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            Self::InstanceStarted { .. } => EventKind::InstanceStarted,
            Self::TokenMoved { .. } => EventKind::TokenMoved,
            Self::TaskInvoked { .. } => EventKind::TaskInvoked,
            Self::TaskCompleted { .. } => EventKind::TaskCompleted,
            Self::TaskFailed { .. } => EventKind::TaskFailed,
            Self::RetryScheduled { .. } => EventKind::RetryScheduled,
            Self::CircuitOpened { .. } => EventKind::CircuitOpened,
            Self::CircuitClosed { .. } => EventKind::CircuitClosed,
            Self::InstanceCompleted { .. } => EventKind::InstanceCompleted,
            Self::InstanceFaulted { .. } => EventKind::InstanceFaulted,
            Self::InstanceCancelled {} => EventKind::InstanceCancelled,
            Self::ServiceRegistered { .. } => EventKind::ServiceRegistered,
            Self::FunctionRegistered { .. } => EventKind::FunctionRegistered,
            Self::DeploymentRecorded { .. } => EventKind::DeploymentRecorded,
            Self::WorkflowRetired { .. } => EventKind::WorkflowRetired,
        }
    }

    /// Node the event concerns, when there is one.
    pub fn node_id(&self) -> Option<&str> {
        match self {
            Self::TokenMoved { node_id, .. }
            | Self::TaskInvoked { node_id, .. }
            | Self::TaskCompleted { node_id, .. }
            | Self::TaskFailed { node_id, .. }
            | Self::RetryScheduled { node_id, .. }
            | Self::InstanceCompleted { node_id, .. }
            | Self::InstanceFaulted { node_id, .. } => Some(node_id),
            _ => None,
        }
    }
}

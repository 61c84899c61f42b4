use std::collections::BTreeMap;

use thiserror::Error;

use super::instance::{ApplyError, ProcessInstance};
use crate::bpmn::ParseError;
use crate::invoker::CircuitState;
use crate::journal::{replay_bytes, EventBody, ExecutionEvent, JournalError};
use crate::registry::{RegistryState, ServiceKey};

/// Everything the journal says about the engine at its last record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recovered {
    pub registry: RegistryState,
    /// Every instance the journal knows, terminal ones included.
    pub instances: BTreeMap<String, ProcessInstance>,
    /// Breakers whose last journaled transition is known. A closed breaker
    /// restarts with zero consecutive failures.
    pub circuits: BTreeMap<ServiceKey, CircuitState>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecoveryError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("deployment at seq {seq} no longer parses: {source}")]
    Document { seq: u64, source: ParseError },
    #[error("seq {seq} refers to unknown instance {instance_id}")]
    UnknownInstance { seq: u64, instance_id: String },
    #[error(transparent)]
    Apply(#[from] ApplyError),
}

/// Folds a journal into engine state. Pure: equal inputs give equal output.
pub fn recover(events: &[ExecutionEvent]) -> Result<Recovered, RecoveryError> {
    let mut out = Recovered::default();
    for event in events {
        out.registry
            .apply(event)
            .map_err(|source| RecoveryError::Document {
                seq: event.seq,
                source,
            })?;
        match &event.body {
            EventBody::CircuitOpened {
                service_id,
                version,
                reopen_at,
            } => {
                out.circuits.insert(
                    ServiceKey {
                        service_id: service_id.clone(),
                        version: version.clone(),
                    },
                    CircuitState::Open {
                        reopen_at: *reopen_at,
                    },
                );
            }
            EventBody::CircuitClosed { service_id, version } => {
                out.circuits.insert(
                    ServiceKey {
                        service_id: service_id.clone(),
                        version: version.clone(),
                    },
                    CircuitState::default(),
                );
            }
            _ => {}
        }
        let Some(id) = &event.instance_id else { continue };
        if let EventBody::InstanceStarted { .. } = event.body {
            out.instances
                .insert(id.clone(), ProcessInstance::from_started(event)?);
            continue;
        }
        let instance = out
            .instances
            .get_mut(id)
            .ok_or_else(|| RecoveryError::UnknownInstance {
                seq: event.seq,
                instance_id: id.clone(),
            })?;
        instance.apply(event)?;
    }
    Ok(out)
}

pub fn recover_bytes(bytes: &[u8]) -> Result<Recovered, RecoveryError> {
    recover(&replay_bytes(bytes)?)
}

/// Rebuilds one instance from the events that carry its id.
pub fn replay_instance(events: &[ExecutionEvent], instance_id: &str) -> Result<Option<ProcessInstance>, RecoveryError> {
    let mut instance: Option<ProcessInstance> = None;
    for event in events.iter().filter(|e| e.instance_id.as_deref() == Some(instance_id)) {
        match &mut instance {
            None => instance = Some(ProcessInstance::from_started(event)?),
            Some(i) => i.apply(event)?,
        }
    }
    Ok(instance)
}

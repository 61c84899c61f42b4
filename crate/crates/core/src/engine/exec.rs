use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;
use tokio::sync::{watch, Notify};
use tokio::task::{JoinError, JoinSet};

use super::instance::{InstanceStatus, Phase, ProcessInstance, TokenPosition};
use super::{EngineError, Inner};
use crate::bpmn::{Mapping, Node, NodeKind, ProcessDefinition, ServiceTask};
use crate::invoker::{
    Abandoned, CallContext, FailureKind, InvocationObserver, InvocationResult, Transition,
};
use crate::journal::{EventBody, VarUpdate};
use crate::registry::ServiceKey;
use crate::vars::{lookup, VariableTree};
use crate::version::Version;

/// Live state of one instance. The state only changes through
/// `Inner::record`, which journals first and then applies the event.
pub(crate) struct InstanceHandle {
    pub(crate) state: Mutex<ProcessInstance>,
    pub(crate) driving: AtomicBool,
    pub(crate) wake: Notify,
    pub(crate) status: watch::Sender<InstanceStatus>,
}

impl InstanceHandle {
    pub(crate) fn new(instance: ProcessInstance) -> Self {
        let (status, _) = watch::channel(instance.status);
        Self {
            state: Mutex::new(instance),
            driving: AtomicBool::new(false),
            wake: Notify::new(),
            status,
        }
    }

    pub(crate) fn snapshot(&self) -> ProcessInstance {
        self.state.lock().unwrap().clone()
    }
}

impl Inner {
    /// Journals `bodies` and applies them, all under the instance lock.
    /// Nothing is written when the instance is no longer running or `guard`
    /// rejects the current state; that case returns `false`.
    pub(crate) fn record(
        &self,
        handle: &InstanceHandle,
        bodies: Vec<EventBody>,
        guard: impl FnOnce(&ProcessInstance) -> bool,
    ) -> Result<bool, EngineError> {
        let mut instance = handle.state.lock().unwrap();
        if instance.status.is_terminal() || !guard(&instance) {
            return Ok(false);
        }
        for body in bodies {
            let event = self.journal.append(Some(&instance.instance_id), body)?;
            instance.apply(&event)?;
        }
        handle.status.send_if_modified(|s| {
            let changed = *s != instance.status;
            *s = instance.status;
            changed
        });
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Progressed,
    /// Nothing can move until an in-flight service call finishes.
    AwaitingIo,
    Finished(InstanceStatus),
}

type CallOutcome = (String, Result<(), EngineError>);

/// Exclusive driver for one instance. Service calls run as tasks owned by
/// the driver; dropping it abandons them.
pub struct Execution {
    inner: Arc<Inner>,
    handle: Arc<InstanceHandle>,
    definition: Arc<ProcessDefinition>,
    calls: JoinSet<CallOutcome>,
    in_flight: HashMap<String, usize>,
}

impl Drop for Execution {
    fn drop(&mut self) {
        self.calls.abort_all();
        self.handle.driving.store(false, Ordering::SeqCst);
    }
}

impl Execution {
    pub(crate) fn new(inner: Arc<Inner>, handle: Arc<InstanceHandle>, definition: Arc<ProcessDefinition>) -> Self {
        Self {
            inner,
            handle,
            definition,
            calls: JoinSet::new(),
            in_flight: HashMap::new(),
        }
    }

    pub fn snapshot(&self) -> ProcessInstance {
        self.handle.snapshot()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.values().sum()
    }

    /// Performs at most one node-level transition.
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        while let Some(joined) = self.calls.try_join_next() {
            self.finish_call(joined)?;
        }
        let instance = self.handle.snapshot();
        if instance.status.is_terminal() {
            self.calls.abort_all();
            return Ok(StepOutcome::Finished(instance.status));
        }
        let mut previous: Option<&TokenPosition> = None;
        for token in &instance.tokens {
            if previous == Some(token) {
                continue;
            }
            previous = Some(token);
            if let Some(outcome) = self.advance(&instance, token)? {
                return Ok(outcome);
            }
        }
        if self.in_flight() > 0 {
            return Ok(StepOutcome::AwaitingIo);
        }
        let node_id = instance
            .tokens
            .first()
            .map(|t| t.node_id.clone())
            .unwrap_or_default();
        self.fault(node_id, "no token can advance".into())
    }

    /// Waits for one in-flight call to finish, or for the instance to be
    /// cancelled.
    pub async fn wait_io(&mut self) -> Result<(), EngineError> {
        if self.calls.is_empty() {
            return Ok(());
        }
        tokio::select! {
            joined = self.calls.join_next() => match joined {
                Some(joined) => self.finish_call(joined),
                None => Ok(()),
            },
            _ = self.handle.wake.notified() => Ok(()),
        }
    }

    /// Steps until the instance reaches a terminal status.
    pub async fn run(&mut self) -> Result<ProcessInstance, EngineError> {
        loop {
            match self.step()? {
                StepOutcome::Progressed => {}
                StepOutcome::AwaitingIo => self.wait_io().await?,
                StepOutcome::Finished(_) => return Ok(self.snapshot()),
            }
        }
    }

    fn finish_call(&mut self, joined: Result<CallOutcome, JoinError>) -> Result<(), EngineError> {
        match joined {
            Ok((node_id, outcome)) => {
                if let Some(n) = self.in_flight.get_mut(&node_id) {
                    *n -= 1;
                }
                outcome
            }
            Err(e) if e.is_panic() => std::panic::resume_unwind(e.into_panic()),
            Err(_) => Ok(()),
        }
    }

    fn advance(&mut self, instance: &ProcessInstance, token: &TokenPosition) -> Result<Option<StepOutcome>, EngineError> {
        let definition = Arc::clone(&self.definition);
        let node = definition
            .node(&token.node_id)
            .ok_or_else(|| EngineError::Inconsistent(format!("token on unknown node `{}`", token.node_id)))?;
        match (&node.kind, token.phase) {
            (NodeKind::ServiceTask(_), Phase::Departing) => self.forward(node, token),
            (NodeKind::ServiceTask(task), _) => {
                let waiting = instance
                    .tokens_at(&node.id)
                    .filter(|t| t.phase != Phase::Departing)
                    .count();
                if waiting > self.in_flight.get(&node.id).copied().unwrap_or(0) {
                    self.launch(instance, node, task).map(Some)
                } else {
                    Ok(None)
                }
            }
            (_, phase) if phase != Phase::Arrived => Ok(None),
            (NodeKind::StartEvent, _) => self.forward(node, token),
            (NodeKind::EndEvent, _) if instance.tokens.len() == 1 => {
                let body = EventBody::InstanceCompleted {
                    node_id: node.id.clone(),
                    consumed: token.clone(),
                };
                self.commit(body, token)
            }
            (NodeKind::EndEvent, _) => {
                let body = EventBody::TokenMoved {
                    node_id: node.id.clone(),
                    consumed: vec![token.clone()],
                    produced: vec![],
                };
                self.commit(body, token)
            }
            (NodeKind::ExclusiveGateway { default_flow }, _) if definition.is_diverging(&node.id) => {
                let mut chosen = None;
                for flow in definition.outgoing(&node.id) {
                    if default_flow.as_deref() == Some(flow.id.as_str()) {
                        continue;
                    }
                    let Some(condition) = &flow.condition else { continue };
                    match condition.eval(&instance.variables) {
                        Ok(true) => {
                            chosen = Some(flow);
                            break;
                        }
                        Ok(false) => {}
                        Err(e) => {
                            return self
                                .fault(node.id.clone(), format!("condition on flow `{}`: {e}", flow.id))
                                .map(Some)
                        }
                    }
                }
                let chosen = chosen.or_else(|| default_flow.as_deref().and_then(|id| definition.flow(id)));
                match chosen {
                    Some(flow) => {
                        let body = EventBody::TokenMoved {
                            node_id: node.id.clone(),
                            consumed: vec![token.clone()],
                            produced: vec![TokenPosition::arrived(flow.target.clone(), Some(flow.id.clone()))],
                        };
                        self.commit(body, token)
                    }
                    None => self
                        .fault(
                            node.id.clone(),
                            format!("BAD_CONDITION: no outgoing flow of `{}` can be taken", node.id),
                        )
                        .map(Some),
                }
            }
            (NodeKind::ParallelGateway, _) if definition.is_diverging(&node.id) => {
                let produced = definition
                    .outgoing(&node.id)
                    .map(|f| TokenPosition::arrived(f.target.clone(), Some(f.id.clone())))
                    .collect();
                let body = EventBody::TokenMoved {
                    node_id: node.id.clone(),
                    consumed: vec![token.clone()],
                    produced,
                };
                self.commit(body, token)
            }
            (NodeKind::ParallelGateway, _) => {
                let mut consumed = Vec::new();
                for flow in definition.incoming(&node.id) {
                    let arrived = instance.tokens.iter().find(|t| {
                        t.node_id == node.id && t.phase == Phase::Arrived && t.via.as_deref() == Some(flow.id.as_str())
                    });
                    match arrived {
                        Some(t) => consumed.push(t.clone()),
                        None => return Ok(None),
                    }
                }
                let Some(out) = definition.outgoing(&node.id).next() else {
                    return Ok(None);
                };
                let body = EventBody::TokenMoved {
                    node_id: node.id.clone(),
                    consumed: consumed.clone(),
                    produced: vec![TokenPosition::arrived(out.target.clone(), Some(out.id.clone()))],
                };
                self.commit_all(body, consumed)
            }
            (NodeKind::ExclusiveGateway { .. }, _) => self.forward(node, token),
        }
    }

    /// Moves a token along the node's single outgoing flow.
    fn forward(&mut self, node: &Node, token: &TokenPosition) -> Result<Option<StepOutcome>, EngineError> {
        let Some(flow) = self.definition.outgoing(&node.id).next() else {
            return Ok(None);
        };
        let body = EventBody::TokenMoved {
            node_id: node.id.clone(),
            consumed: vec![token.clone()],
            produced: vec![TokenPosition::arrived(flow.target.clone(), Some(flow.id.clone()))],
        };
        self.commit(body, token)
    }

    fn commit(&mut self, body: EventBody, token: &TokenPosition) -> Result<Option<StepOutcome>, EngineError> {
        self.commit_all(body, vec![token.clone()])
    }

    fn commit_all(&mut self, body: EventBody, consumed: Vec<TokenPosition>) -> Result<Option<StepOutcome>, EngineError> {
        let completes = matches!(body, EventBody::InstanceCompleted { .. });
        let applied = self.inner.record(&self.handle, vec![body], |i| {
            let mut remaining = i.tokens.clone();
            consumed.iter().all(|t| match remaining.iter().position(|r| r == t) {
                Some(pos) => {
                    remaining.remove(pos);
                    true
                }
                None => false,
            })
        })?;
        Ok(Some(if applied && completes {
            StepOutcome::Finished(InstanceStatus::Completed)
        } else {
            StepOutcome::Progressed
        }))
    }

    fn fault(&mut self, node_id: String, error: String) -> Result<StepOutcome, EngineError> {
        self.inner
            .record(&self.handle, vec![EventBody::InstanceFaulted { node_id, error }], |_| true)?;
        self.calls.abort_all();
        Ok(StepOutcome::Finished(self.handle.snapshot().status))
    }

    fn launch(&mut self, instance: &ProcessInstance, node: &Node, task: &ServiceTask) -> Result<StepOutcome, EngineError> {
        let service_id = &task.service.service_id;
        let Some(version) = instance.resolved_services.get(service_id).cloned() else {
            return self.fault(node.id.clone(), format!("service `{service_id}` was not pinned at start"));
        };
        let Some(registration) = self.inner.registry.read(|s| s.service(service_id, &version).cloned()) else {
            return self.fault(node.id.clone(), format!("service {service_id}@{version} is not registered"));
        };
        let Some(policy) = self.inner.policies.get(task.policy.as_deref()).cloned() else {
            return self.fault(
                node.id.clone(),
                format!("unknown policy `{}`", task.policy.as_deref().unwrap_or_default()),
            );
        };
        let request = build_request(&instance.variables, &task.input);
        let output = task.output.clone();
        *self.in_flight.entry(node.id.clone()).or_default() += 1;

        let inner = Arc::clone(&self.inner);
        let handle = Arc::clone(&self.handle);
        let node_id = node.id.clone();
        let context = CallContext {
            instance_id: instance.instance_id.clone(),
            node_id: node_id.clone(),
        };
        self.calls.spawn(async move {
            let observer = TaskObserver {
                inner: Arc::clone(&inner),
                handle: Arc::clone(&handle),
                node_id: node_id.clone(),
                service_id: registration.service_id.clone(),
                version: registration.version.clone(),
                request: request.clone(),
                error: Mutex::new(None),
            };
            let result = inner
                .invoker
                .invoke(&registration, &request, &policy, &context, &observer)
                .await;
            let outcome = match result {
                Err(Abandoned) => observer.error.lock().unwrap().take().map_or(Ok(()), Err),
                Ok(InvocationResult::Success {
                    response,
                    attempts,
                    total_latency_ms,
                }) => {
                    let updates = output_updates(&node_id, &output, &response);
                    let body = EventBody::TaskCompleted {
                        node_id: node_id.clone(),
                        attempts,
                        latency_ms: total_latency_ms,
                        response,
                        updates,
                    };
                    inner
                        .record(&handle, vec![body], |i| {
                            i.tokens_at(&node_id).any(|t| t.phase == Phase::AwaitingService)
                        })
                        .map(drop)
                }
                Ok(InvocationResult::Failure {
                    kind,
                    attempts,
                    message,
                }) => {
                    let error = format!("{kind} after {attempts} attempt(s): {message}");
                    let bodies = vec![
                        EventBody::TaskFailed {
                            node_id: node_id.clone(),
                            attempts,
                            error: kind,
                            message,
                        },
                        EventBody::InstanceFaulted {
                            node_id: node_id.clone(),
                            error,
                        },
                    ];
                    inner.record(&handle, bodies, |_| true).map(drop)
                }
            };
            handle.wake.notify_one();
            (node_id, outcome)
        });
        Ok(StepOutcome::Progressed)
    }
}

/// Empty mapping sends the whole tree; otherwise each `from` variable path
/// is copied to its `to` request path. Missing variables map to null.
pub(crate) fn build_request(vars: &VariableTree, input: &[Mapping]) -> Value {
    if input.is_empty() {
        return vars.clone().into_value();
    }
    let mut request = VariableTree::new();
    for m in input {
        let value = vars.get_path(&m.from).cloned().unwrap_or(Value::Null);
        request.set_path(&m.to, value);
    }
    request.into_value()
}

/// Empty mapping stores the whole response under the task id; otherwise
/// each `from` response path is written to its `to` variable path.
pub(crate) fn output_updates(node_id: &str, output: &[Mapping], response: &Value) -> Vec<VarUpdate> {
    if output.is_empty() {
        return vec![VarUpdate {
            path: node_id.to_string(),
            value: response.clone(),
        }];
    }
    output
        .iter()
        .map(|m| VarUpdate {
            path: m.to.clone(),
            value: lookup(response, &m.from).cloned().unwrap_or(Value::Null),
        })
        .collect()
}

struct TaskObserver {
    inner: Arc<Inner>,
    handle: Arc<InstanceHandle>,
    node_id: String,
    service_id: String,
    version: Version,
    request: Value,
    error: Mutex<Option<EngineError>>,
}

impl TaskObserver {
    fn outcome(&self, recorded: Result<bool, EngineError>) -> Result<(), Abandoned> {
        match recorded {
            Ok(true) => Ok(()),
            Ok(false) => Err(Abandoned),
            Err(e) => {
                *self.error.lock().unwrap() = Some(e);
                Err(Abandoned)
            }
        }
    }
}

impl InvocationObserver for TaskObserver {
    fn attempt_started(&self, attempt: u32) -> Result<(), Abandoned> {
        let body = EventBody::TaskInvoked {
            node_id: self.node_id.clone(),
            service_id: self.service_id.clone(),
            version: self.version.clone(),
            attempt,
            request: self.request.clone(),
        };
        let recorded = self.inner.record(&self.handle, vec![body], |i| {
            i.tokens_at(&self.node_id).any(|t| t.phase != Phase::Departing)
        });
        self.outcome(recorded)
    }

    fn retry_scheduled(&self, attempt: u32, delay: Duration, kind: &FailureKind) -> Result<(), Abandoned> {
        let body = EventBody::RetryScheduled {
            node_id: self.node_id.clone(),
            attempt,
            delay_ms: delay.as_millis() as u64,
            error: kind.clone(),
        };
        let recorded = self.inner.record(&self.handle, vec![body], |_| true);
        self.outcome(recorded)
    }

    fn circuit_changed(&self, key: &ServiceKey, transition: Transition) {
        self.inner.journal_circuit(key, transition);
    }
}

//! Service calls under a timeout, retry and circuit-breaker policy.
//!
//! 2xx answers succeed. 4xx answers fail at once. 5xx answers, timeouts and
//! transport errors are retried with exponential backoff until the policy's
//! attempt budget is spent. Every attempt feeds the target's breaker; while
//! a breaker is open no request reaches the target.

mod breaker;
mod policy;
mod transport;

use std::collections::BTreeMap;
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::AsyncWriteExt;

use crate::clock::Clock;
use crate::registry::{FunctionSpec, Registry, ServiceKey, ServiceRegistration, Target};

pub use breaker::{Breakers, CircuitBreaker, CircuitState, Transition};
pub use policy::{Backoff, BreakerConfig, InvocationPolicy, PolicySet, DEFAULT_POLICY};
pub use transport::{
    HttpReply, HttpRequest, HttpTransport, Transport, TransportError, INSTANCE_HEADER, TASK_HEADER,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum FailureKind {
    Timeout,
    TransportError,
    RemoteError { status_code: u16 },
    CircuitOpen,
    FunctionError,
}

impl FailureKind {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Timeout | Self::TransportError => true,
            Self::RemoteError { status_code } => *status_code >= 500,
            Self::CircuitOpen | Self::FunctionError => false,
        }
    }
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::RemoteError { status_code } => write!(f, "RemoteError({status_code})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvocationResult {
    Success {
        response: Value,
        attempts: u32,
        total_latency_ms: u64,
    },
    Failure {
        kind: FailureKind,
        attempts: u32,
        message: String,
    },
}

impl InvocationResult {
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Success { attempts, .. } | Self::Failure { attempts, .. } => *attempts,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Self::Success { .. })
    }
}

/// The observer asked the invoker to stop (its instance is gone).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Abandoned;

/// Hooks through which the engine journals each attempt. `attempt_started`
/// runs before the request leaves; returning `Abandoned` stops the call.
pub trait InvocationObserver: Send + Sync {
    fn attempt_started(&self, attempt: u32) -> Result<(), Abandoned>;
    fn retry_scheduled(&self, attempt: u32, delay: Duration, kind: &FailureKind) -> Result<(), Abandoned>;
    fn circuit_changed(&self, key: &ServiceKey, transition: Transition);
}

/// Observer that records nothing.
pub struct NoopObserver;

impl InvocationObserver for NoopObserver {
    fn attempt_started(&self, _: u32) -> Result<(), Abandoned> {
        Ok(())
    }
    fn retry_scheduled(&self, _: u32, _: Duration, _: &FailureKind) -> Result<(), Abandoned> {
        Ok(())
    }
    fn circuit_changed(&self, _: &ServiceKey, _: Transition) {}
}

/// Tracing labels sent with remote calls.
#[derive(Debug, Clone, Default)]
pub struct CallContext {
    pub instance_id: String,
    pub node_id: String,
}

struct AttemptFailure {
    kind: FailureKind,
    message: String,
}

pub struct Invoker {
    transport: Arc<dyn Transport>,
    registry: Arc<Registry>,
    clock: Arc<dyn Clock>,
    breakers: Breakers,
}

impl Invoker {
    pub fn new(transport: Arc<dyn Transport>, registry: Arc<Registry>, clock: Arc<dyn Clock>) -> Self {
        Self {
            transport,
            registry,
            clock,
            breakers: Breakers::default(),
        }
    }

    pub fn breakers(&self) -> &Breakers {
        &self.breakers
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Breaker state for each given service, `Closed{0}` for those never
    /// called.
    pub fn breaker_snapshot<'a>(
        &self,
        keys: impl IntoIterator<Item = &'a ServiceKey>,
    ) -> BTreeMap<ServiceKey, CircuitState> {
        let live = self.breakers.snapshot();
        keys.into_iter()
            .map(|k| (k.clone(), live.get(k).copied().unwrap_or_default()))
            .collect()
    }

    pub async fn invoke(
        &self,
        target: &ServiceRegistration,
        request: &Value,
        policy: &InvocationPolicy,
        context: &CallContext,
        observer: &dyn InvocationObserver,
    ) -> Result<InvocationResult, Abandoned> {
        let key = target.key();
        let started = self.clock.now_ms();
        let mut attempts = 0;
        let mut last: Option<AttemptFailure> = None;
        loop {
            if !self.breakers.admit(&key, &policy.breaker, self.clock.now_ms()) {
                return Ok(match last {
                    None => InvocationResult::Failure {
                        kind: FailureKind::CircuitOpen,
                        attempts: 0,
                        message: format!("circuit for {key} is open"),
                    },
                    // Tripped by our own earlier attempts.
                    Some(f) => InvocationResult::Failure {
                        kind: f.kind,
                        attempts,
                        message: format!("{}; circuit for {key} opened", f.message),
                    },
                });
            }
            let attempt = attempts + 1;
            if observer.attempt_started(attempt).is_err() {
                self.breakers.release(&key, &policy.breaker);
                return Err(Abandoned);
            }
            attempts = attempt;

            let outcome = self.attempt_once(target, request, policy, context).await;
            // 4xx means the service answered; it says nothing about health.
            let healthy = match &outcome {
                Ok(_) => true,
                Err(f) => matches!(f.kind, FailureKind::RemoteError { status_code } if status_code < 500),
            };
            self.breakers
                .record_with(&key, &policy.breaker, self.clock.now_ms(), healthy, |t| {
                    observer.circuit_changed(&key, t)
                });

            match outcome {
                Ok(response) => {
                    return Ok(InvocationResult::Success {
                        response,
                        attempts,
                        total_latency_ms: self.clock.now_ms().saturating_sub(started),
                    })
                }
                Err(failure) => {
                    if !failure.kind.is_retryable() || attempts >= policy.max_attempts {
                        return Ok(InvocationResult::Failure {
                            kind: failure.kind,
                            attempts,
                            message: failure.message,
                        });
                    }
                    let delay = policy.backoff_delay(attempts);
                    if observer.retry_scheduled(attempts, delay, &failure.kind).is_err() {
                        return Err(Abandoned);
                    }
                    last = Some(failure);
                    self.clock.sleep(delay).await;
                }
            }
        }
    }

    async fn attempt_once(
        &self,
        target: &ServiceRegistration,
        request: &Value,
        policy: &InvocationPolicy,
        context: &CallContext,
    ) -> Result<Value, AttemptFailure> {
        let start = self.clock.now_ms();
        let call = self.dispatch(target, request, context);
        let outcome = tokio::select! {
            biased;
            outcome = call => Some(outcome),
            _ = self.clock.sleep(policy.timeout()) => None,
        };
        let elapsed = self.clock.now_ms().saturating_sub(start);
        match outcome {
            Some(result) if elapsed <= policy.timeout_ms => result,
            _ => Err(AttemptFailure {
                kind: FailureKind::Timeout,
                message: format!("no answer within {} ms", policy.timeout_ms),
            }),
        }
    }

    async fn dispatch(
        &self,
        target: &ServiceRegistration,
        request: &Value,
        context: &CallContext,
    ) -> Result<Value, AttemptFailure> {
        match &target.target {
            Target::Remote { .. } => {
                let url = target.target.url().expect("remote targets have a URL");
                let reply = self
                    .transport
                    .post(HttpRequest {
                        url,
                        headers: vec![
                            (INSTANCE_HEADER.to_string(), context.instance_id.clone()),
                            (TASK_HEADER.to_string(), context.node_id.clone()),
                        ],
                        body: canonical_bytes(request),
                    })
                    .await
                    .map_err(|e| AttemptFailure {
                        kind: FailureKind::TransportError,
                        message: e.0,
                    })?;
                if !(200..300).contains(&reply.status) {
                    return Err(AttemptFailure {
                        kind: FailureKind::RemoteError {
                            status_code: reply.status,
                        },
                        message: format!(
                            "status {}: {}",
                            reply.status,
                            String::from_utf8_lossy(&reply.body).chars().take(200).collect::<String>()
                        ),
                    });
                }
                if reply.body.iter().all(u8::is_ascii_whitespace) {
                    return Ok(Value::Object(Default::default()));
                }
                serde_json::from_slice(&reply.body).map_err(|e| AttemptFailure {
                    kind: FailureKind::TransportError,
                    message: format!("response is not JSON: {e}"),
                })
            }
            Target::LocalFunction { function_ref } => {
                let spec = self.registry.function(function_ref).ok_or_else(|| AttemptFailure {
                    kind: FailureKind::FunctionError,
                    message: format!("function `{function_ref}` is not registered"),
                })?;
                run_function(&spec, request).await
            }
        }
    }
}

fn canonical_bytes(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("JSON values serialize")
}

async fn run_function(spec: &FunctionSpec, request: &Value) -> Result<Value, AttemptFailure> {
    let function_error = |message: String| AttemptFailure {
        kind: FailureKind::FunctionError,
        message,
    };
    match spec {
        FunctionSpec::Table { .. } => spec
            .apply_table(request)
            .map(|tree| tree.into_value())
            .map_err(|e| function_error(e.to_string())),
        FunctionSpec::Command { program, args } => {
            let mut child = tokio::process::Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .kill_on_drop(true)
                .spawn()
                .map_err(|e| function_error(format!("cannot start `{program}`: {e}")))?;
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin
                .write_all(&canonical_bytes(request))
                .await
                .map_err(|e| function_error(e.to_string()))?;
            drop(stdin);
            let output = child
                .wait_with_output()
                .await
                .map_err(|e| function_error(e.to_string()))?;
            if !output.status.success() {
                return Err(function_error(format!(
                    "`{program}` exited with {}: {}",
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                )));
            }
            serde_json::from_slice(&output.stdout)
                .map_err(|e| function_error(format!("`{program}` printed invalid JSON: {e}")))
        }
    }
}

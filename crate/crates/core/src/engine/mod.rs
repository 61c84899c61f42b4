//! Token-based execution of deployed process definitions.
//!
//! Instance state is never assigned directly. Every transition is appended
//! to the journal and then folded into the live instance with
//! [`ProcessInstance::apply`], the same function recovery uses, so a live
//! instance always equals the replay of its journal.

mod exec;
mod instance;
mod recover;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;
use tokio::task::AbortHandle;

use crate::bpmn::{validate, Diagnostic, Severity};
use crate::clock::{Clock, SystemClock};
use crate::invoker::{CircuitState, HttpTransport, InvocationPolicy, Invoker, PolicySet, Transition, Transport};
use crate::journal::{EventBody, Journal, JournalError};
use crate::registry::{
    DeployError, DeploymentState, FunctionSpec, Health, Registry, RegistryError, ServiceKey, ServiceRegistration,
    WorkflowDeployment,
};
use crate::vars::VariableTree;
use crate::version::{Version, VersionRequirement};

use exec::InstanceHandle;
pub use exec::{Execution, StepOutcome};
pub use instance::{ApplyError, FaultDetail, InstanceStatus, Phase, ProcessInstance, TokenPosition};
pub use recover::{recover, recover_bytes, replay_instance, Recovered, RecoveryError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("instance {0} not found")]
    UnknownInstance(String),
    #[error("instance {0} already has a driver")]
    AlreadyDriven(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error("internal state mismatch: {0}")]
    Inconsistent(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}

impl From<ApplyError> for EngineError {
    fn from(e: ApplyError) -> Self {
        Self::Inconsistent(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StartError {
    #[error("workflow {0} not found")]
    WorkflowNotFound(String),
    #[error("workflow {0} is retired")]
    WorkflowRetired(String),
    #[error("definition has error diagnostics")]
    DefinitionHasErrors(Vec<Diagnostic>),
    #[error("no registered version of `{service_id}` satisfies {requirement}")]
    UnresolvableService { service_id: String, requirement: String },
    #[error("task `{node_id}` names unknown policy `{policy}`")]
    UnknownPolicy { node_id: String, policy: String },
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CancelError {
    #[error("instance {0} not found")]
    NotFound(String),
    #[error("instance {0} is not running")]
    NotRunning(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

pub(crate) struct Inner {
    pub(crate) journal: Arc<Journal>,
    pub(crate) registry: Arc<Registry>,
    pub(crate) invoker: Invoker,
    pub(crate) policies: PolicySet,
    clock: Arc<dyn Clock>,
    instances: RwLock<BTreeMap<String, Arc<InstanceHandle>>>,
    drivers: Mutex<HashMap<String, AbortHandle>>,
}

impl Inner {
    pub(crate) fn journal_circuit(&self, key: &ServiceKey, transition: Transition) {
        let body = match transition {
            Transition::Opened { reopen_at } => EventBody::CircuitOpened {
                service_id: key.service_id.clone(),
                version: key.version.clone(),
                reopen_at,
            },
            Transition::Closed => EventBody::CircuitClosed {
                service_id: key.service_id.clone(),
                version: key.version.clone(),
            },
        };
        if let Err(e) = self.journal.append(None, body) {
            tracing::error!(%key, error = %e, "cannot journal breaker transition");
        }
    }
}

pub struct EngineBuilder {
    journal: Option<Arc<Journal>>,
    clock: Option<Arc<dyn Clock>>,
    transport: Option<Arc<dyn Transport>>,
    policies: PolicySet,
}

impl EngineBuilder {
    /// Journal to write to. Its existing records are recovered on build.
    pub fn journal(mut self, journal: Arc<Journal>) -> Self {
        self.journal = Some(journal);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn policy(mut self, policy: InvocationPolicy) -> Result<Self, EngineError> {
        self.policies.insert(policy).map_err(EngineError::Policy)?;
        Ok(self)
    }

    pub fn policies(mut self, policies: PolicySet) -> Self {
        self.policies = policies;
        self
    }

    /// Recovers registry, instances and breakers from the journal. Running
    /// instances stay parked until [`Engine::resume`].
    pub fn build(self) -> Result<Engine, EngineError> {
        let clock = self.clock.unwrap_or_else(|| Arc::new(SystemClock));
        let journal = self
            .journal
            .unwrap_or_else(|| Arc::new(Journal::in_memory(Arc::clone(&clock))));
        let recovered = recover(&journal.events())?;
        let registry = Arc::new(Registry::with_state(Arc::clone(&journal), recovered.registry));
        let transport = self.transport.unwrap_or_else(|| Arc::new(HttpTransport::new()));
        let invoker = Invoker::new(transport, Arc::clone(&registry), Arc::clone(&clock));
        for (key, state) in recovered.circuits {
            invoker.breakers().restore(key, state);
        }
        let instances = recovered
            .instances
            .into_iter()
            .map(|(id, i)| (id, Arc::new(InstanceHandle::new(i))))
            .collect();
        Ok(Engine {
            inner: Arc::new(Inner {
                journal,
                registry,
                invoker,
                policies: self.policies,
                clock,
                instances: RwLock::new(instances),
                drivers: Mutex::new(HashMap::new()),
            }),
        })
    }
}

/// The orchestrator: registry, invoker, journal and all instances.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

impl Engine {
    pub fn builder() -> EngineBuilder {
        EngineBuilder {
            journal: None,
            clock: None,
            transport: None,
            policies: PolicySet::default(),
        }
    }

    pub fn journal(&self) -> &Arc<Journal> {
        &self.inner.journal
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.inner.registry
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn policies(&self) -> &PolicySet {
        &self.inner.policies
    }

    pub fn register_service(&self, reg: ServiceRegistration) -> Result<ServiceRegistration, RegistryError> {
        self.inner.registry.register_service(reg)
    }

    pub fn register_function(&self, function_ref: &str, spec: FunctionSpec) -> Result<(), RegistryError> {
        self.inner.registry.register_function(function_ref, spec)
    }

    pub fn deploy_workflow(&self, document: &[u8], version: Version) -> Result<WorkflowDeployment, DeployError> {
        self.inner.registry.deploy_workflow(document, version)
    }

    pub fn retire_workflow(&self, definition_id: &str, version: &Version) -> Result<WorkflowDeployment, RegistryError> {
        self.inner.registry.retire_workflow(definition_id, version)
    }

    pub fn list_workflows(&self) -> Vec<WorkflowDeployment> {
        self.inner.registry.list_workflows()
    }

    /// Registrations with health derived from breaker state: Unhealthy
    /// while Open, Healthy once Closed after traffic, Unknown otherwise.
    pub fn list_services(&self) -> Vec<ServiceRegistration> {
        let breakers = self.inner.invoker.breakers().snapshot();
        let mut services = self.inner.registry.list_services();
        for s in &mut services {
            s.health = match breakers.get(&s.key()) {
                Some(CircuitState::Open { .. }) => Health::Unhealthy,
                Some(CircuitState::Closed { .. }) => Health::Healthy,
                _ => Health::Unknown,
            };
        }
        services
    }

    /// Breaker state of every registered service version.
    pub fn breaker_snapshot(&self) -> BTreeMap<ServiceKey, CircuitState> {
        let keys: Vec<ServiceKey> = self
            .inner
            .registry
            .list_services()
            .iter()
            .map(ServiceRegistration::key)
            .collect();
        self.inner.invoker.breaker_snapshot(&keys)
    }

    /// Creates an instance with one token at the start event and every
    /// service version pinned, journaling `InstanceStarted` before
    /// returning. Without `version` the highest Active deployment is used.
    pub fn start_instance(
        &self,
        definition_id: &str,
        version: Option<&Version>,
        variables: VariableTree,
    ) -> Result<ProcessInstance, StartError> {
        let deployment = self.deployment_for(definition_id, version)?;
        let definition = &deployment.definition;
        let errors: Vec<Diagnostic> = validate(definition, None)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if !errors.is_empty() {
            return Err(StartError::DefinitionHasErrors(errors));
        }
        for (node, task) in definition.service_tasks() {
            if self.inner.policies.get(task.policy.as_deref()).is_none() {
                return Err(StartError::UnknownPolicy {
                    node_id: node.id.clone(),
                    policy: task.policy.clone().unwrap_or_default(),
                });
            }
        }
        let mut wanted: BTreeMap<String, Vec<VersionRequirement>> = BTreeMap::new();
        for (_, task) in definition.service_tasks() {
            wanted
                .entry(task.service.service_id.clone())
                .or_default()
                .push(task.service.requirement.clone());
        }

        let mut instances = self.inner.instances.write().unwrap();
        let resolved_services = self.inner.registry.read(|state| {
            wanted
                .iter()
                .map(|(service_id, reqs)| {
                    state
                        .versions_of(service_id)
                        .into_iter()
                        .filter(|v| reqs.iter().all(|r| r.matches(v)))
                        .max()
                        .map(|v| (service_id.clone(), v))
                        .ok_or_else(|| StartError::UnresolvableService {
                            service_id: service_id.clone(),
                            requirement: reqs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" & "),
                        })
                })
                .collect::<Result<BTreeMap<_, _>, _>>()
        })?;
        let instance_id = uuid::Uuid::new_v4().to_string();
        let event = self.inner.journal.append(
            Some(&instance_id),
            EventBody::InstanceStarted {
                definition_id: deployment.definition_id.clone(),
                definition_version: deployment.version.clone(),
                start_node: definition.start_node().id.clone(),
                variables,
                resolved_services,
            },
        )?;
        let instance = ProcessInstance::from_started(&event).expect("event was built as InstanceStarted");
        instances.insert(instance_id, Arc::new(InstanceHandle::new(instance.clone())));
        Ok(instance)
    }

    fn deployment_for(&self, definition_id: &str, version: Option<&Version>) -> Result<WorkflowDeployment, StartError> {
        let label = match version {
            Some(v) => format!("{definition_id}@{v}"),
            None => definition_id.to_string(),
        };
        let registry = &self.inner.registry;
        match registry.workflow(definition_id, version) {
            Some(d) if d.state == DeploymentState::Retired => Err(StartError::WorkflowRetired(label)),
            Some(d) => Ok(d),
            None => {
                let any = registry
                    .list_workflows()
                    .into_iter()
                    .any(|w| w.definition_id == definition_id);
                if version.is_none() && any {
                    Err(StartError::WorkflowRetired(label))
                } else {
                    Err(StartError::WorkflowNotFound(label))
                }
            }
        }
    }

    /// Takes exclusive control of an instance for stepping.
    pub fn execution(&self, instance_id: &str) -> Result<Execution, EngineError> {
        let handle = self.handle(instance_id)?;
        if handle.driving.swap(true, Ordering::SeqCst) {
            return Err(EngineError::AlreadyDriven(instance_id.to_string()));
        }
        let (definition_id, version) = {
            let i = handle.state.lock().unwrap();
            (i.definition_id.clone(), i.definition_version.clone())
        };
        let Some(deployment) = self.inner.registry.workflow(&definition_id, Some(&version)) else {
            handle.driving.store(false, Ordering::SeqCst);
            return Err(EngineError::Inconsistent(format!(
                "instance {instance_id} refers to missing workflow {definition_id}@{version}"
            )));
        };
        Ok(Execution::new(Arc::clone(&self.inner), handle, deployment.definition))
    }

    pub async fn run_to_completion(&self, instance_id: &str) -> Result<ProcessInstance, EngineError> {
        self.execution(instance_id)?.run().await
    }

    /// Drives an instance on a background task.
    pub fn spawn(&self, instance_id: &str) -> Result<(), EngineError> {
        let mut execution = self.execution(instance_id)?;
        let id = instance_id.to_string();
        let task = tokio::spawn(async move {
            if let Err(e) = execution.run().await {
                tracing::error!(instance = %id, error = %e, "instance driver stopped");
            }
        });
        let mut drivers = self.inner.drivers.lock().unwrap();
        drivers.retain(|_, h| !h.is_finished());
        drivers.insert(instance_id.to_string(), task.abort_handle());
        Ok(())
    }

    /// Starts an instance and drives it in the background.
    pub fn launch(
        &self,
        definition_id: &str,
        version: Option<&Version>,
        variables: VariableTree,
    ) -> Result<ProcessInstance, StartError> {
        let instance = self.start_instance(definition_id, version, variables)?;
        self.spawn(&instance.instance_id)
            .expect("a fresh instance has no driver");
        Ok(instance)
    }

    /// Spawns drivers for every Running instance without one, typically
    /// after recovery. Returns their ids.
    pub fn resume(&self) -> Vec<String> {
        let running: Vec<String> = self
            .list_instances()
            .into_iter()
            .filter(|i| i.status == InstanceStatus::Running)
            .map(|i| i.instance_id)
            .collect();
        running
            .into_iter()
            .filter(|id| self.spawn(id).is_ok())
            .collect()
    }

    pub fn cancel_instance(&self, instance_id: &str) -> Result<ProcessInstance, CancelError> {
        let handle = self
            .handle(instance_id)
            .map_err(|_| CancelError::NotFound(instance_id.to_string()))?;
        let applied = self
            .inner
            .record(&handle, vec![EventBody::InstanceCancelled {}], |_| true)
            .map_err(|e| match e {
                EngineError::Journal(j) => CancelError::Journal(j),
                other => CancelError::Journal(JournalError::IoFailure(other.to_string())),
            })?;
        if !applied {
            return Err(CancelError::NotRunning(instance_id.to_string()));
        }
        handle.wake.notify_one();
        Ok(handle.snapshot())
    }

    pub fn instance(&self, instance_id: &str) -> Option<ProcessInstance> {
        self.handle(instance_id).ok().map(|h| h.snapshot())
    }

    pub fn list_instances(&self) -> Vec<ProcessInstance> {
        self.inner
            .instances
            .read()
            .unwrap()
            .values()
            .map(|h| h.snapshot())
            .collect()
    }

    /// Resolves once the instance is no longer Running.
    pub async fn wait_terminal(&self, instance_id: &str) -> Result<ProcessInstance, EngineError> {
        let handle = self.handle(instance_id)?;
        let mut status = handle.status.subscribe();
        status
            .wait_for(|s| s.is_terminal())
            .await
            .map_err(|_| EngineError::Inconsistent("status channel closed".into()))?;
        Ok(handle.snapshot())
    }

    /// Stops the engine as abruptly as a crash: the journal takes no more
    /// records and every driver is aborted.
    pub fn halt(&self) {
        self.inner.journal.seal();
        for (_, h) in self.inner.drivers.lock().unwrap().drain() {
            h.abort();
        }
    }

    fn handle(&self, instance_id: &str) -> Result<Arc<InstanceHandle>, EngineError> {
        self.inner
            .instances
            .read()
            .unwrap()
            .get(instance_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownInstance(instance_id.to_string()))
    }
}

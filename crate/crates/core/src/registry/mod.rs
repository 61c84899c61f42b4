//! The repository pool of microservices, local functions, and the workflow
//! catalog. Every mutation is journaled before it becomes visible.

mod function;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use reqwest::Url;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::{parse_bpmn, validate, Diagnostic, ParseError, ProcessDefinition, RegistryView, Severity};
use crate::journal::{EventBody, ExecutionEvent, Journal, JournalError};
use crate::version::{Version, VersionRequirement};

pub use function::{ConcatPart, FunctionError, FunctionSpec, TableEntry, TableOp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Target {
    Remote { base_url: String, path: String },
    LocalFunction { function_ref: String },
}

impl Target {
    /// Splits an absolute URL into base and path.
    pub fn remote_from_url(url: &str) -> Result<Self, RegistryError> {
        let parsed = Url::parse(url).map_err(|e| RegistryError::MalformedTarget(format!("{url}: {e}")))?;
        let mut base = format!("{}://{}", parsed.scheme(), parsed.host_str().unwrap_or_default());
        if let Some(port) = parsed.port() {
            base.push_str(&format!(":{port}"));
        }
        let target = Self::Remote {
            base_url: base,
            path: parsed.path().to_string(),
        };
        target.check()?;
        Ok(target)
    }

    pub fn function_ref(&self) -> Option<&str> {
        match self {
            Self::LocalFunction { function_ref } => Some(function_ref),
            Self::Remote { .. } => None,
        }
    }

    /// Full URL of a remote target.
    pub fn url(&self) -> Option<String> {
        match self {
            Self::Remote { base_url, path } => {
                let base = base_url.trim_end_matches('/');
                if path.is_empty() {
                    Some(base.to_string())
                } else if path.starts_with('/') {
                    Some(format!("{base}{path}"))
                } else {
                    Some(format!("{base}/{path}"))
                }
            }
            Self::LocalFunction { .. } => None,
        }
    }

    fn check(&self) -> Result<(), RegistryError> {
        match self {
            Self::Remote { base_url, .. } => {
                let url = Url::parse(base_url)
                    .map_err(|e| RegistryError::MalformedTarget(format!("{base_url}: {e}")))?;
                if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
                    return Err(RegistryError::MalformedTarget(format!(
                        "{base_url}: expected an absolute http(s) URL"
                    )));
                }
                Ok(())
            }
            Self::LocalFunction { function_ref } if function_ref.trim().is_empty() => {
                Err(RegistryError::MalformedTarget("empty function reference".into()))
            }
            Self::LocalFunction { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Health {
    #[default]
    Unknown,
    Healthy,
    Unhealthy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceRegistration {
    pub service_id: String,
    pub version: Version,
    pub target: Target,
    #[serde(default)]
    pub health: Health,
    #[serde(default)]
    pub registered_at: u64,
}

impl ServiceRegistration {
    pub fn new(service_id: impl Into<String>, version: Version, target: Target) -> Self {
        Self {
            service_id: service_id.into(),
            version,
            target,
            health: Health::Unknown,
            registered_at: 0,
        }
    }

    pub fn key(&self) -> ServiceKey {
        ServiceKey {
            service_id: self.service_id.clone(),
            version: self.version.clone(),
        }
    }
}

/// Identifies one deployed version of a service.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceKey {
    pub service_id: String,
    pub version: Version,
}

impl std::fmt::Display for ServiceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.service_id, self.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeploymentState {
    Active,
    Retired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowDeployment {
    pub definition_id: String,
    pub version: Version,
    pub definition: Arc<ProcessDefinition>,
    pub deployed_at: u64,
    pub state: DeploymentState,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("{0} is already registered")]
    DuplicateVersion(String),
    #[error("malformed target: {0}")]
    MalformedTarget(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("function `{0}` is already registered")]
    DuplicateFunction(String),
    #[error("invalid function spec: {0}")]
    SpecInvalid(String),
    #[error("{0} is already retired")]
    AlreadyRetired(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeployError {
    #[error(transparent)]
    Parse(ParseError),
    #[error("definition has {} error diagnostic(s)", .0.iter().filter(|d| d.severity == Severity::Error).count())]
    Invalid(Vec<Diagnostic>),
    #[error("workflow {0} is already deployed")]
    DuplicateVersion(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// Plain registry contents. `Registry` wraps this with locking and
/// journaling; recovery folds journal events into it directly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryState {
    services: BTreeMap<(String, Version), ServiceRegistration>,
    functions: BTreeMap<String, FunctionSpec>,
    workflows: BTreeMap<(String, Version), WorkflowDeployment>,
}

impl RegistryState {
    pub fn services(&self) -> Vec<ServiceRegistration> {
        self.services.values().cloned().collect()
    }

    pub fn workflows(&self) -> Vec<WorkflowDeployment> {
        self.workflows.values().cloned().collect()
    }

    pub fn functions(&self) -> &BTreeMap<String, FunctionSpec> {
        &self.functions
    }

    pub fn resolve(&self, service_id: &str, req: &VersionRequirement) -> Result<&ServiceRegistration, RegistryError> {
        let versions = self
            .services
            .range((service_id.to_string(), Version::new(0, 0, 0))..)
            .take_while(|((id, _), _)| id == service_id)
            .map(|((_, v), _)| v);
        let best = req
            .select(versions)
            .ok_or_else(|| RegistryError::NotFound(format!("service `{service_id}` {req}")))?;
        Ok(&self.services[&(service_id.to_string(), best.clone())])
    }

    /// Versions of one service, ascending.
    pub fn versions_of(&self, service_id: &str) -> Vec<Version> {
        self.services
            .keys()
            .filter(|(id, _)| id == service_id)
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn service(&self, service_id: &str, version: &Version) -> Option<&ServiceRegistration> {
        self.services.get(&(service_id.to_string(), version.clone()))
    }

    pub fn function(&self, function_ref: &str) -> Option<&FunctionSpec> {
        self.functions.get(function_ref)
    }

    /// With a version, that exact deployment; without, the highest Active one.
    pub fn workflow(&self, definition_id: &str, version: Option<&Version>) -> Option<&WorkflowDeployment> {
        match version {
            Some(v) => self.workflows.get(&(definition_id.to_string(), v.clone())),
            None => self
                .workflows
                .values()
                .filter(|w| w.definition_id == definition_id && w.state == DeploymentState::Active)
                .max_by(|a, b| a.version.cmp(&b.version)),
        }
    }

    pub fn view(&self) -> RegistryView {
        self.services.keys().cloned().collect()
    }

    fn check_service(&self, reg: &ServiceRegistration) -> Result<(), RegistryError> {
        reg.target.check()?;
        if reg.service_id.trim().is_empty() {
            return Err(RegistryError::MalformedTarget("empty service id".into()));
        }
        if self.services.contains_key(&(reg.service_id.clone(), reg.version.clone())) {
            return Err(RegistryError::DuplicateVersion(format!("service {}", reg.key())));
        }
        Ok(())
    }

    fn check_function(&self, function_ref: &str, spec: &FunctionSpec) -> Result<(), RegistryError> {
        if function_ref.trim().is_empty() {
            return Err(RegistryError::SpecInvalid("function name is empty".into()));
        }
        spec.check().map_err(RegistryError::SpecInvalid)?;
        if self.functions.contains_key(function_ref) {
            return Err(RegistryError::DuplicateFunction(function_ref.to_string()));
        }
        Ok(())
    }

    /// Folds one journal event into the state. Events of other kinds are
    /// ignored; a deployment document that no longer parses is an error.
    pub fn apply(&mut self, event: &ExecutionEvent) -> Result<(), ParseError> {
        match &event.body {
            EventBody::ServiceRegistered { registration } => {
                let mut reg = registration.clone();
                reg.registered_at = event.timestamp;
                reg.health = Health::Unknown;
                self.services.insert((reg.service_id.clone(), reg.version.clone()), reg);
            }
            EventBody::FunctionRegistered { function_ref, spec } => {
                self.functions.insert(function_ref.clone(), spec.clone());
            }
            EventBody::DeploymentRecorded {
                definition_id,
                version,
                document,
            } => {
                let definition = parse_bpmn(document.as_bytes())?.with_version(version.clone());
                self.workflows.insert(
                    (definition_id.clone(), version.clone()),
                    WorkflowDeployment {
                        definition_id: definition_id.clone(),
                        version: version.clone(),
                        definition: Arc::new(definition),
                        deployed_at: event.timestamp,
                        state: DeploymentState::Active,
                    },
                );
            }
            EventBody::WorkflowRetired { definition_id, version } => {
                if let Some(w) = self.workflows.get_mut(&(definition_id.clone(), version.clone())) {
                    w.state = DeploymentState::Retired;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Shared registry. Reads take a read lock; mutations validate, journal and
/// apply under one write lock, so readers never see a partial update.
pub struct Registry {
    state: RwLock<RegistryState>,
    journal: Arc<Journal>,
}

impl Registry {
    pub fn new(journal: Arc<Journal>) -> Self {
        Self::with_state(journal, RegistryState::default())
    }

    pub fn with_state(journal: Arc<Journal>, state: RegistryState) -> Self {
        Self {
            state: RwLock::new(state),
            journal,
        }
    }

    pub fn snapshot(&self) -> RegistryState {
        self.state.read().unwrap().clone()
    }

    pub fn read<R>(&self, f: impl FnOnce(&RegistryState) -> R) -> R {
        f(&self.state.read().unwrap())
    }

    fn commit(&self, state: &mut RegistryState, body: EventBody) -> Result<(), JournalError> {
        let event = self.journal.append(None, body)?;
        state.apply(&event).expect("documents were parsed before journaling");
        Ok(())
    }

    pub fn register_service(&self, reg: ServiceRegistration) -> Result<ServiceRegistration, RegistryError> {
        let mut state = self.state.write().unwrap();
        state.check_service(&reg)?;
        let key = (reg.service_id.clone(), reg.version.clone());
        self.commit(&mut state, EventBody::ServiceRegistered { registration: reg })?;
        Ok(state.services[&key].clone())
    }

    pub fn resolve(&self, service_id: &str, req: &VersionRequirement) -> Result<ServiceRegistration, RegistryError> {
        self.read(|s| s.resolve(service_id, req).cloned())
    }

    pub fn register_function(&self, function_ref: &str, spec: FunctionSpec) -> Result<(), RegistryError> {
        let mut state = self.state.write().unwrap();
        state.check_function(function_ref, &spec)?;
        self.commit(
            &mut state,
            EventBody::FunctionRegistered {
                function_ref: function_ref.to_string(),
                spec,
            },
        )?;
        Ok(())
    }

    pub fn function(&self, function_ref: &str) -> Option<FunctionSpec> {
        self.read(|s| s.function(function_ref).cloned())
    }

    /// Parses, validates and records a workflow. Warnings do not block a
    /// deployment; any error diagnostic does.
    pub fn deploy_workflow(&self, document: &[u8], version: Version) -> Result<WorkflowDeployment, DeployError> {
        let definition = match parse_bpmn(document) {
            Ok(def) => def.with_version(version.clone()),
            Err(ParseError::InvariantViolation(diags)) => return Err(DeployError::Invalid(diags)),
            Err(e) => return Err(DeployError::Parse(e)),
        };
        let mut state = self.state.write().unwrap();
        let diagnostics = validate(&definition, Some(&state.view()));
        if diagnostics.iter().any(|d| d.severity == Severity::Error) {
            return Err(DeployError::Invalid(diagnostics));
        }
        let key = (definition.id().to_string(), version.clone());
        if state.workflows.contains_key(&key) {
            return Err(DeployError::DuplicateVersion(format!("{}@{}", key.0, key.1)));
        }
        let document = String::from_utf8(document.to_vec()).expect("parse_bpmn accepted UTF-8");
        let event = self.journal.append(
            None,
            EventBody::DeploymentRecorded {
                definition_id: key.0.clone(),
                version,
                document,
            },
        )?;
        // Reuse the already parsed definition rather than parsing again.
        state.workflows.insert(
            key.clone(),
            WorkflowDeployment {
                definition_id: key.0.clone(),
                version: key.1.clone(),
                definition: Arc::new(definition),
                deployed_at: event.timestamp,
                state: DeploymentState::Active,
            },
        );
        Ok(state.workflows[&key].clone())
    }

    pub fn list_services(&self) -> Vec<ServiceRegistration> {
        self.read(RegistryState::services)
    }

    pub fn list_workflows(&self) -> Vec<WorkflowDeployment> {
        self.read(RegistryState::workflows)
    }

    pub fn workflow(&self, definition_id: &str, version: Option<&Version>) -> Option<WorkflowDeployment> {
        self.read(|s| s.workflow(definition_id, version).cloned())
    }

    pub fn retire_workflow(&self, definition_id: &str, version: &Version) -> Result<WorkflowDeployment, RegistryError> {
        let mut state = self.state.write().unwrap();
        let key = (definition_id.to_string(), version.clone());
        match state.workflows.get(&key) {
            None => return Err(RegistryError::NotFound(format!("workflow {definition_id}@{version}"))),
            Some(w) if w.state == DeploymentState::Retired => {
                return Err(RegistryError::AlreadyRetired(format!("workflow {definition_id}@{version}")))
            }
            Some(_) => {}
        }
        self.commit(
            &mut state,
            EventBody::WorkflowRetired {
                definition_id: definition_id.to_string(),
                version: version.clone(),
            },
        )?;
        Ok(state.workflows[&key].clone())
    }

    pub fn view(&self) -> RegistryView {
        self.read(RegistryState::view)
    }
}

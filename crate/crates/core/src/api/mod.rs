//! HTTP surface of the engine. All bodies are JSON except the BPMN upload.
//!
//! ```text
//! POST   /workflows?version=x.y.z      deploy (XML body)        201
//! GET    /workflows                    list
//! GET    /workflows/{id}/{version}     detail with raw document
//! DELETE /workflows/{id}/{version}     retire
//! POST   /services, GET /services      register / list          201
//! POST   /functions                    register a local function 201
//! POST   /instances                    start                    202
//! GET    /instances, /instances/{id}, /instances/{id}/events
//! POST   /instances/{id}/cancel
//! GET    /monitor/circuits, /monitor/health
//! ```

mod error;

use std::collections::BTreeMap;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bpmn::{validate, Diagnostic};
use crate::engine::{Engine, InstanceStatus, ProcessInstance};
use crate::invoker::CircuitState;
use crate::journal::ExecutionEvent;
use crate::registry::{
    DeploymentState, FunctionSpec, ServiceRegistration, Target, WorkflowDeployment,
};
use crate::vars::VariableTree;
use crate::version::{parse_version, Version};

pub use error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkflowSummary {
    pub definition_id: String,
    pub version: Version,
    pub name: String,
    pub state: DeploymentState,
    pub deployed_at: u64,
    pub node_count: usize,
    pub flow_count: usize,
}

impl From<&WorkflowDeployment> for WorkflowSummary {
    fn from(d: &WorkflowDeployment) -> Self {
        Self {
            definition_id: d.definition_id.clone(),
            version: d.version.clone(),
            name: d.definition.name().to_string(),
            state: d.state,
            deployed_at: d.deployed_at,
            node_count: d.definition.nodes().len(),
            flow_count: d.definition.flows().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkflowDetail {
    #[serde(flatten)]
    pub summary: WorkflowSummary,
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeployResponse {
    pub definition_id: String,
    pub version: Version,
    /// Warnings that did not block the deployment.
    pub diagnostics: Vec<Diagnostic>,
}

/// Either a full `target` or a plain `url` for a remote service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegisterServiceRequest {
    pub service_id: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegisterFunctionRequest {
    pub function_ref: String,
    pub spec: FunctionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StartRequest {
    pub definition_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default)]
    pub variables: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StartResponse {
    pub instance_id: String,
    pub definition_id: String,
    pub definition_version: Version,
    pub status: InstanceStatus,
    pub resolved_services: BTreeMap<String, Version>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CircuitView {
    pub service_id: String,
    pub version: Version,
    #[serde(flatten)]
    pub state: CircuitState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HealthView {
    pub status: String,
    pub pid: u32,
    pub uptime_ms: u64,
    pub last_seq: u64,
    pub journal_failed: bool,
    pub instances_running: usize,
}

#[derive(Clone)]
struct AppState {
    engine: Engine,
    started: Instant,
}

pub fn router(engine: Engine) -> Router {
    let state = AppState {
        engine,
        started: Instant::now(),
    };
    Router::new()
        .route("/workflows", post(deploy).get(list_workflows))
        .route("/workflows/{id}/{version}", get(get_workflow).delete(retire_workflow))
        .route("/services", post(register_service).get(list_services))
        .route("/functions", post(register_function))
        .route("/instances", post(start_instance).get(list_instances))
        .route("/instances/{id}", get(get_instance))
        .route("/instances/{id}/events", get(instance_events))
        .route("/instances/{id}/cancel", post(cancel_instance))
        .route("/monitor/circuits", get(circuits))
        .route("/monitor/health", get(health))
        .fallback(|| async { ApiError::not_found("NOT_FOUND", "no such endpoint") })
        .with_state(state)
}

/// Serves the API until the listener fails or the future is dropped.
pub async fn serve(engine: Engine, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}

type ApiResult<T> = Result<T, ApiError>;

fn json_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

fn version_arg(text: &str) -> ApiResult<Version> {
    parse_version(text).map_err(|e| ApiError::new(400, "INVALID_VERSION", e.to_string()))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<String>,
}

async fn deploy(
    State(s): State<AppState>,
    Query(q): Query<VersionQuery>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<DeployResponse>)> {
    let version = q
        .version
        .as_deref()
        .ok_or_else(|| ApiError::new(400, "MISSING_VERSION", "query parameter `version` is required"))
        .and_then(version_arg)?;
    let deployment = s.engine.deploy_workflow(&body, version)?;
    let diagnostics = validate(&deployment.definition, Some(&s.engine.registry().view()));
    Ok((
        StatusCode::CREATED,
        Json(DeployResponse {
            definition_id: deployment.definition_id,
            version: deployment.version,
            diagnostics,
        }),
    ))
}

async fn list_workflows(State(s): State<AppState>) -> Json<Vec<WorkflowSummary>> {
    Json(s.engine.list_workflows().iter().map(WorkflowSummary::from).collect())
}

async fn get_workflow(
    State(s): State<AppState>,
    Path((id, version)): Path<(String, String)>,
) -> ApiResult<Json<WorkflowDetail>> {
    let version = version_arg(&version)?;
    let d = s
        .engine
        .registry()
        .workflow(&id, Some(&version))
        .ok_or_else(|| ApiError::not_found("WORKFLOW_NOT_FOUND", format!("workflow {id}@{version} not found")))?;
    Ok(Json(WorkflowDetail {
        summary: WorkflowSummary::from(&d),
        document: String::from_utf8_lossy(d.definition.raw_document()).into_owned(),
    }))
}

async fn retire_workflow(
    State(s): State<AppState>,
    Path((id, version)): Path<(String, String)>,
) -> ApiResult<Json<WorkflowSummary>> {
    let version = version_arg(&version)?;
    let d = s.engine.retire_workflow(&id, &version)?;
    Ok(Json(WorkflowSummary::from(&d)))
}

async fn register_service(
    State(s): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<ServiceRegistration>)> {
    let req: RegisterServiceRequest = json_body(&body)?;
    let version = version_arg(&req.version)?;
    let target = match (req.target, req.url) {
        (Some(t), None) => t,
        (None, Some(url)) => Target::remote_from_url(&url)?,
        _ => return Err(ApiError::malformed("give exactly one of `url` or `target`")),
    };
    let reg = s
        .engine
        .register_service(ServiceRegistration::new(req.service_id, version, target))?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn list_services(State(s): State<AppState>) -> Json<Vec<ServiceRegistration>> {
    Json(s.engine.list_services())
}

async fn register_function(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: RegisterFunctionRequest = json_body(&body)?;
    s.engine.register_function(&req.function_ref, req.spec)?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({ "functionRef": req.function_ref })),
    ))
}

async fn start_instance(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<StartResponse>)> {
    let req: StartRequest = json_body(&body)?;
    let version = req.version.as_deref().map(version_arg).transpose()?;
    if !(req.variables.is_object() || req.variables.is_null()) {
        return Err(ApiError::malformed("`variables` must be a JSON object"));
    }
    let instance = s
        .engine
        .launch(&req.definition_id, version.as_ref(), VariableTree::from_value(req.variables))?;
    Ok((
        StatusCode::ACCEPTED,
        Json(StartResponse {
            instance_id: instance.instance_id,
            definition_id: instance.definition_id,
            definition_version: instance.definition_version,
            status: instance.status,
            resolved_services: instance.resolved_services,
        }),
    ))
}

async fn list_instances(State(s): State<AppState>) -> Json<Vec<ProcessInstance>> {
    Json(s.engine.list_instances())
}

fn instance_or_404(engine: &Engine, id: &str) -> ApiResult<ProcessInstance> {
    engine
        .instance(id)
        .ok_or_else(|| ApiError::not_found("INSTANCE_NOT_FOUND", format!("instance {id} not found")))
}

async fn get_instance(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ProcessInstance>> {
    instance_or_404(&s.engine, &id).map(Json)
}

async fn instance_events(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<ExecutionEvent>>> {
    instance_or_404(&s.engine, &id)?;
    Ok(Json(s.engine.journal().instance_events(&id)))
}

async fn cancel_instance(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ProcessInstance>> {
    Ok(Json(s.engine.cancel_instance(&id)?))
}

async fn circuits(State(s): State<AppState>) -> Json<Vec<CircuitView>> {
    Json(
        s.engine
            .breaker_snapshot()
            .into_iter()
            .map(|(key, state)| CircuitView {
                service_id: key.service_id,
                version: key.version,
                state,
            })
            .collect(),
    )
}

async fn health(State(s): State<AppState>) -> Json<HealthView> {
    let journal = s.engine.journal();
    let failed = journal.is_failed();
    Json(HealthView {
        status: if failed { "degraded" } else { "ok" }.to_string(),
        pid: std::process::id(),
        uptime_ms: s.started.elapsed().as_millis() as u64,
        last_seq: journal.last_seq(),
        journal_failed: failed,
        instances_running: s
            .engine
            .list_instances()
            .iter()
            .filter(|i| i.status == InstanceStatus::Running)
            .count(),
    })
}

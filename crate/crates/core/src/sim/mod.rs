//! Scriptable fake microservices.
//!
//! Each service follows a script of behaviors consumed in order; the last
//! entry repeats forever. A fleet serves either real sockets on loopback
//! ([`spawn_fleet`]) or an in-process [`SimTransport`] whose latencies run
//! on an injected clock ([`virtual_fleet`]). Both log every arrival.

mod assert;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::invoker::{HttpReply, HttpRequest, Transport, TransportError, INSTANCE_HEADER, TASK_HEADER};
use crate::registry::{ServiceKey, ServiceRegistration, Target};
use crate::version::Version;

pub use assert::{assert_arrivals, assert_order, ArrivalPredicate, AssertionDetail};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum Behavior {
    Respond {
        body: Value,
        #[serde(default)]
        latency_ms: u64,
    },
    Fail {
        status: u16,
        #[serde(default)]
        latency_ms: u64,
    },
    /// Holds the request, then answers 504.
    Hang { duration_ms: u64 },
    /// Answers with the request body.
    Echo {
        #[serde(default)]
        latency_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimServiceSpec {
    pub service_id: String,
    pub version: Version,
    pub script: Vec<Behavior>,
}

impl SimServiceSpec {
    pub fn new(service_id: impl Into<String>, version: Version, script: Vec<Behavior>) -> Self {
        Self {
            service_id: service_id.into(),
            version,
            script,
        }
    }

    pub fn echo(service_id: impl Into<String>, version: Version) -> Self {
        Self::new(service_id, version, vec![Behavior::Echo { latency_ms: 0 }])
    }

    pub fn key(&self) -> ServiceKey {
        ServiceKey {
            service_id: self.service_id.clone(),
            version: self.version.clone(),
        }
    }
}

/// Fleet description as read from a `--fleet` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub services: Vec<SimServiceSpec>,
}

impl FleetConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        for spec in &config.services {
            check_spec(spec)?;
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("no local port available: {0}")]
    PortExhausted(String),
    #[error("invalid fleet: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Arrival {
    /// Fleet-wide arrival order.
    pub seq: u64,
    pub timestamp: u64,
    pub service_id: String,
    pub version: Version,
    pub instance_id: Option<String>,
    pub task_id: Option<String>,
    pub body: Value,
}

#[derive(Default)]
struct LogInner {
    next_seq: u64,
    arrivals: Vec<Arrival>,
}

struct Member {
    spec: SimServiceSpec,
    url: String,
    cursor: Mutex<usize>,
    script: Mutex<Vec<Behavior>>,
}

impl Member {
    fn next_behavior(&self) -> Behavior {
        let script = self.script.lock().unwrap();
        let mut cursor = self.cursor.lock().unwrap();
        let behavior = script[(*cursor).min(script.len() - 1)].clone();
        *cursor += 1;
        behavior
    }
}

struct FleetCore {
    members: Vec<Arc<Member>>,
    log: Mutex<LogInner>,
    clock: Arc<dyn Clock>,
}

impl FleetCore {
    fn member_by_url(&self, url: &str) -> Option<&Arc<Member>> {
        self.members.iter().find(|m| m.url == url)
    }

    async fn handle(&self, member: &Member, instance: Option<String>, task: Option<String>, body: &[u8]) -> (u16, Vec<u8>) {
        let parsed: Value = serde_json::from_slice(body)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(body).into_owned()));
        {
            let mut log = self.log.lock().unwrap();
            log.next_seq += 1;
            let seq = log.next_seq;
            log.arrivals.push(Arrival {
                seq,
                timestamp: self.clock.now_ms(),
                service_id: member.spec.service_id.clone(),
                version: member.spec.version.clone(),
                instance_id: instance,
                task_id: task,
                body: parsed.clone(),
            });
        }
        let pause = |ms: u64| self.clock.sleep(Duration::from_millis(ms));
        match member.next_behavior() {
            Behavior::Respond { body, latency_ms } => {
                pause(latency_ms).await;
                (200, to_bytes(&body))
            }
            Behavior::Echo { latency_ms } => {
                pause(latency_ms).await;
                (200, to_bytes(&parsed))
            }
            Behavior::Fail { status, latency_ms } => {
                pause(latency_ms).await;
                (status, to_bytes(&json!({ "error": format!("scripted failure {status}") })))
            }
            Behavior::Hang { duration_ms } => {
                pause(duration_ms).await;
                (504, to_bytes(&json!({ "error": "scripted hang" })))
            }
        }
    }
}

fn to_bytes(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("JSON values serialize")
}

fn check_spec(spec: &SimServiceSpec) -> Result<(), HarnessError> {
    if spec.script.is_empty() {
        return Err(HarnessError::Config(format!("{}: empty script", spec.key())));
    }
    if spec.service_id.trim().is_empty() {
        return Err(HarnessError::Config("empty service id".into()));
    }
    Ok(())
}

/// A running set of fake services and their shared arrival log.
pub struct Fleet {
    core: Arc<FleetCore>,
    servers: Vec<tokio::task::JoinHandle<()>>,
}

impl Drop for Fleet {
    fn drop(&mut self) {
        for s in &self.servers {
            s.abort();
        }
    }
}

impl Fleet {
    /// Registrations pointing at each member, in spec order.
    pub fn registrations(&self) -> Vec<ServiceRegistration> {
        self.core
            .members
            .iter()
            .map(|m| {
                let target = Target::remote_from_url(&m.url).expect("fleet URLs are absolute");
                ServiceRegistration::new(m.spec.service_id.clone(), m.spec.version.clone(), target)
            })
            .collect()
    }

    pub fn url(&self, service_id: &str, version: &Version) -> Option<String> {
        self.member(service_id, version).map(|m| m.url.clone())
    }

    pub fn urls(&self) -> BTreeMap<ServiceKey, String> {
        self.core
            .members
            .iter()
            .map(|m| (m.spec.key(), m.url.clone()))
            .collect()
    }

    /// Replaces a member's script and rewinds it.
    pub fn set_script(&self, service_id: &str, version: &Version, script: Vec<Behavior>) {
        assert!(!script.is_empty(), "a script needs at least one entry");
        let member = self
            .member(service_id, version)
            .unwrap_or_else(|| panic!("no sim service {service_id}@{version}"));
        *member.script.lock().unwrap() = script;
        *member.cursor.lock().unwrap() = 0;
    }

    pub fn arrivals(&self) -> Vec<Arrival> {
        self.core.log.lock().unwrap().arrivals.clone()
    }

    pub fn arrivals_for(&self, service_id: &str) -> Vec<Arrival> {
        self.core
            .log
            .lock()
            .unwrap()
            .arrivals
            .iter()
            .filter(|a| a.service_id == service_id)
            .cloned()
            .collect()
    }

    pub fn clear_arrivals(&self) {
        self.core.log.lock().unwrap().arrivals.clear();
    }

    fn member(&self, service_id: &str, version: &Version) -> Option<&Arc<Member>> {
        self.core
            .members
            .iter()
            .find(|m| m.spec.service_id == service_id && &m.spec.version == version)
    }
}

fn new_core(specs: &[SimServiceSpec], urls: Vec<String>, clock: Arc<dyn Clock>) -> Arc<FleetCore> {
    let members = specs
        .iter()
        .zip(urls)
        .map(|(spec, url)| {
            Arc::new(Member {
                spec: spec.clone(),
                url,
                cursor: Mutex::new(0),
                script: Mutex::new(spec.script.clone()),
            })
        })
        .collect();
    Arc::new(FleetCore {
        members,
        log: Mutex::new(LogInner::default()),
        clock,
    })
}

/// Serves every spec over HTTP on its own ephemeral loopback port.
pub async fn spawn_fleet(specs: Vec<SimServiceSpec>) -> Result<Fleet, HarnessError> {
    for spec in &specs {
        check_spec(spec)?;
    }
    let mut listeners = Vec::with_capacity(specs.len());
    let mut urls = Vec::with_capacity(specs.len());
    for _ in &specs {
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
            .await
            .map_err(|e| HarnessError::PortExhausted(e.to_string()))?;
        let addr = listener
            .local_addr()
            .map_err(|e| HarnessError::PortExhausted(e.to_string()))?;
        urls.push(format!("http://{addr}/invoke"));
        listeners.push(listener);
    }
    let core = new_core(&specs, urls, Arc::new(SystemClock));
    let servers = listeners
        .into_iter()
        .zip(core.members.clone())
        .map(|(listener, member)| {
            let app = Router::new()
                .fallback(serve_request)
                .with_state((Arc::clone(&core), member));
            tokio::spawn(async move {
                if let Err(e) = axum::serve(listener, app).await {
                    tracing::warn!(error = %e, "sim service stopped");
                }
            })
        })
        .collect();
    Ok(Fleet { core, servers })
}

async fn serve_request(
    State((core, member)): State<(Arc<FleetCore>, Arc<Member>)>,
    headers: HeaderMap,
    body: Bytes,
) -> (StatusCode, [(&'static str, &'static str); 1], Vec<u8>) {
    let header = |name: &str| {
        headers
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    };
    let (status, reply) = core
        .handle(&member, header(INSTANCE_HEADER), header(TASK_HEADER), &body)
        .await;
    (
        StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
        [("content-type", "application/json")],
        reply,
    )
}

/// An in-process fleet. Requests never touch a socket and latencies are
/// slept on `clock`, so a manual clock makes every run instant and exact.
pub fn virtual_fleet(specs: Vec<SimServiceSpec>, clock: Arc<dyn Clock>) -> Result<(Fleet, SimTransport), HarnessError> {
    for spec in &specs {
        check_spec(spec)?;
    }
    let urls = specs
        .iter()
        .map(|s| format!("http://sim.invalid/{}/{}", s.service_id, s.version))
        .collect();
    let core = new_core(&specs, urls, clock);
    let transport = SimTransport {
        core: Arc::clone(&core),
    };
    Ok((
        Fleet {
            core,
            servers: Vec::new(),
        },
        transport,
    ))
}

/// Transport that delivers requests straight to a virtual fleet.
#[derive(Clone)]
pub struct SimTransport {
    core: Arc<FleetCore>,
}

#[async_trait]
impl Transport for SimTransport {
    async fn post(&self, request: HttpRequest) -> Result<HttpReply, TransportError> {
        let member = self
            .core
            .member_by_url(&request.url)
            .cloned()
            .ok_or_else(|| TransportError(format!("connection refused: {}", request.url)))?;
        let header = |name: &str| {
            request
                .headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v.clone())
        };
        let (status, body) = self
            .core
            .handle(&member, header(INSTANCE_HEADER), header(TASK_HEADER), &request.body)
            .await;
        Ok(HttpReply { status, body })
    }
}

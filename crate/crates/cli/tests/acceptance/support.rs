use std::path::PathBuf;
use std::sync::Arc;

use flowgraft::clock::{Clock, ManualClock};
use flowgraft::engine::Engine;
use flowgraft::journal::{EventBody, ExecutionEvent, Journal};
use flowgraft::sim::{virtual_fleet, Fleet, SimServiceSpec};
use flowgraft::version::Version;

pub type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}
pub(crate) use ensure;

/// Unwraps or turns the error into a failed verdict.
macro_rules! must {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return Err(format!("{}: {err}", stringify!($e))),
        }
    };
}
pub(crate) use must;

pub fn v(text: &str) -> Version {
    Version::parse(text).expect("literal versions parse")
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Accumulates process elements and wraps them in a definitions document.
#[derive(Default)]
pub struct Bpmn {
    body: Vec<String>,
}

impl Bpmn {
    pub fn push(&mut self, xml: String) {
        self.body.push(xml);
    }

    pub fn start(&mut self, id: &str) {
        self.push(format!(r#"<startEvent id="{id}"/>"#));
    }

    pub fn end(&mut self, id: &str) {
        self.push(format!(r#"<endEvent id="{id}"/>"#));
    }

    /// A service task whose request carries only `v0`, so bodies stay small.
    pub fn task(&mut self, id: &str, service: &str) {
        self.push(format!(
            r#"<serviceTask id="{id}" name="{id}" ext:service="{service}"><extensionElements><ext:input from="v0" to="v0"/></extensionElements></serviceTask>"#
        ));
    }

    pub fn task_req(&mut self, id: &str, service: &str, req: &str) {
        self.push(format!(
            r#"<serviceTask id="{id}" name="{id}" ext:service="{service}" ext:versionReq="{req}"/>"#
        ));
    }

    pub fn flow(&mut self, id: &str, source: &str, target: &str) {
        self.push(format!(r#"<sequenceFlow id="{id}" sourceRef="{source}" targetRef="{target}"/>"#));
    }

    pub fn cond(&mut self, id: &str, source: &str, target: &str, expr: &str) {
        self.push(format!(
            r#"<sequenceFlow id="{id}" sourceRef="{source}" targetRef="{target}"><conditionExpression>{expr}</conditionExpression></sequenceFlow>"#
        ));
    }

    pub fn xml(&self, process_id: &str) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL" xmlns:ext="urn:flowgraft:ext" id="defs">
  <process id="{process_id}">
    {}
  </process>
</definitions>
"#,
            self.body.join("\n    ")
        )
    }
}

/// start -> one task per entry -> end, task ids `t0..`.
pub fn chain(process_id: &str, services: &[&str]) -> String {
    let mut doc = Bpmn::default();
    doc.start("start");
    let mut prev = "start".to_string();
    for (i, s) in services.iter().enumerate() {
        let id = format!("t{i}");
        doc.task(&id, s);
        doc.flow(&format!("f{i}"), &prev, &id);
        prev = id;
    }
    doc.end("end");
    doc.flow("f_end", &prev, "end");
    doc.xml(process_id)
}

pub struct Rig {
    pub engine: Engine,
    pub fleet: Fleet,
}

/// Engine on an injected clock over an in-memory journal, with a virtual
/// fleet already registered.
pub fn rig(specs: Vec<SimServiceSpec>) -> Rig {
    let clock = ManualClock::default();
    let shared: Arc<dyn Clock> = Arc::new(clock.clone());
    let (fleet, transport) = virtual_fleet(specs, Arc::clone(&shared)).expect("valid fleet");
    let engine = Engine::builder()
        .journal(Arc::new(Journal::in_memory(Arc::clone(&shared))))
        .clock(shared)
        .transport(Arc::new(transport))
        .build()
        .expect("engine builds");
    for reg in fleet.registrations() {
        engine.register_service(reg).expect("fleet registers");
    }
    Rig { engine, fleet }
}

/// Node ids of TaskInvoked events for one instance, in journal order.
pub fn invoked(events: &[ExecutionEvent], instance_id: &str) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.instance_id.as_deref() == Some(instance_id))
        .filter_map(|e| match &e.body {
            EventBody::TaskInvoked { node_id, .. } => Some(node_id.clone()),
            _ => None,
        })
        .collect()
}

pub fn completed(events: &[ExecutionEvent], instance_id: &str) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.instance_id.as_deref() == Some(instance_id))
        .filter_map(|e| match &e.body {
            EventBody::TaskCompleted { node_id, .. } => Some(node_id.clone()),
            _ => None,
        })
        .collect()
}

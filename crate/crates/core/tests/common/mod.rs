#![allow(dead_code)]

use std::sync::Arc;

use flowgraft::clock::{Clock, ManualClock};
use flowgraft::engine::Engine;
use flowgraft::invoker::InvocationPolicy;
use flowgraft::journal::{EventBody, ExecutionEvent, Journal};
use flowgraft::sim::{virtual_fleet, Fleet, SimServiceSpec};
use flowgraft::version::Version;

pub fn v(text: &str) -> Version {
    Version::parse(text).unwrap()
}

/// Small BPMN document writer.
pub struct Doc {
    id: String,
    name: Option<String>,
    body: Vec<String>,
}

impl Doc {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            name: None,
            body: Vec::new(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn raw(mut self, xml: &str) -> Self {
        self.body.push(xml.to_string());
        self
    }

    pub fn start(self, id: &str) -> Self {
        let xml = format!(r#"<startEvent id="{id}"/>"#);
        self.raw(&xml)
    }

    pub fn end(self, id: &str) -> Self {
        let xml = format!(r#"<endEvent id="{id}"/>"#);
        self.raw(&xml)
    }

    pub fn task(self, id: &str, service: &str) -> Self {
        let xml = format!(r#"<serviceTask id="{id}" name="{id}" ext:service="{service}"/>"#);
        self.raw(&xml)
    }

    pub fn task_req(self, id: &str, service: &str, req: &str) -> Self {
        let xml = format!(r#"<serviceTask id="{id}" name="{id}" ext:service="{service}" ext:versionReq="{req}"/>"#);
        self.raw(&xml)
    }

    pub fn xor(self, id: &str, default: Option<&str>) -> Self {
        let xml = match default {
            Some(d) => format!(r#"<exclusiveGateway id="{id}" default="{d}"/>"#),
            None => format!(r#"<exclusiveGateway id="{id}"/>"#),
        };
        self.raw(&xml)
    }

    pub fn and(self, id: &str) -> Self {
        let xml = format!(r#"<parallelGateway id="{id}"/>"#);
        self.raw(&xml)
    }

    pub fn flow(self, id: &str, source: &str, target: &str) -> Self {
        let xml = format!(r#"<sequenceFlow id="{id}" sourceRef="{source}" targetRef="{target}"/>"#);
        self.raw(&xml)
    }

    pub fn cond(self, id: &str, source: &str, target: &str, expr: &str) -> Self {
        let expr = expr.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let xml = format!(
            r#"<sequenceFlow id="{id}" sourceRef="{source}" targetRef="{target}"><conditionExpression>{expr}</conditionExpression></sequenceFlow>"#
        );
        self.raw(&xml)
    }

    pub fn xml(&self) -> String {
        let name = self
            .name
            .as_ref()
            .map(|n| format!(r#" name="{n}""#))
            .unwrap_or_default();
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL" xmlns:ext="urn:flowgraft:ext" id="defs">
  <process id="{}"{name}>
    {}
  </process>
</definitions>
"#,
            self.id,
            self.body.join("\n    ")
        )
    }
}

/// start -> task per service (node id = service id) -> end.
pub fn chain(id: &str, services: &[&str]) -> String {
    let mut doc = Doc::new(id).start("start");
    let mut prev = "start".to_string();
    for (i, s) in services.iter().enumerate() {
        doc = doc.task(s, s).flow(&format!("f{i}"), &prev, s);
        prev = s.to_string();
    }
    doc.end("end").flow("f_end", &prev, "end").xml()
}

pub struct Rig {
    pub engine: Engine,
    pub fleet: Fleet,
    pub clock: ManualClock,
}

/// Engine over an in-memory journal, a manual clock and a virtual fleet
/// whose members are already registered.
pub fn rig(specs: Vec<SimServiceSpec>, policies: Vec<InvocationPolicy>) -> Rig {
    let clock = ManualClock::default();
    let shared: Arc<dyn Clock> = Arc::new(clock.clone());
    let journal = Arc::new(Journal::in_memory(Arc::clone(&shared)));
    rig_on(journal, clock, specs, policies, true)
}

pub fn rig_on(
    journal: Arc<Journal>,
    clock: ManualClock,
    specs: Vec<SimServiceSpec>,
    policies: Vec<InvocationPolicy>,
    register: bool,
) -> Rig {
    let shared: Arc<dyn Clock> = Arc::new(clock.clone());
    let (fleet, transport) = virtual_fleet(specs, Arc::clone(&shared)).unwrap();
    let mut builder = Engine::builder()
        .journal(journal)
        .clock(shared)
        .transport(Arc::new(transport));
    for p in policies {
        builder = builder.policy(p).unwrap();
    }
    let engine = builder.build().unwrap();
    if register {
        for reg in fleet.registrations() {
            engine.register_service(reg).unwrap();
        }
    }
    Rig { engine, fleet, clock }
}

pub fn echo_specs(services: &[&str]) -> Vec<SimServiceSpec> {
    services.iter().map(|s| SimServiceSpec::echo(*s, v("1.0.0"))).collect()
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

pub fn count_kind(events: &[ExecutionEvent], instance_id: &str, kind: flowgraft::journal::EventKind) -> usize {
    events
        .iter()
        .filter(|e| e.instance_id.as_deref() == Some(instance_id) && e.kind() == kind)
        .count()
}

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expr::Expression;
use crate::version::{Version, VersionRequirement};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ServiceRef {
    pub service_id: String,
    pub requirement: VersionRequirement,
}

/// Copies the value at `from` to `to`. Both are dot paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTask {
    pub service: ServiceRef,
    pub input: Vec<Mapping>,
    pub output: Vec<Mapping>,
    pub policy: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    StartEvent,
    EndEvent,
    ServiceTask(ServiceTask),
    ExclusiveGateway { default_flow: Option<String> },
    ParallelGateway,
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::StartEvent => "startEvent",
            Self::EndEvent => "endEvent",
            Self::ServiceTask(_) => "serviceTask",
            Self::ExclusiveGateway { .. } => "exclusiveGateway",
            Self::ParallelGateway => "parallelGateway",
        }
    }

    pub fn is_gateway(&self) -> bool {
        matches!(self, Self::ExclusiveGateway { .. } | Self::ParallelGateway)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub name: Option<String>,
    pub kind: NodeKind,
}

impl Node {
    pub fn service_task(&self) -> Option<&ServiceTask> {
        match &self.kind {
            NodeKind::ServiceTask(task) => Some(task),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFlow {
    pub id: String,
    pub name: Option<String>,
    pub source: String,
    pub target: String,
    pub condition: Option<Expression>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticCode {
    NoStart,
    MultipleStart,
    NoEnd,
    DuplicateId,
    DanglingRef,
    UnreachableNode,
    NonTerminatingCycle,
    NameMismatch,
    UnknownServiceRef,
    BadGatewayShape,
    BadCondition,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoStart => "NO_START",
            Self::MultipleStart => "MULTIPLE_START",
            Self::NoEnd => "NO_END",
            Self::DuplicateId => "DUPLICATE_ID",
            Self::DanglingRef => "DANGLING_REF",
            Self::UnreachableNode => "UNREACHABLE_NODE",
            Self::NonTerminatingCycle => "NON_TERMINATING_CYCLE",
            Self::NameMismatch => "NAME_MISMATCH",
            Self::UnknownServiceRef => "UNKNOWN_SERVICE_REF",
            Self::BadGatewayShape => "BAD_GATEWAY_SHAPE",
            Self::BadCondition => "BAD_CONDITION",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub subject_id: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: DiagnosticCode, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code,
            subject_id: subject.into(),
            message: message.into(),
        }
    }

    pub fn warning(
        code: DiagnosticCode,
        subject: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(code, subject, message)
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let severity = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{severity} {} {}: {}", self.code, self.subject_id, self.message)
    }
}

pub(crate) fn sort_diagnostics(diagnostics: &mut [Diagnostic]) {
    diagnostics.sort_by(|a, b| {
        (a.severity, &a.subject_id, a.code, &a.message).cmp(&(
            b.severity,
            &b.subject_id,
            b.code,
            &b.message,
        ))
    });
}

/// Adjacency derived from the node and flow lists.
#[derive(Debug, Clone, PartialEq, Default)]
struct Index {
    node_pos: HashMap<String, usize>,
    flow_pos: HashMap<String, usize>,
    /// Flow indices per node, document order.
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    start: usize,
}

/// An executable process graph. Immutable once built; share it behind an
/// `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessDefinition {
    id: String,
    version: Version,
    name: String,
    nodes: Vec<Node>,
    flows: Vec<SequenceFlow>,
    raw: Arc<[u8]>,
    index: Index,
}

impl ProcessDefinition {
    /// Builds a definition, checking every structural invariant. On failure
    /// returns all violated invariants as error diagnostics.
    pub fn from_parts(
        id: String,
        name: String,
        nodes: Vec<Node>,
        flows: Vec<SequenceFlow>,
        raw: Arc<[u8]>,
    ) -> Result<Self, Vec<Diagnostic>> {
        check_invariants(&id, &nodes, &flows)?;

        let node_pos: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let flow_pos = flows
            .iter()
            .enumerate()
            .map(|(i, f)| (f.id.clone(), i))
            .collect();
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, flow) in flows.iter().enumerate() {
            outgoing[node_pos[&flow.source]].push(i);
            incoming[node_pos[&flow.target]].push(i);
        }
        let start = nodes
            .iter()
            .position(|n| n.kind == NodeKind::StartEvent)
            .expect("checked: exactly one start event");
        Ok(Self {
            id,
            version: Version::new(0, 0, 0),
            name,
            nodes,
            flows,
            raw,
            index: Index {
                node_pos,
                flow_pos,
                outgoing,
                incoming,
                start,
            },
        })
    }

    pub fn with_version(mut self, version: Version) -> Self {
        self.version = version;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn version(&self) -> &Version {
        &self.version
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn flows(&self) -> &[SequenceFlow] {
        &self.flows
    }

    pub fn raw_document(&self) -> &[u8] {
        &self.raw
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.node_pos.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.node_pos.get(id).copied()
    }

    pub fn flow(&self, id: &str) -> Option<&SequenceFlow> {
        self.index.flow_pos.get(id).map(|&i| &self.flows[i])
    }

    pub fn start_node(&self) -> &Node {
        &self.nodes[self.index.start]
    }

    /// Outgoing flows of a node in document order.
    pub fn outgoing(&self, node_id: &str) -> impl Iterator<Item = &SequenceFlow> + '_ {
        self.flow_list(node_id, &self.index.outgoing)
    }

    pub fn incoming(&self, node_id: &str) -> impl Iterator<Item = &SequenceFlow> + '_ {
        self.flow_list(node_id, &self.index.incoming)
    }

    fn flow_list<'a>(
        &'a self,
        node_id: &str,
        table: &'a [Vec<usize>],
    ) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        let slots: &[usize] = match self.index.node_pos.get(node_id) {
            Some(&i) => &table[i],
            None => &[],
        };
        slots.iter().map(move |&f| &self.flows[f])
    }

    pub fn service_tasks(&self) -> impl Iterator<Item = (&Node, &ServiceTask)> {
        self.nodes
            .iter()
            .filter_map(|n| n.service_task().map(|t| (n, t)))
    }

    /// A gateway with more than one outgoing flow.
    pub fn is_diverging(&self, node_id: &str) -> bool {
        self.outgoing(node_id).count() > 1
    }

    /// Successor node indices by flow, document order (duplicates kept).
    pub(crate) fn successor_indices(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.index.outgoing[node]
            .iter()
            .map(move |&f| self.index.node_pos[&self.flows[f].target])
    }
}

fn check_invariants(
    process_id: &str,
    nodes: &[Node],
    flows: &[SequenceFlow],
) -> Result<(), Vec<Diagnostic>> {
    use DiagnosticCode::*;

    let mut diags = Vec::new();

    // References first; degree checks are meaningless on a broken graph.
    let mut seen = HashSet::new();
    for id in nodes.iter().map(|n| &n.id).chain(flows.iter().map(|f| &f.id)) {
        if !seen.insert(id.as_str()) {
            diags.push(Diagnostic::error(DuplicateId, id, format!("identifier `{id}` is used more than once")));
        }
    }
    let node_ids: HashSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    for flow in flows {
        for (role, target) in [("sourceRef", &flow.source), ("targetRef", &flow.target)] {
            if !node_ids.contains(target.as_str()) {
                diags.push(Diagnostic::error(
                    DanglingRef,
                    &flow.id,
                    format!("{role} `{target}` names no node"),
                ));
            }
        }
    }
    let flow_by_id: HashMap<&str, &SequenceFlow> = flows.iter().map(|f| (f.id.as_str(), f)).collect();
    for node in nodes {
        if let NodeKind::ExclusiveGateway { default_flow: Some(default) } = &node.kind {
            if !flow_by_id.contains_key(default.as_str()) {
                diags.push(Diagnostic::error(
                    DanglingRef,
                    &node.id,
                    format!("default flow `{default}` does not exist"),
                ));
            }
        }
    }
    if !diags.is_empty() {
        sort_diagnostics(&mut diags);
        return Err(diags);
    }

    let starts: Vec<&Node> = nodes.iter().filter(|n| n.kind == NodeKind::StartEvent).collect();
    match starts.as_slice() {
        [] => diags.push(Diagnostic::error(NoStart, process_id, "process has no start event")),
        [_] => {}
        [_, rest @ ..] => {
            for extra in rest {
                diags.push(Diagnostic::error(
                    MultipleStart,
                    &extra.id,
                    "process has more than one start event",
                ));
            }
        }
    }
    if !nodes.iter().any(|n| n.kind == NodeKind::EndEvent) {
        diags.push(Diagnostic::error(NoEnd, process_id, "process has no end event"));
    }

    let mut in_deg: HashMap<&str, usize> = HashMap::new();
    let mut out_deg: HashMap<&str, usize> = HashMap::new();
    for flow in flows {
        *out_deg.entry(flow.source.as_str()).or_default() += 1;
        *in_deg.entry(flow.target.as_str()).or_default() += 1;
    }
    for node in nodes {
        let ins = in_deg.get(node.id.as_str()).copied().unwrap_or(0);
        let outs = out_deg.get(node.id.as_str()).copied().unwrap_or(0);
        let shape = |msg: String| Diagnostic::error(BadGatewayShape, &node.id, msg);
        match &node.kind {
            NodeKind::StartEvent => {
                if ins > 0 {
                    diags.push(shape("a flow enters the start event".into()));
                }
                if outs != 1 {
                    diags.push(shape(format!("start event needs exactly one outgoing flow, has {outs}")));
                }
            }
            NodeKind::EndEvent => {
                if outs > 0 {
                    diags.push(shape("a flow leaves the end event".into()));
                }
            }
            NodeKind::ServiceTask(_) => {
                if ins != 1 || outs != 1 {
                    diags.push(shape(format!(
                        "service task needs one incoming and one outgoing flow, has {ins} in / {outs} out"
                    )));
                }
            }
            NodeKind::ExclusiveGateway { .. } | NodeKind::ParallelGateway => {
                let diverging = ins == 1 && outs >= 2;
                let converging = ins >= 2 && outs == 1;
                if !diverging && !converging {
                    diags.push(shape(format!(
                        "gateway must be diverging (1 in, 2+ out) or converging (2+ in, 1 out), has {ins} in / {outs} out"
                    )));
                }
            }
        }
    }

    let gateway_of: HashMap<&str, &Node> = nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    for flow in flows {
        let source = gateway_of[flow.source.as_str()];
        let outs = out_deg.get(source.id.as_str()).copied().unwrap_or(0);
        let from_diverging_xor =
            matches!(source.kind, NodeKind::ExclusiveGateway { .. }) && outs >= 2;
        let is_default = matches!(
            &source.kind,
            NodeKind::ExclusiveGateway { default_flow: Some(d) } if *d == flow.id
        );
        if flow.condition.is_some() && !from_diverging_xor {
            diags.push(Diagnostic::error(
                BadCondition,
                &flow.id,
                "conditions are only allowed on flows leaving a diverging exclusive gateway",
            ));
        } else if flow.condition.is_some() && is_default {
            diags.push(Diagnostic::error(BadCondition, &flow.id, "the default flow carries a condition"));
        } else if flow.condition.is_none() && from_diverging_xor && !is_default {
            diags.push(Diagnostic::error(
                BadCondition,
                &flow.id,
                "flow leaving an exclusive gateway needs a condition unless it is the default",
            ));
        }
    }
    for node in nodes {
        if let NodeKind::ExclusiveGateway { default_flow: Some(default) } = &node.kind {
            if flow_by_id[default.as_str()].source != node.id {
                diags.push(Diagnostic::error(
                    BadCondition,
                    &node.id,
                    format!("default flow `{default}` is not an outgoing flow of this gateway"),
                ));
            }
        }
    }

    if diags.is_empty() {
        Ok(())
    } else {
        sort_diagnostics(&mut diags);
        Err(diags)
    }
}

//! BPMN 2.0 XML to [`ProcessDefinition`].

use std::sync::Arc;

use roxmltree::{Document, Node as XmlNode};
use thiserror::Error;

use super::expr::Expression;
use super::model::{
    Diagnostic, DiagnosticCode, Mapping, Node, NodeKind, ProcessDefinition, SequenceFlow,
    ServiceRef, ServiceTask,
};
use crate::version::VersionRequirement;

pub const BPMN_NS: &str = "http://www.omg.org/spec/BPMN/20100524/MODEL";
/// Namespace of the engine's own extension attributes and elements.
pub const EXT_NS: &str = "urn:flowgraft:ext";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("malformed XML: {0}")]
    XmlMalformed(String),
    #[error("unsupported element `{element}`{}", id.as_ref().map(|i| format!(" (id `{i}`)")).unwrap_or_default())]
    UnsupportedElement { element: String, id: Option<String> },
    #[error("`{element}` is missing attribute `{attribute}`")]
    MissingAttribute { element: String, attribute: String },
    #[error("`{element}` has invalid `{attribute}`: {message}")]
    InvalidAttribute {
        element: String,
        attribute: String,
        message: String,
    },
    #[error("process violates structural invariants: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvariantViolation(Vec<Diagnostic>),
}

impl ParseError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            Self::InvariantViolation(d) => d,
            _ => &[],
        }
    }
}

/// Parses a BPMN document holding exactly one executable process.
pub fn parse_bpmn(document: &[u8]) -> Result<ProcessDefinition, ParseError> {
    let text = std::str::from_utf8(document)
        .map_err(|e| ParseError::XmlMalformed(format!("document is not UTF-8: {e}")))?;
    let doc = Document::parse(text).map_err(|e| ParseError::XmlMalformed(e.to_string()))?;
    let root = doc.root_element();
    if !is_bpmn(root, "definitions") {
        return Err(unsupported(root));
    }

    let mut process = None;
    for child in root.children().filter(XmlNode::is_element) {
        if !in_bpmn_ns(child) {
            continue;
        }
        match child.tag_name().name() {
            "process" if process.is_none() => process = Some(child),
            "documentation" | "extensionElements" => {}
            _ => return Err(unsupported(child)),
        }
    }
    let process = process.ok_or_else(|| ParseError::MissingAttribute {
        element: "definitions".into(),
        attribute: "process".into(),
    })?;
    let process_id = required(process, "id")?.to_string();
    let name = process.attribute("name").unwrap_or(&process_id).to_string();

    let mut nodes = Vec::new();
    let mut flows = Vec::new();
    for child in process.children().filter(XmlNode::is_element) {
        if !in_bpmn_ns(child) {
            continue;
        }
        match child.tag_name().name() {
            "startEvent" => nodes.push(simple_node(child, NodeKind::StartEvent)?),
            "endEvent" => nodes.push(simple_node(child, NodeKind::EndEvent)?),
            "parallelGateway" => nodes.push(simple_node(child, NodeKind::ParallelGateway)?),
            "exclusiveGateway" => {
                let default_flow = child.attribute("default").map(str::to_string);
                nodes.push(simple_node(child, NodeKind::ExclusiveGateway { default_flow })?);
            }
            "serviceTask" => nodes.push(service_task(child)?),
            "sequenceFlow" => flows.push(sequence_flow(child)?),
            "documentation" | "extensionElements" | "textAnnotation" | "association" => {}
            _ => return Err(unsupported(child)),
        }
    }

    ProcessDefinition::from_parts(process_id, name, nodes, flows, Arc::from(document))
        .map_err(ParseError::InvariantViolation)
}

fn is_bpmn(node: XmlNode<'_, '_>, local: &str) -> bool {
    in_bpmn_ns(node) && node.tag_name().name() == local
}

fn in_bpmn_ns(node: XmlNode<'_, '_>) -> bool {
    node.tag_name().namespace() == Some(BPMN_NS)
}

fn unsupported(node: XmlNode<'_, '_>) -> ParseError {
    ParseError::UnsupportedElement {
        element: node.tag_name().name().to_string(),
        id: node.attribute("id").map(str::to_string),
    }
}

fn required<'a>(node: XmlNode<'a, '_>, attribute: &str) -> Result<&'a str, ParseError> {
    match node.attribute(attribute) {
        Some(value) if !value.trim().is_empty() => Ok(value),
        _ => Err(ParseError::MissingAttribute {
            element: node.tag_name().name().to_string(),
            attribute: attribute.to_string(),
        }),
    }
}

fn ext_attribute<'a>(node: XmlNode<'a, '_>, local: &str) -> Option<&'a str> {
    node.attribute((EXT_NS, local))
}

/// Rejects BPMN-namespace children that carry semantics outside the
/// supported subset (event definitions, loop markers, data associations).
fn check_children(node: XmlNode<'_, '_>) -> Result<(), ParseError> {
    for child in node.children().filter(XmlNode::is_element) {
        if in_bpmn_ns(child)
            && !matches!(
                child.tag_name().name(),
                "documentation" | "extensionElements" | "incoming" | "outgoing"
            )
        {
            return Err(unsupported(child));
        }
    }
    Ok(())
}

fn simple_node(element: XmlNode<'_, '_>, kind: NodeKind) -> Result<Node, ParseError> {
    check_children(element)?;
    Ok(Node {
        id: required(element, "id")?.to_string(),
        name: element.attribute("name").map(str::to_string),
        kind,
    })
}

fn service_task(element: XmlNode<'_, '_>) -> Result<Node, ParseError> {
    check_children(element)?;
    let id = required(element, "id")?.to_string();
    let service_id = ext_attribute(element, "service")
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| ParseError::MissingAttribute {
            element: "serviceTask".into(),
            attribute: "ext:service".into(),
        })?
        .to_string();
    let requirement = match ext_attribute(element, "versionReq") {
        Some(text) => text
            .parse::<VersionRequirement>()
            .map_err(|e| ParseError::InvalidAttribute {
                element: "serviceTask".into(),
                attribute: "ext:versionReq".into(),
                message: e.to_string(),
            })?,
        None => VersionRequirement::Latest,
    };
    let policy = ext_attribute(element, "policy").map(str::to_string);

    let mut input = Vec::new();
    let mut output = Vec::new();
    // Mappings may sit directly under the task or inside extensionElements.
    let holders = std::iter::once(element).chain(
        element
            .children()
            .filter(|c| is_bpmn(*c, "extensionElements")),
    );
    for holder in holders {
        for child in holder.children().filter(XmlNode::is_element) {
            if child.tag_name().namespace() != Some(EXT_NS) {
                continue;
            }
            let list = match child.tag_name().name() {
                "input" => &mut input,
                "output" => &mut output,
                _ => continue,
            };
            list.push(Mapping {
                from: mapping_attr(child, "from")?,
                to: mapping_attr(child, "to")?,
            });
        }
    }

    Ok(Node {
        id,
        name: element.attribute("name").map(str::to_string),
        kind: NodeKind::ServiceTask(ServiceTask {
            service: ServiceRef {
                service_id,
                requirement,
            },
            input,
            output,
            policy,
        }),
    })
}

fn mapping_attr(node: XmlNode<'_, '_>, attribute: &str) -> Result<String, ParseError> {
    node.attribute(attribute)
        .map(|v| v.trim().to_string())
        .ok_or_else(|| ParseError::MissingAttribute {
            element: format!("ext:{}", node.tag_name().name()),
            attribute: attribute.to_string(),
        })
}

fn sequence_flow(element: XmlNode<'_, '_>) -> Result<SequenceFlow, ParseError> {
    let id = required(element, "id")?.to_string();
    let source = required(element, "sourceRef")?.to_string();
    let target = required(element, "targetRef")?.to_string();
    let mut condition = None;
    for child in element.children().filter(XmlNode::is_element) {
        if !in_bpmn_ns(child) {
            continue;
        }
        match child.tag_name().name() {
            "conditionExpression" => {
                let text: String = child
                    .children()
                    .filter_map(|c| c.text())
                    .collect::<Vec<_>>()
                    .concat();
                let parsed = Expression::parse(&text).map_err(|e| {
                    ParseError::InvariantViolation(vec![Diagnostic::error(
                        DiagnosticCode::BadCondition,
                        &id,
                        format!("condition `{}` does not parse: {e}", text.trim()),
                    )])
                })?;
                condition = Some(parsed);
            }
            "documentation" | "extensionElements" => {}
            _ => return Err(unsupported(child)),
        }
    }
    Ok(SequenceFlow {
        id,
        name: element
            .attribute("name")
            .map(str::to_string)
            .filter(|n| !n.trim().is_empty()),
        source,
        target,
        condition,
    })
}

//! BPMN 2.0 documents: parsing, the executable process model, condition
//! expressions and static analysis.
//!
//! The supported subset is start and end events, service tasks, exclusive
//! and parallel gateways, and sequence flows with conditions and defaults.
//! Engine-specific settings live in the `urn:flowgraft:ext` namespace:
//!
//! ```xml
//! <serviceTask id="price" ext:service="pricing" ext:versionReq="1.x" ext:policy="fast">
//!   <extensionElements>
//!     <ext:input from="order.id" to="orderId"/>
//!     <ext:output from="total" to="order.total"/>
//!   </extensionElements>
//! </serviceTask>
//! ```

pub mod expr;
mod model;
mod parse;
mod validate;

pub use expr::{EvalError, Expression, ExprParseError};
pub use model::{
    Diagnostic, DiagnosticCode, Mapping, Node, NodeKind, ProcessDefinition, SequenceFlow,
    ServiceRef, ServiceTask, Severity,
};
pub use parse::{parse_bpmn, ParseError, BPMN_NS, EXT_NS};
pub use validate::{check_document, validate, DocumentReport, RegistryView};

#[doc(hidden)]
pub use validate::find_trapping_cycles;

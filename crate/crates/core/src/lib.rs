pub mod api;
pub mod bpmn;
pub mod clock;
pub mod engine;
pub mod invoker;
pub mod journal;
pub mod registry;
pub mod sim;
pub mod vars;
pub mod version;

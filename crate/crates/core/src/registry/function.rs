//! Locally executable functions: the serverless stand-in.
//!
//! A `table` spec builds a response from the request field by field. A
//! `command` spec runs an external program with the canonical JSON request
//! on stdin and reads the JSON response from stdout.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use thiserror::Error;

use crate::vars::{lookup, VariableTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum FunctionSpec {
    Table {
        entries: Vec<TableEntry>,
    },
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

/// One response field. `to` is the response path written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub to: String,
    #[serde(flatten)]
    pub op: TableOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum TableOp {
    Const { value: Value },
    Copy { from: String },
    Mul { from: String, operand: Number },
    Add { from: String, operand: Number },
    Concat { parts: Vec<ConcatPart> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConcatPart {
    From { from: String },
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FunctionError {
    #[error("request has no value at `{0}`")]
    MissingInput(String),
    #[error("`{path}` is not a {expected}")]
    WrongType { path: String, expected: &'static str },
    #[error("arithmetic overflow at `{0}`")]
    Overflow(String),
    #[error("command failed: {0}")]
    Command(String),
}

impl FunctionSpec {
    /// Structural checks applied at registration.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Self::Table { entries } => {
                if entries.is_empty() {
                    return Err("table has no entries".into());
                }
                for entry in entries {
                    if entry.to.trim().is_empty() {
                        return Err("table entry with empty `to`".into());
                    }
                }
                Ok(())
            }
            Self::Command { program, .. } => {
                if program.trim().is_empty() {
                    Err("command has no program".into())
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Evaluates a table spec. Command specs are run by the invoker.
    pub fn apply_table(&self, request: &Value) -> Result<VariableTree, FunctionError> {
        let Self::Table { entries } = self else {
            return Err(FunctionError::Command("not a table function".into()));
        };
        let mut response = VariableTree::new();
        for entry in entries {
            let value = match &entry.op {
                TableOp::Const { value } => value.clone(),
                TableOp::Copy { from } => input(request, from)?.clone(),
                TableOp::Mul { from, operand } => arith(input(request, from)?, operand, from, Arith::Mul)?,
                TableOp::Add { from, operand } => arith(input(request, from)?, operand, from, Arith::Add)?,
                TableOp::Concat { parts } => {
                    let mut text = String::new();
                    for part in parts {
                        match part {
                            ConcatPart::Text(t) => text.push_str(t),
                            ConcatPart::From { from } => match input(request, from)? {
                                Value::String(s) => text.push_str(s),
                                other => text.push_str(&other.to_string()),
                            },
                        }
                    }
                    Value::String(text)
                }
            };
            response.set_path(&entry.to, value);
        }
        Ok(response)
    }
}

fn input<'a>(request: &'a Value, path: &str) -> Result<&'a Value, FunctionError> {
    lookup(request, path).ok_or_else(|| FunctionError::MissingInput(path.to_string()))
}

#[derive(Clone, Copy)]
enum Arith {
    Mul,
    Add,
}

/// Integer arithmetic stays integral; anything else goes through f64.
fn arith(value: &Value, operand: &Number, path: &str, op: Arith) -> Result<Value, FunctionError> {
    let Value::Number(n) = value else {
        return Err(FunctionError::WrongType {
            path: path.to_string(),
            expected: "number",
        });
    };
    if let (Some(a), Some(b)) = (n.as_i64(), operand.as_i64()) {
        let result = match op {
            Arith::Mul => a.checked_mul(b),
            Arith::Add => a.checked_add(b),
        };
        return result
            .map(Value::from)
            .ok_or_else(|| FunctionError::Overflow(path.to_string()));
    }
    let (a, b) = (n.as_f64().unwrap_or(f64::NAN), operand.as_f64().unwrap_or(f64::NAN));
    let result = match op {
        Arith::Mul => a * b,
        Arith::Add => a + b,
    };
    Number::from_f64(result)
        .map(Value::Number)
        .ok_or_else(|| FunctionError::Overflow(path.to_string()))
}

//! Append-only execution journal.
//!
//! The on-disk form is newline-delimited JSON: one header line followed by
//! one canonical (sorted-key) record per event, LF terminated.

mod event;
mod lint;
mod storage;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::Value;
use thiserror::Error;

use crate::clock::Clock;

pub use event::{EventBody, EventKind, ExecutionEvent, VarUpdate};
pub use lint::{lint_lifecycle, LifecycleViolation};
pub use storage::{CapacityLimited, FileStorage, MemoryStorage, Storage};

pub const FORMAT_NAME: &str = "flowgraft-journal";
pub const FORMAT_VERSION: u64 = 1;

pub fn header_line() -> String {
    format!("{{\"format\":\"{FORMAT_NAME}\",\"version\":{FORMAT_VERSION}}}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JournalError {
    #[error("journal I/O failure: {0}")]
    IoFailure(String),
    #[error("journal corrupt at seq {seq} (line {line}): {message}")]
    Corrupt { seq: u64, line: usize, message: String },
}

/// When appended records reach stable storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// Flush and sync after every event.
    FlushEach,
    /// Flush once `max_events` are pending or `max_delay_ms` has passed
    /// since the last flush, whichever comes first.
    Batch { max_events: usize, max_delay_ms: u64 },
}

struct Writer {
    storage: Box<dyn Storage>,
    next_seq: u64,
    pending: usize,
    last_flush_ms: u64,
}

/// Single-writer journal. Appends are serialized; an in-memory copy of the
/// event list serves readers without touching storage.
pub struct Journal {
    writer: Mutex<Writer>,
    events: RwLock<Vec<ExecutionEvent>>,
    clock: Arc<dyn Clock>,
    durability: Durability,
    failed: AtomicBool,
}

impl Journal {
    /// Opens a journal over `storage`, writing the header when the storage
    /// is empty and loading existing records otherwise. Any corruption is
    /// an error.
    pub fn open(storage: impl Storage + 'static, clock: Arc<dyn Clock>) -> Result<Self, JournalError> {
        Self::open_with(Box::new(storage), clock, Durability::FlushEach, false)
    }

    /// Like [`Journal::open`], but a damaged tail (a torn final record) is
    /// cut off instead of failing.
    pub fn open_repairing(
        storage: impl Storage + 'static,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, JournalError> {
        Self::open_with(Box::new(storage), clock, Durability::FlushEach, true)
    }

    pub fn open_with(
        mut storage: Box<dyn Storage>,
        clock: Arc<dyn Clock>,
        durability: Durability,
        repair_tail: bool,
    ) -> Result<Self, JournalError> {
        let bytes = storage.read_all().map_err(io_err)?;
        let events = if bytes.is_empty() {
            storage.append(header_line().as_bytes()).map_err(io_err)?;
            storage.append(b"\n").map_err(io_err)?;
            storage.flush().map_err(io_err)?;
            Vec::new()
        } else {
            let parsed = parse_records(&bytes);
            match parsed.error {
                None => parsed.events,
                Some(_) if repair_tail && parsed.valid_len > 0 => {
                    tracing::warn!(kept = parsed.events.len(), "truncating damaged journal tail");
                    storage.truncate(parsed.valid_len as u64).map_err(io_err)?;
                    parsed.events
                }
                Some(err) => return Err(err),
            }
        };
        let next_seq = events.last().map(|e| e.seq + 1).unwrap_or(1);
        let now = clock.now_ms();
        Ok(Self {
            writer: Mutex::new(Writer {
                storage,
                next_seq,
                pending: 0,
                last_flush_ms: now,
            }),
            events: RwLock::new(events),
            clock,
            durability,
            failed: AtomicBool::new(false),
        })
    }

    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self::open(MemoryStorage::new(), clock).expect("empty memory journal opens")
    }

    /// Assigns the next seq and the current time, writes the record, and
    /// returns the stored event. After the first storage failure every
    /// later append fails too.
    pub fn append(
        &self,
        instance_id: Option<&str>,
        body: EventBody,
    ) -> Result<ExecutionEvent, JournalError> {
        let mut writer = self.writer.lock().unwrap();
        if self.failed.load(Ordering::SeqCst) {
            return Err(JournalError::IoFailure(
                "journal is unusable after an earlier write failure".into(),
            ));
        }
        let event = ExecutionEvent {
            seq: writer.next_seq,
            timestamp: self.clock.now_ms(),
            instance_id: instance_id.map(str::to_string),
            body,
        };
        let mut line = event.to_line();
        line.push('\n');
        let write = writer.storage.append(line.as_bytes()).and_then(|()| {
            writer.pending += 1;
            let due = match self.durability {
                Durability::FlushEach => true,
                Durability::Batch {
                    max_events,
                    max_delay_ms,
                } => {
                    writer.pending >= max_events
                        || event.timestamp.saturating_sub(writer.last_flush_ms) >= max_delay_ms
                }
            };
            if due {
                writer.storage.flush()?;
                writer.pending = 0;
                writer.last_flush_ms = event.timestamp;
            }
            Ok(())
        });
        if let Err(e) = write {
            self.failed.store(true, Ordering::SeqCst);
            return Err(io_err(e));
        }
        writer.next_seq += 1;
        self.events.write().unwrap().push(event.clone());
        Ok(event)
    }

    pub fn flush(&self) -> Result<(), JournalError> {
        let mut writer = self.writer.lock().unwrap();
        writer.storage.flush().map_err(io_err)?;
        writer.pending = 0;
        Ok(())
    }

    /// Refuses every later append, as if the process had died here.
    pub fn seal(&self) {
        let _writer = self.writer.lock().unwrap();
        self.failed.store(true, Ordering::SeqCst);
    }

    pub fn is_failed(&self) -> bool {
        self.failed.load(Ordering::SeqCst)
    }

    /// Seq of the most recent record, 0 when empty.
    pub fn last_seq(&self) -> u64 {
        self.writer.lock().unwrap().next_seq - 1
    }

    /// All events held in memory, in seq order.
    pub fn events(&self) -> Vec<ExecutionEvent> {
        self.events.read().unwrap().clone()
    }

    /// Events attached to one instance, in seq order.
    pub fn instance_events(&self, instance_id: &str) -> Vec<ExecutionEvent> {
        self.events
            .read()
            .unwrap()
            .iter()
            .filter(|e| e.instance_id.as_deref() == Some(instance_id))
            .cloned()
            .collect()
    }

    /// Re-reads storage. With a filter, returns that instance's events plus
    /// the registry events needed to resolve it.
    pub fn replay(&self, filter: Option<&str>) -> Result<Vec<ExecutionEvent>, JournalError> {
        let bytes = {
            let mut writer = self.writer.lock().unwrap();
            writer.storage.flush().map_err(io_err)?;
            writer.storage.read_all().map_err(io_err)?
        };
        let events = replay_bytes(&bytes)?;
        Ok(match filter {
            None => events,
            Some(id) => filter_for_instance(events, id),
        })
    }
}

fn io_err(e: std::io::Error) -> JournalError {
    JournalError::IoFailure(e.to_string())
}

/// Result of reading journal bytes as far as they are valid.
#[derive(Debug, Clone)]
pub struct ParsedJournal {
    pub events: Vec<ExecutionEvent>,
    /// Byte length of the valid prefix (header plus good records).
    pub valid_len: usize,
    pub error: Option<JournalError>,
}

/// Strict replay: any bad record is an error.
pub fn replay_bytes(bytes: &[u8]) -> Result<Vec<ExecutionEvent>, JournalError> {
    let parsed = parse_records(bytes);
    match parsed.error {
        Some(err) => Err(err),
        None => Ok(parsed.events),
    }
}

/// Recovering replay: returns every record before the first bad one along
/// with the error, if any.
pub fn parse_records(bytes: &[u8]) -> ParsedJournal {
    let mut events: Vec<ExecutionEvent> = Vec::new();
    let mut offset = 0;
    let mut valid_len = 0;
    let mut line_no = 0;
    let corrupt = |events: &[ExecutionEvent], line: usize, text: &[u8], message: String| {
        let claimed = serde_json::from_slice::<Value>(text)
            .ok()
            .and_then(|v| v.get("seq").and_then(Value::as_u64));
        let seq = claimed.unwrap_or_else(|| events.last().map(|e| e.seq + 1).unwrap_or(1));
        JournalError::Corrupt { seq, line, message }
    };
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let (text, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(end) => (&rest[..end], true),
            None => (rest, false),
        };
        if !terminated {
            let error = corrupt(&events, line_no, text, "truncated record".into());
            return ParsedJournal { events, valid_len, error: Some(error) };
        }
        if line_no == 1 {
            let ok = serde_json::from_slice::<Value>(text).ok().is_some_and(|v| {
                v.get("format").and_then(Value::as_str) == Some(FORMAT_NAME)
                    && v.get("version").and_then(Value::as_u64) == Some(FORMAT_VERSION)
            });
            if !ok {
                let error = JournalError::Corrupt {
                    seq: 0,
                    line: 1,
                    message: "missing or unknown journal header".into(),
                };
                return ParsedJournal { events, valid_len, error: Some(error) };
            }
        } else {
            match serde_json::from_slice::<ExecutionEvent>(text) {
                Ok(event) => {
                    if let Some(prev) = events.last() {
                        if event.seq <= prev.seq {
                            let error = JournalError::Corrupt {
                                seq: event.seq,
                                line: line_no,
                                message: format!("seq {} does not follow {}", event.seq, prev.seq),
                            };
                            return ParsedJournal { events, valid_len, error: Some(error) };
                        }
                    }
                    events.push(event);
                }
                Err(e) => {
                    let error = corrupt(&events, line_no, text, e.to_string());
                    return ParsedJournal { events, valid_len, error: Some(error) };
                }
            }
        }
        offset += text.len() + 1;
        valid_len = offset;
    }
    ParsedJournal { events, valid_len, error: None }
}

/// Instance events plus the deployment, service and function records the
/// instance resolved against.
pub fn filter_for_instance(events: Vec<ExecutionEvent>, instance_id: &str) -> Vec<ExecutionEvent> {
    let started = events.iter().find_map(|e| match &e.body {
        EventBody::InstanceStarted {
            definition_id,
            definition_version,
            resolved_services,
            ..
        } if e.instance_id.as_deref() == Some(instance_id) => {
            Some((definition_id.clone(), definition_version.clone(), resolved_services.clone()))
        }
        _ => None,
    });
    let Some((def_id, def_version, services)) = started else {
        return Vec::new();
    };
    let service_keys: BTreeSet<(String, crate::version::Version)> = services.into_iter().collect();
    let functions: BTreeSet<String> = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ServiceRegistered { registration }
                if service_keys.contains(&(registration.service_id.clone(), registration.version.clone())) =>
            {
                registration.target.function_ref().map(str::to_string)
            }
            _ => None,
        })
        .collect();
    events
        .into_iter()
        .filter(|e| match &e.body {
            _ if e.instance_id.as_deref() == Some(instance_id) => true,
            EventBody::DeploymentRecorded { definition_id, version, .. }
            | EventBody::WorkflowRetired { definition_id, version } => {
                *definition_id == def_id && *version == def_version
            }
            EventBody::ServiceRegistered { registration } => service_keys
                .contains(&(registration.service_id.clone(), registration.version.clone())),
            EventBody::FunctionRegistered { function_ref, .. } => functions.contains(function_ref),
            _ => false,
        })
        .collect()
}

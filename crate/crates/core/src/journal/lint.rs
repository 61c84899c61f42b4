use std::collections::BTreeMap;

use super::event::{EventKind, ExecutionEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LifecycleViolation {
    pub instance_id: String,
    pub seq: u64,
    pub message: String,
}

/// Checks that every instance's events read `InstanceStarted`, then any
/// number of progress events, then at most one terminal event with nothing
/// after it. Pass `require_terminal` for journals of runs that finished.
pub fn lint_lifecycle(events: &[ExecutionEvent], require_terminal: bool) -> Vec<LifecycleViolation> {
    #[derive(PartialEq)]
    enum State {
        Open,
        Closed,
    }
    let mut states: BTreeMap<&str, (State, u64)> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut last_seq = 0;
    for event in events {
        if event.seq <= last_seq {
            violations.push(LifecycleViolation {
                instance_id: event.instance_id.clone().unwrap_or_default(),
                seq: event.seq,
                message: format!("seq {} does not follow {last_seq}", event.seq),
            });
        }
        last_seq = event.seq;
        let Some(id) = event.instance_id.as_deref() else { continue };
        let kind = event.kind();
        let violation = |message: String| LifecycleViolation {
            instance_id: id.to_string(),
            seq: event.seq,
            message,
        };
        match (states.get(id).map(|(s, _)| s), kind) {
            (None, EventKind::InstanceStarted) => {
                states.insert(id, (State::Open, event.seq));
            }
            (None, other) => violations.push(violation(format!("{other} before InstanceStarted"))),
            (Some(State::Open), EventKind::InstanceStarted) => {
                violations.push(violation("second InstanceStarted".into()))
            }
            (Some(State::Open), k) if k.is_terminal() => {
                states.insert(id, (State::Closed, event.seq));
            }
            (Some(State::Open), _) => {}
            (Some(State::Closed), other) => {
                violations.push(violation(format!("{other} after terminal event")))
            }
        }
    }
    if require_terminal {
        for (id, (state, seq)) in &states {
            if *state == State::Open {
                violations.push(LifecycleViolation {
                    instance_id: id.to_string(),
                    seq: *seq,
                    message: "instance never reached a terminal event".into(),
                });
            }
        }
    }
    violations
}

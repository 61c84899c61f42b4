use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::policy::BreakerConfig;
use crate::registry::ServiceKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all_fields = "camelCase")]
pub enum CircuitState {
    Closed { consecutive_failures: u32 },
    Open { reopen_at: u64 },
    HalfOpen { probes_remaining: u32 },
}

impl Default for CircuitState {
    fn default() -> Self {
        Self::Closed {
            consecutive_failures: 0,
        }
    }
}

/// A change that is worth journaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Opened { reopen_at: u64 },
    Closed,
}

/// Three-state breaker for one service version.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CircuitBreaker {
    state: CircuitState,
}

impl CircuitBreaker {
    pub fn with_state(state: CircuitState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> CircuitState {
        self.state
    }

    /// Decides whether a call may go out now. An expired Open circuit moves
    /// to HalfOpen here and the call becomes a probe.
    pub fn admit(&mut self, config: &BreakerConfig, now: u64) -> bool {
        match self.state {
            CircuitState::Closed { .. } => true,
            CircuitState::Open { reopen_at } if now < reopen_at => false,
            CircuitState::Open { .. } => {
                self.state = CircuitState::HalfOpen {
                    probes_remaining: config.half_open_probes.saturating_sub(1),
                };
                true
            }
            CircuitState::HalfOpen { probes_remaining: 0 } => false,
            CircuitState::HalfOpen { probes_remaining } => {
                self.state = CircuitState::HalfOpen {
                    probes_remaining: probes_remaining - 1,
                };
                true
            }
        }
    }

    /// Returns an admitted probe slot that was never used.
    pub fn release(&mut self, config: &BreakerConfig) {
        if let CircuitState::HalfOpen { probes_remaining } = self.state {
            self.state = CircuitState::HalfOpen {
                probes_remaining: (probes_remaining + 1).min(config.half_open_probes),
            };
        }
    }

    /// Feeds one attempt outcome. Outcomes arriving while Open come from
    /// calls admitted before the trip and are ignored.
    pub fn record(&mut self, config: &BreakerConfig, now: u64, success: bool) -> Option<Transition> {
        let open = |now: u64| CircuitState::Open {
            reopen_at: now + config.open_duration_ms,
        };
        match (self.state, success) {
            (CircuitState::Closed { .. }, true) => {
                self.state = CircuitState::default();
                None
            }
            (CircuitState::Closed { consecutive_failures }, false) => {
                let failures = consecutive_failures + 1;
                if failures >= config.failure_threshold {
                    self.state = open(now);
                    Some(Transition::Opened {
                        reopen_at: now + config.open_duration_ms,
                    })
                } else {
                    self.state = CircuitState::Closed {
                        consecutive_failures: failures,
                    };
                    None
                }
            }
            (CircuitState::HalfOpen { .. }, true) => {
                self.state = CircuitState::default();
                Some(Transition::Closed)
            }
            (CircuitState::HalfOpen { .. }, false) => {
                self.state = open(now);
                Some(Transition::Opened {
                    reopen_at: now + config.open_duration_ms,
                })
            }
            (CircuitState::Open { .. }, _) => None,
        }
    }
}

/// One breaker per service version, shared by every instance.
#[derive(Debug, Default)]
pub struct Breakers {
    map: Mutex<HashMap<ServiceKey, CircuitBreaker>>,
}

impl Breakers {
    pub fn admit(&self, key: &ServiceKey, config: &BreakerConfig, now: u64) -> bool {
        self.map
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .admit(config, now)
    }

    pub fn release(&self, key: &ServiceKey, config: &BreakerConfig) {
        if let Some(b) = self.map.lock().unwrap().get_mut(key) {
            b.release(config);
        }
    }

    pub fn record(&self, key: &ServiceKey, config: &BreakerConfig, now: u64, success: bool) -> Option<Transition> {
        self.record_with(key, config, now, success, |_| {})
    }

    /// Like `record`, but runs `on_transition` before the breaker lock is
    /// released so transitions are reported in the order they happened.
    pub fn record_with(
        &self,
        key: &ServiceKey,
        config: &BreakerConfig,
        now: u64,
        success: bool,
        on_transition: impl FnOnce(Transition),
    ) -> Option<Transition> {
        let mut map = self.map.lock().unwrap();
        let transition = map.entry(key.clone()).or_default().record(config, now, success);
        if let Some(t) = transition {
            on_transition(t);
        }
        transition
    }

    pub fn state(&self, key: &ServiceKey) -> Option<CircuitState> {
        self.map.lock().unwrap().get(key).map(CircuitBreaker::state)
    }

    pub fn restore(&self, key: ServiceKey, state: CircuitState) {
        self.map.lock().unwrap().insert(key, CircuitBreaker::with_state(state));
    }

    /// Point-in-time copy of every breaker that has seen traffic.
    pub fn snapshot(&self) -> BTreeMap<ServiceKey, CircuitState> {
        self.map
            .lock()
            .unwrap()
            .iter()
            .map(|(k, b)| (k.clone(), b.state()))
            .collect()
    }
}

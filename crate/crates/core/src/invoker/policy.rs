use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const DEFAULT_POLICY: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Backoff {
    pub initial_ms: u64,
    pub multiplier: f64,
    pub max_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BreakerConfig {
    pub failure_threshold: u32,
    pub open_duration_ms: u64,
    pub half_open_probes: u32,
}

impl Default for BreakerConfig {
    fn default() -> Self {
        Self {
            failure_threshold: 5,
            open_duration_ms: 10_000,
            half_open_probes: 1,
        }
    }
}

/// Timeout, retry and breaker settings for one class of service calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvocationPolicy {
    pub name: String,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff: Backoff,
    pub breaker: BreakerConfig,
}

impl Default for InvocationPolicy {
    fn default() -> Self {
        Self {
            name: DEFAULT_POLICY.to_string(),
            timeout_ms: 2000,
            max_attempts: 3,
            backoff: Backoff {
                initial_ms: 100,
                multiplier: 2.0,
                max_ms: 2000,
            },
            breaker: BreakerConfig::default(),
        }
    }
}

impl InvocationPolicy {
    /// Wait after failed attempt `attempt` (1-based):
    /// `min(initial * multiplier^(attempt-1), max)`, rounded to whole ms.
    pub fn backoff_delay(&self, attempt: u32) -> Duration {
        let exponent = attempt.saturating_sub(1) as i32;
        let raw = self.backoff.initial_ms as f64 * self.backoff.multiplier.powi(exponent);
        let capped = raw.min(self.backoff.max_ms as f64);
        Duration::from_millis(capped.round() as u64)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("timeoutMs", self.timeout_ms),
            ("maxAttempts", self.max_attempts as u64),
            ("backoff.initialMs", self.backoff.initial_ms),
            ("backoff.maxMs", self.backoff.max_ms),
            ("breaker.failureThreshold", self.breaker.failure_threshold as u64),
            ("breaker.openDurationMs", self.breaker.open_duration_ms),
            ("breaker.halfOpenProbes", self.breaker.half_open_probes as u64),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(format!("policy `{}`: {field} must be positive", self.name));
            }
        }
        if !(self.backoff.multiplier >= 1.0) {
            return Err(format!("policy `{}`: backoff.multiplier must be >= 1.0", self.name));
        }
        if self.name.trim().is_empty() {
            return Err("policy name is empty".into());
        }
        Ok(())
    }
}

/// Named policies. The `default` entry always exists.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    policies: BTreeMap<String, InvocationPolicy>,
}

impl Default for PolicySet {
    fn default() -> Self {
        let mut policies = BTreeMap::new();
        policies.insert(DEFAULT_POLICY.to_string(), InvocationPolicy::default());
        Self { policies }
    }
}

impl PolicySet {
    /// Adds or replaces a policy, including `default`.
    pub fn insert(&mut self, policy: InvocationPolicy) -> Result<(), String> {
        policy.check()?;
        self.policies.insert(policy.name.clone(), policy);
        Ok(())
    }

    pub fn get(&self, name: Option<&str>) -> Option<&InvocationPolicy> {
        self.policies.get(name.unwrap_or(DEFAULT_POLICY))
    }

    pub fn iter(&self) -> impl Iterator<Item = &InvocationPolicy> {
        self.policies.values()
    }
}

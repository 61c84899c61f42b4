use std::collections::BTreeMap;
use std::fmt;

use super::{Arrival, Fleet};
use crate::invoker::{INSTANCE_HEADER, TASK_HEADER};

/// A check over one service's arrivals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArrivalPredicate {
    Count(usize),
    /// Every instance id seen at the service arrived exactly this often.
    CountPerInstance(usize),
    /// Arrivals with `from_ms <= timestamp < to_ms`.
    CountInWindow { from_ms: u64, to_ms: u64, count: usize },
    /// Every arrival carried both tracing headers.
    HeadersPresent,
    /// For every instance, each arrival here comes after every arrival of
    /// that instance at the named service.
    After(String),
    All(Vec<ArrivalPredicate>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionDetail {
    pub service_id: String,
    pub predicate: String,
    pub message: String,
}

impl fmt::Display for AssertionDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} failed: {}", self.service_id, self.predicate, self.message)
    }
}

impl std::error::Error for AssertionDetail {}

pub fn assert_arrivals(fleet: &Fleet, service_id: &str, expected: &ArrivalPredicate) -> Result<(), AssertionDetail> {
    let all = fleet.arrivals();
    check(&all, service_id, expected)
}

fn check(all: &[Arrival], service_id: &str, expected: &ArrivalPredicate) -> Result<(), AssertionDetail> {
    let mine: Vec<&Arrival> = all.iter().filter(|a| a.service_id == service_id).collect();
    let fail = |message: String| AssertionDetail {
        service_id: service_id.to_string(),
        predicate: format!("{expected:?}"),
        message,
    };
    match expected {
        ArrivalPredicate::Count(n) if mine.len() == *n => Ok(()),
        ArrivalPredicate::Count(n) => Err(fail(format!("expected {n} arrivals, saw {}", mine.len()))),
        ArrivalPredicate::CountPerInstance(n) => {
            let mut counts: BTreeMap<Option<&str>, usize> = BTreeMap::new();
            for a in &mine {
                *counts.entry(a.instance_id.as_deref()).or_default() += 1;
            }
            match counts.iter().find(|(_, c)| **c != *n) {
                None => Ok(()),
                Some((id, c)) => Err(fail(format!("instance {id:?} arrived {c} times, expected {n}"))),
            }
        }
        ArrivalPredicate::CountInWindow { from_ms, to_ms, count } => {
            let seen = mine
                .iter()
                .filter(|a| a.timestamp >= *from_ms && a.timestamp < *to_ms)
                .count();
            if seen == *count {
                Ok(())
            } else {
                Err(fail(format!("expected {count} arrivals in [{from_ms}, {to_ms}), saw {seen}")))
            }
        }
        ArrivalPredicate::HeadersPresent => match mine.iter().find(|a| a.instance_id.is_none() || a.task_id.is_none()) {
            None => Ok(()),
            Some(a) => Err(fail(format!(
                "arrival {} lacks {INSTANCE_HEADER} or {TASK_HEADER}",
                a.seq
            ))),
        },
        ArrivalPredicate::After(other) => {
            for a in &mine {
                let earlier = all.iter().find(|b| {
                    b.service_id == *other && b.instance_id == a.instance_id && b.seq > a.seq
                });
                if let Some(b) = earlier {
                    return Err(fail(format!(
                        "arrival {} precedes arrival {} at `{other}` for instance {:?}",
                        a.seq, b.seq, a.instance_id
                    )));
                }
            }
            Ok(())
        }
        ArrivalPredicate::All(list) => list.iter().try_for_each(|p| check(all, service_id, p)),
    }
}

/// Checks that, per instance, the first arrival at each listed service
/// follows the list order.
pub fn assert_order(fleet: &Fleet, service_ids: &[&str]) -> Result<(), AssertionDetail> {
    let all = fleet.arrivals();
    let mut by_instance: BTreeMap<Option<String>, Vec<&Arrival>> = BTreeMap::new();
    for a in &all {
        by_instance.entry(a.instance_id.clone()).or_default().push(a);
    }
    for (instance, arrivals) in by_instance {
        let order: Vec<&str> = service_ids
            .iter()
            .copied()
            .filter(|s| arrivals.iter().any(|a| a.service_id == *s))
            .collect();
        let mut seen: Vec<&str> = Vec::new();
        for a in &arrivals {
            if !seen.contains(&a.service_id.as_str()) && service_ids.contains(&a.service_id.as_str()) {
                seen.push(&a.service_id);
            }
        }
        if seen != order || order.len() != service_ids.len() {
            return Err(AssertionDetail {
                service_id: service_ids.join(","),
                predicate: "order".into(),
                message: format!("instance {instance:?} visited {seen:?}"),
            });
        }
    }
    Ok(())
}

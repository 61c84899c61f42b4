use std::sync::Arc;

use flowgraft::clock::{Clock, ManualClock};
use flowgraft::invoker::{
    BreakerConfig, Breakers, CallContext, CircuitState, FailureKind, InvocationPolicy, InvocationResult, Invoker,
    NoopObserver,
};
use flowgraft::journal::Journal;
use flowgraft::registry::{Registry, ServiceKey, ServiceRegistration};
use flowgraft::sim::{virtual_fleet, Behavior, Fleet, SimServiceSpec};
use serde_json::json;

use crate::support::{ensure, must, v, Verdict};

struct Bench {
    invoker: Invoker,
    fleet: Fleet,
    target: ServiceRegistration,
}

fn bench(script: Vec<Behavior>) -> Result<Bench, String> {
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::default());
    let (fleet, transport) = virtual_fleet(vec![SimServiceSpec::new("svc", v("1.0.0"), script)], Arc::clone(&clock))
        .map_err(|e| e.to_string())?;
    let registry = Arc::new(Registry::new(Arc::new(Journal::in_memory(Arc::clone(&clock)))));
    let target = fleet.registrations().remove(0);
    Ok(Bench {
        invoker: Invoker::new(Arc::new(transport), registry, clock),
        fleet,
        target,
    })
}

fn policy(max_attempts: u32) -> InvocationPolicy {
    InvocationPolicy {
        max_attempts,
        timeout_ms: 100,
        breaker: BreakerConfig {
            failure_threshold: 100,
            ..BreakerConfig::default()
        },
        ..InvocationPolicy::default()
    }
}

fn ok() -> Behavior {
    Behavior::Respond {
        body: json!({"ok": true}),
        latency_ms: 0,
    }
}

fn fail(status: u16) -> Behavior {
    Behavior::Fail { status, latency_ms: 0 }
}

type Observed = (u32, Option<FailureKind>, usize);

async fn observe(script: Vec<Behavior>, max_attempts: u32) -> Result<Observed, String> {
    let b = bench(script)?;
    let r = b
        .invoker
        .invoke(&b.target, &json!({}), &policy(max_attempts), &CallContext::default(), &NoopObserver)
        .await
        .map_err(|e| format!("{e:?}"))?;
    let (attempts, kind) = match r {
        InvocationResult::Success { attempts, .. } => (attempts, None),
        InvocationResult::Failure { attempts, kind, .. } => (attempts, Some(kind)),
    };
    Ok((attempts, kind, b.fleet.arrivals().len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ref {
    Closed(u32),
    Open(u64),
    Half(u32),
}

/// Reference three-state breaker. `call` returns whether the call ran.
struct RefBreaker {
    state: Ref,
    threshold: u32,
    open_ms: u64,
    probes: u32,
}

impl RefBreaker {
    fn call(&mut self, now: u64, success: bool) -> bool {
        if let Ref::Open(until) = self.state {
            if now < until {
                return false;
            }
            self.state = Ref::Half(self.probes);
        }
        if let Ref::Half(left) = self.state {
            if left == 0 {
                return false;
            }
            self.state = Ref::Half(left - 1);
        }
        self.state = match (self.state, success) {
            (Ref::Closed(n), false) if n + 1 < self.threshold => Ref::Closed(n + 1),
            (_, false) => Ref::Open(now + self.open_ms),
            (_, true) => Ref::Closed(0),
        };
        true
    }
}

fn as_ref(state: CircuitState) -> Ref {
    match state {
        CircuitState::Closed { consecutive_failures } => Ref::Closed(consecutive_failures),
        CircuitState::Open { reopen_at } => Ref::Open(reopen_at),
        CircuitState::HalfOpen { probes_remaining } => Ref::Half(probes_remaining),
    }
}

/// Every success/failure/wait string up to length 6, for several breaker
/// configurations. Returns the number of strings checked.
fn breaker_traces() -> Result<usize, String> {
    let key = ServiceKey {
        service_id: "k".into(),
        version: v("1.0.0"),
    };
    let mut checked = 0;
    for threshold in 1..=3 {
        for probes in 1..=2 {
            let config = BreakerConfig {
                failure_threshold: threshold,
                open_duration_ms: 50,
                half_open_probes: probes,
            };
            for len in 0..=6u32 {
                for code in 0..3u32.pow(len) {
                    let symbols: Vec<u32> = (0..len).map(|i| code / 3u32.pow(i) % 3).collect();
                    let real = Breakers::default();
                    let mut reference = RefBreaker {
                        state: Ref::Closed(0),
                        threshold,
                        open_ms: 50,
                        probes,
                    };
                    let mut now = 0;
                    for (step, s) in symbols.iter().enumerate() {
                        if *s == 2 {
                            now += 50;
                        } else {
                            let success = *s == 0;
                            let admitted = real.admit(&key, &config, now);
                            if admitted {
                                real.record(&key, &config, now, success);
                            }
                            ensure!(
                                admitted == reference.call(now, success),
                                "trace {symbols:?} step {step}: admission differs"
                            );
                            now += 1;
                        }
                        let state = as_ref(real.state(&key).unwrap_or_default());
                        ensure!(
                            state == reference.state,
                            "trace {symbols:?} step {step}: {state:?} vs reference {:?}",
                            reference.state
                        );
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

pub async fn run() -> Verdict {
    let max = 3;
    let mut rows = 0;
    for k in 0..=5u32 {
        let mut script: Vec<Behavior> = (0..k).map(|_| fail(503)).collect();
        script.push(ok());
        let got = must!(observe(script, max).await);
        let want = if k < max {
            (k + 1, None, (k + 1) as usize)
        } else {
            (max, Some(FailureKind::RemoteError { status_code: 503 }), max as usize)
        };
        ensure!(got == want, "fail x{k} then succeed: got {got:?}, want {want:?}");
        rows += 1;
    }
    let got = must!(observe(vec![Behavior::Hang { duration_ms: 5_000 }], max).await);
    ensure!(
        got == (max, Some(FailureKind::Timeout), max as usize),
        "hang: got {got:?}"
    );
    rows += 1;
    for status in [400, 404, 422] {
        let got = must!(observe(vec![fail(status), ok()], max).await);
        ensure!(
            got == (1, Some(FailureKind::RemoteError { status_code: status }), 1),
            "{status}: got {got:?}"
        );
        rows += 1;
    }
    let traces = breaker_traces()?;
    Ok(format!(
        "{rows} scripted fault rows exact; {traces} breaker traces match the reference machine"
    ))
}

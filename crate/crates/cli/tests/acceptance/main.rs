//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero when any fails.
//!
//! Random generators take their seed from `FLOWGRAFT_ACCEPTANCE_SEED`
//! (default 20240601); the seed is printed so a failure can be replayed.

mod c1_order;
mod c2_gateways;
mod c3_faults;
mod c5_versions;
mod c6_static;
mod c7_recovery;
mod c8_throughput;
mod support;

use std::future::Future;
use std::pin::Pin;
use std::time::{Duration, Instant};

use support::Verdict;

type Check = fn(u64) -> Pin<Box<dyn Future<Output = Verdict> + Send>>;

struct Criterion {
    number: u32,
    title: &'static str,
    limit: Option<Duration>,
    run: Check,
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            number: 1,
            title: "exact-order conformance",
            limit: Some(Duration::from_secs(30)),
            run: |seed| Box::pin(c1_order::run(seed)),
        },
        Criterion {
            number: 2,
            title: "gateway semantics",
            limit: Some(Duration::from_secs(60)),
            run: |seed| Box::pin(c2_gateways::run(seed)),
        },
        Criterion {
            number: 3,
            title: "fault tolerance",
            limit: Some(Duration::from_secs(30)),
            run: |_| Box::pin(c3_faults::run()),
        },
        Criterion {
            number: 4,
            title: "runtime dynamicity",
            limit: None,
            run: |_| Box::pin(c4_dynamicity::run()),
        },
        Criterion {
            number: 5,
            title: "multi-version coexistence",
            limit: None,
            run: |_| Box::pin(c5_versions::run()),
        },
        Criterion {
            number: 6,
            title: "static analysis",
            limit: None,
            run: |_| Box::pin(c6_static::run()),
        },
        Criterion {
            number: 7,
            title: "crash recovery",
            limit: None,
            run: |_| Box::pin(c7_recovery::run()),
        },
        Criterion {
            number: 8,
            title: "throughput sanity",
            limit: Some(Duration::from_secs(10)),
            run: |_| Box::pin(c8_throughput::run()),
        },
    ]
}

fn main() {
    let seed = std::env::var("FLOWGRAFT_ACCEPTANCE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(20240601u64);
    // Only the selected criteria run when numbers are given, e.g. `-- 2 7`.
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime starts");
    println!("acceptance seed {seed}");
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria() {
        if !selected.is_empty() && !selected.contains(&c.number) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = runtime.block_on(async {
            match tokio::spawn((c.run)(seed)).await {
                Ok(v) => v,
                Err(e) => Err(format!("panicked: {e}")),
            }
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed >= limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        let timing = match c.limit {
            Some(limit) => format!("{elapsed:.2?} of {limit:?}"),
            None => format!("{elapsed:.2?}"),
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {}: {detail} [{timing}]", c.number, c.title),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {}: {detail} [{timing}]", c.number, c.title);
            }
        }
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::sync::Arc;
use std::time::Duration;

use flowgraft::clock::{Clock, SystemClock};
use flowgraft::engine::{Engine, InstanceStatus};
use flowgraft::journal::Journal;
use flowgraft::sim::{spawn_fleet, SimServiceSpec};
use flowgraft::vars::VariableTree;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::support::{chain, ensure, invoked, must, v, Verdict};

const RUNS: usize = 50;

/// Random purely sequential workflows over a loopback echo fleet.
pub async fn run(seed: u64) -> Verdict {
    let mut rng = StdRng::seed_from_u64(seed);
    let names: Vec<String> = (0..10).map(|i| format!("S{i}")).collect();
    let fleet = must!(spawn_fleet(names.iter().map(|n| SimServiceSpec::echo(n.as_str(), v("1.0.0"))).collect()).await);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let engine = must!(Engine::builder()
        .journal(Arc::new(Journal::in_memory(Arc::clone(&clock))))
        .clock(clock)
        .build());
    for reg in fleet.registrations() {
        must!(engine.register_service(reg));
    }

    let mut runs = Vec::new();
    for n in 0..RUNS {
        let len = rng.random_range(3..=10);
        let services: Vec<&str> = (0..len).map(|_| names[rng.random_range(0..names.len())].as_str()).collect();
        let id = format!("seq{n}");
        must!(engine.deploy_workflow(chain(&id, &services).as_bytes(), v("1.0.0")));
        let inst = must!(engine.launch(&id, None, VariableTree::from_value(json!({"v0": n}))));
        runs.push((inst.instance_id, services));
    }

    let mut conforming = 0;
    for (id, services) in &runs {
        let done = must!(must!(tokio::time::timeout(Duration::from_secs(20), engine.wait_terminal(id)).await));
        ensure!(done.status == InstanceStatus::Completed, "{id} ended {:?}", done.status);
        let expected: Vec<String> = (0..services.len()).map(|i| format!("t{i}")).collect();
        let journal_order = invoked(&engine.journal().events(), id);
        let arrivals: Vec<(String, String)> = fleet
            .arrivals()
            .into_iter()
            .filter(|a| a.instance_id.as_deref() == Some(id.as_str()))
            .map(|a| (a.service_id, a.task_id.unwrap_or_default()))
            .collect();
        let expected_arrivals: Vec<(String, String)> = services
            .iter()
            .zip(&expected)
            .map(|(s, t)| (s.to_string(), t.clone()))
            .collect();
        ensure!(journal_order == expected, "{id}: journal order {journal_order:?}, document order {expected:?}");
        ensure!(arrivals == expected_arrivals, "{id}: fleet saw {arrivals:?}, expected {expected_arrivals:?}");
        conforming += 1;
    }
    Ok(format!("{conforming}/{RUNS} runs invoked tasks in document order"))
}

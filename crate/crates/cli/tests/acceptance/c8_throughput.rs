use std::sync::Arc;
use std::time::{Duration, Instant};

use flowgraft::clock::{Clock, SystemClock};
use flowgraft::engine::{Engine, InstanceStatus};
use flowgraft::journal::{lint_lifecycle, replay_bytes, FileStorage, Journal};
use flowgraft::sim::{spawn_fleet, SimServiceSpec};
use flowgraft::vars::VariableTree;
use serde_json::json;

use crate::support::{chain, completed, ensure, must, v, Verdict};

const INSTANCES: usize = 100;

pub async fn run() -> Verdict {
    let dir = must!(tempfile::tempdir());
    let path = dir.path().join("throughput.journal");
    let fleet = must!(spawn_fleet(["A", "B", "C"].map(|s| SimServiceSpec::echo(s, v("1.0.0"))).to_vec()).await);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let journal = must!(Journal::open(must!(FileStorage::open(&path)), Arc::clone(&clock)));
    let engine = must!(Engine::builder().journal(Arc::new(journal)).clock(clock).build());
    for reg in fleet.registrations() {
        must!(engine.register_service(reg));
    }
    must!(engine.deploy_workflow(chain("abc", &["A", "B", "C"]).as_bytes(), v("1.0.0")));

    let started = Instant::now();
    let mut ids = Vec::with_capacity(INSTANCES);
    for n in 0..INSTANCES {
        let inst = must!(engine.launch("abc", None, VariableTree::from_value(json!({"v0": n}))));
        ids.push(inst.instance_id);
    }
    for id in &ids {
        let done = must!(must!(tokio::time::timeout(Duration::from_secs(10), engine.wait_terminal(id)).await));
        ensure!(done.status == InstanceStatus::Completed, "{id} ended {:?}", done.status);
        ensure!(done.tokens.is_empty(), "{id} finished holding {} tokens", done.tokens.len());
    }
    let elapsed = started.elapsed();

    let events = engine.journal().events();
    for id in &ids {
        ensure!(completed(&events, id) == ["t0", "t1", "t2"], "{id} completions {:?}", completed(&events, id));
    }
    let lint = lint_lifecycle(&events, true);
    ensure!(lint.is_empty(), "{} journal grammar violations, first {:?}", lint.len(), lint.first());
    let on_disk = must!(replay_bytes(&must!(std::fs::read(&path))));
    ensure!(on_disk == events, "journal file differs from the in-memory record");
    ensure!(
        fleet.arrivals().len() == 3 * INSTANCES,
        "fleet served {} calls",
        fleet.arrivals().len()
    );
    Ok(format!(
        "{INSTANCES} instances Completed in {elapsed:.2?}, 0 lost tokens, 0 grammar violations over {} events",
        events.len()
    ))
}

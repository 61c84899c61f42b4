use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use flowgraft::clock::{Clock, ManualClock, SystemClock};
use flowgraft::engine::{Engine, InstanceStatus, Phase, StepOutcome};
use flowgraft::invoker::InvocationPolicy;
use flowgraft::journal::{FileStorage, Journal};
use flowgraft::sim::{virtual_fleet, Behavior, Fleet, SimServiceSpec};
use flowgraft::vars::VariableTree;

use crate::support::{chain, completed, ensure, invoked, must, v, Verdict};

struct Node {
    engine: Engine,
    _fleet: Fleet,
}

/// An engine over the journal file at `path`; B answers after `b_latency_ms`.
fn boot(path: &Path, clock: Arc<dyn Clock>, b_latency_ms: u64) -> Result<Node, String> {
    let specs = vec![
        SimServiceSpec::echo("A", v("1.0.0")),
        SimServiceSpec::new("B", v("1.0.0"), vec![Behavior::Echo { latency_ms: b_latency_ms }]),
        SimServiceSpec::echo("C", v("1.0.0")),
    ];
    let (fleet, transport) = virtual_fleet(specs, Arc::clone(&clock)).map_err(|e| e.to_string())?;
    let storage = FileStorage::open(path).map_err(|e| e.to_string())?;
    let journal = Arc::new(Journal::open_repairing(storage, Arc::clone(&clock)).map_err(|e| e.to_string())?);
    let fresh = journal.events().is_empty();
    let engine = Engine::builder()
        .journal(journal)
        .clock(clock)
        .transport(Arc::new(transport))
        .policy(InvocationPolicy {
            timeout_ms: 10_000,
            ..InvocationPolicy::default()
        })
        .and_then(|b| b.build())
        .map_err(|e| e.to_string())?;
    if fresh {
        for reg in fleet.registrations() {
            engine.register_service(reg).map_err(|e| e.to_string())?;
        }
        engine
            .deploy_workflow(chain("abc", &["A", "B", "C"]).as_bytes(), v("1.0.0"))
            .map_err(|e| e.to_string())?;
    }
    Ok(Node { engine, _fleet: fleet })
}

/// Restarts on the same file, resumes, and checks the invocation history.
async fn restart_and_finish(
    path: &Path,
    id: &str,
    clock: Arc<dyn Clock>,
    expect_at: (&str, Option<Phase>),
    expect_invoked: &[&str],
) -> Result<(), String> {
    let node = boot(path, clock, 0)?;
    let recovered = node.engine.instance(id).ok_or("instance missing after restart")?;
    ensure!(recovered.status == InstanceStatus::Running, "recovered as {:?}", recovered.status);
    let token = recovered.tokens.first().ok_or("no token after restart")?;
    ensure!(token.node_id == expect_at.0, "token at {} not {}", token.node_id, expect_at.0);
    if let Some(phase) = expect_at.1 {
        ensure!(token.phase == phase, "token phase {:?} not {phase:?}", token.phase);
    }
    let resumed = node.engine.resume();
    ensure!(resumed == [id.to_string()], "resumed {resumed:?}");
    let done = must!(must!(tokio::time::timeout(Duration::from_secs(10), node.engine.wait_terminal(id)).await));
    ensure!(done.status == InstanceStatus::Completed, "ended {:?}", done.status);
    let events = node.engine.journal().events();
    let calls = invoked(&events, id);
    ensure!(calls == expect_invoked, "invoked {calls:?}, expected {expect_invoked:?}");
    ensure!(completed(&events, id) == ["t0", "t1", "t2"], "completions {:?}", completed(&events, id));
    Ok(())
}

async fn before_a(dir: &Path) -> Result<(), String> {
    let path = dir.join("before_a.journal");
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::default());
    let first = boot(&path, Arc::clone(&clock), 0)?;
    let inst = must!(first.engine.start_instance("abc", None, VariableTree::new()));
    first.engine.halt();
    restart_and_finish(&path, &inst.instance_id, clock, ("start", None), &["t0", "t1", "t2"]).await
}

async fn awaiting_b(dir: &Path) -> Result<(), String> {
    let path = dir.join("awaiting_b.journal");
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let first = boot(&path, Arc::clone(&clock), 5_000)?;
    let inst = must!(first.engine.launch("abc", None, VariableTree::new()));
    let id = inst.instance_id.clone();
    let reached = tokio::time::timeout(Duration::from_secs(5), async {
        while !invoked(&first.engine.journal().events(), &id).contains(&"t1".to_string()) {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    })
    .await;
    ensure!(reached.is_ok(), "B was never invoked");
    first.engine.halt();
    ensure!(completed(&first.engine.journal().events(), &id) == ["t0"], "B finished before the crash");
    // B was in flight: it is delivered again, nothing else is.
    restart_and_finish(
        &path,
        &id,
        clock,
        ("t1", Some(Phase::AwaitingService)),
        &["t0", "t1", "t1", "t2"],
    )
    .await
}

async fn after_b(dir: &Path) -> Result<(), String> {
    let path = dir.join("after_b.journal");
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::default());
    let first = boot(&path, Arc::clone(&clock), 0)?;
    let inst = must!(first.engine.start_instance("abc", None, VariableTree::new()));
    let id = inst.instance_id.clone();
    let mut exec = must!(first.engine.execution(&id));
    while !completed(&first.engine.journal().events(), &id).contains(&"t1".to_string()) {
        match must!(exec.step()) {
            StepOutcome::Progressed => {}
            StepOutcome::AwaitingIo => must!(exec.wait_io().await),
            StepOutcome::Finished(s) => return Err(format!("finished early: {s}")),
        }
    }
    first.engine.halt();
    drop(exec);
    restart_and_finish(&path, &id, clock, ("t1", Some(Phase::Departing)), &["t0", "t1", "t2"]).await
}

pub async fn run() -> Verdict {
    let dir = must!(tempfile::tempdir());
    let mut passed = 0;
    for (name, result) in [
        ("before A", before_a(dir.path()).await),
        ("awaiting B", awaiting_b(dir.path()).await),
        ("after B", after_b(dir.path()).await),
    ] {
        result.map_err(|e| format!("{name}: {e}"))?;
        passed += 1;
    }
    Ok(format!(
        "{passed}/3 crash points recovered and completed; only the in-flight task was re-invoked"
    ))
}

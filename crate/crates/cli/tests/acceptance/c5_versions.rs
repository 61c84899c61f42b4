use std::sync::Arc;
use std::time::Duration;

use flowgraft::clock::{Clock, SystemClock};
use flowgraft::engine::{Engine, InstanceStatus, Phase};
use flowgraft::journal::Journal;
use flowgraft::registry::{ServiceRegistration, Target};
use flowgraft::sim::{spawn_fleet, Behavior, SimServiceSpec};
use flowgraft::vars::VariableTree;

use crate::support::{ensure, must, v, Bpmn, Verdict};

/// start -> Slow -> Pay (any 1.x) -> end
fn workflow() -> String {
    let mut doc = Bpmn::default();
    doc.start("start");
    doc.task_req("slow", "Slow", "1.x");
    doc.task_req("pay", "Pay", "1.x");
    doc.end("end");
    doc.flow("f0", "start", "slow");
    doc.flow("f1", "slow", "pay");
    doc.flow("f2", "pay", "end");
    doc.xml("checkout")
}

pub async fn run() -> Verdict {
    let fleet = must!(
        spawn_fleet(vec![
            SimServiceSpec::new("Slow", v("1.0.0"), vec![Behavior::Echo { latency_ms: 400 }]),
            SimServiceSpec::echo("Pay", v("1.0.0")),
            SimServiceSpec::echo("Pay", v("1.1.0")),
        ])
        .await
    );
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let engine = must!(Engine::builder()
        .journal(Arc::new(Journal::in_memory(Arc::clone(&clock))))
        .clock(clock)
        .build());
    let url = |id: &str, ver: &str| fleet.url(id, &v(ver)).expect("fleet member");
    let register = |id: &str, ver: &str| -> Result<(), String> {
        let target = Target::remote_from_url(&url(id, ver)).map_err(|e| e.to_string())?;
        engine
            .register_service(ServiceRegistration::new(id, v(ver), target))
            .map(|_| ())
            .map_err(|e| e.to_string())
    };
    register("Slow", "1.0.0")?;
    register("Pay", "1.0.0")?;
    must!(engine.deploy_workflow(workflow().as_bytes(), v("1.0.0")));

    let old = must!(engine.launch("checkout", None, VariableTree::new()));
    let pinned_before = old.resolved_services.clone();
    ensure!(pinned_before.get("Pay") == Some(&v("1.0.0")), "old instance pinned {pinned_before:?}");
    // Wait until the old instance is inside Slow, then publish the new version.
    for _ in 0..200 {
        let snap = engine.instance(&old.instance_id).expect("instance exists");
        if snap.tokens.iter().any(|t| t.node_id == "slow" && t.phase == Phase::AwaitingService) {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    register("Pay", "1.1.0")?;
    let arrivals_at_publish = fleet.arrivals().len();
    let new = must!(engine.launch("checkout", None, VariableTree::new()));
    ensure!(
        new.resolved_services.get("Pay") == Some(&v("1.1.0")),
        "new instance resolved {:?}",
        new.resolved_services
    );

    let wait = |id: String| {
        let engine = engine.clone();
        async move { tokio::time::timeout(Duration::from_secs(10), engine.wait_terminal(&id)).await }
    };
    let old_done = must!(must!(wait(old.instance_id.clone()).await));
    let new_done = must!(must!(wait(new.instance_id.clone()).await));
    ensure!(old_done.status == InstanceStatus::Completed, "old instance {:?}", old_done.status);
    ensure!(new_done.status == InstanceStatus::Completed, "new instance {:?}", new_done.status);
    ensure!(old_done.resolved_services == pinned_before, "old instance pins changed");

    let pay_calls = |id: &str| -> Vec<(String, usize)> {
        fleet
            .arrivals()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.service_id == "Pay" && a.instance_id.as_deref() == Some(id))
            .map(|(i, a)| (a.version.to_string(), i))
            .collect()
    };
    let old_pay = pay_calls(&old.instance_id);
    let new_pay = pay_calls(&new.instance_id);
    ensure!(
        old_pay.len() == 1 && old_pay[0].0 == "1.0.0" && old_pay[0].1 >= arrivals_at_publish,
        "old instance reached Pay as {old_pay:?} (1.1.0 published after arrival {arrivals_at_publish})"
    );
    ensure!(new_pay.len() == 1 && new_pay[0].0 == "1.1.0", "new instance reached Pay as {new_pay:?}");
    Ok("instance started before 1.1.0 called Pay@1.0.0 after the publish; new instance called Pay@1.1.0; both Completed".into())
}

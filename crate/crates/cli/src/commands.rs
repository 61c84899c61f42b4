use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use flowgraft::api::{CircuitView, DeployResponse, HealthView, StartResponse, WorkflowDetail, WorkflowSummary};
use flowgraft::bpmn::check_document;
use flowgraft::clock::{Clock, SystemClock};
use flowgraft::engine::{Engine, InstanceStatus, ProcessInstance};
use flowgraft::invoker::{CircuitState, InvocationPolicy, PolicySet};
use flowgraft::journal::{ExecutionEvent, FileStorage, Journal};
use flowgraft::registry::{ServiceRegistration, Target};
use flowgraft::sim::{spawn_fleet, FleetConfig};
use serde_json::{json, Value};

use crate::args::{
    FunctionsCmd, InstancesCmd, MonitorCmd, RunArgs, ServeArgs, ServicesCmd, SimArgs, WorkflowsCmd,
};
use crate::client::Client;
use crate::error::{exit, CliError};
use crate::table;

type Outcome = Result<u8, CliError>;

pub struct Ctx {
    pub client: Client,
    pub json: bool,
}

impl Ctx {
    fn print_json(&self, value: &Value) {
        println!("{}", serde_json::to_string_pretty(value).expect("values always serialize"));
    }
}

fn decode<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Server(format!("unexpected response shape: {e}")))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Query-string form of a version; `+` would otherwise decode as a space.
fn query_version(v: &str) -> String {
    v.replace('+', "%2B")
}

pub async fn serve(args: ServeArgs) -> Outcome {
    let runtime = |what: &str, e: &dyn std::fmt::Display| CliError::Runtime(format!("{what}: {e}"));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let storage = FileStorage::open(&args.journal).map_err(|e| runtime(&args.journal.display().to_string(), &e))?;
    let journal = Journal::open_repairing(storage, Arc::clone(&clock))
        .map_err(|e| runtime(&args.journal.display().to_string(), &e))?;
    let mut builder = Engine::builder().journal(Arc::new(journal)).clock(clock);
    if let Some(path) = &args.policies {
        let list: Vec<InvocationPolicy> = serde_json::from_value(read_json(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut set = PolicySet::default();
        for p in list {
            set.insert(p).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        }
        builder = builder.policies(set);
    }
    let engine = builder.build().map_err(|e| runtime("engine", &e))?;
    let resumed = engine.resume();
    let listener = tokio::net::TcpListener::bind(&args.listen)
        .await
        .map_err(|e| runtime(&args.listen, &e))?;
    let addr = listener.local_addr().map_err(|e| runtime(&args.listen, &e))?;
    println!("listening on http://{addr}");
    eprintln!(
        "journal {} at seq {}, resumed {} instance(s)",
        args.journal.display(),
        engine.journal().last_seq(),
        resumed.len()
    );
    let _ = std::io::stdout().flush();
    let result = tokio::select! {
        r = flowgraft::api::serve(engine.clone(), listener) => r.map_err(|e| runtime("server", &e)),
        _ = tokio::signal::ctrl_c() => Ok(()),
    };
    engine.journal().flush().map_err(|e| runtime("journal", &e))?;
    result.map(|_| exit::OK)
}

pub async fn deploy(ctx: &Ctx, file: &Path, version: &str) -> Outcome {
    let body = read_file(file)?;
    let value = ctx
        .client
        .post_raw(&format!("/workflows?version={}", query_version(version)), "application/xml", body)
        .await?;
    if ctx.json {
        ctx.print_json(&value);
        return Ok(exit::OK);
    }
    let resp: DeployResponse = decode(value)?;
    println!("deployed {}@{}", resp.definition_id, resp.version);
    for d in &resp.diagnostics {
        println!("{d}");
    }
    Ok(exit::OK)
}

fn workflow_rows(list: &[WorkflowSummary]) -> String {
    let rows: Vec<Vec<String>> = list
        .iter()
        .map(|w| {
            vec![
                w.definition_id.clone(),
                w.version.to_string(),
                format!("{:?}", w.state),
                w.node_count.to_string(),
                w.name.clone(),
            ]
        })
        .collect();
    table::render(&["ID", "VERSION", "STATE", "NODES", "NAME"], &rows)
}

pub async fn workflows(ctx: &Ctx, cmd: WorkflowsCmd) -> Outcome {
    let value = match &cmd {
        WorkflowsCmd::List => ctx.client.get("/workflows").await?,
        WorkflowsCmd::Show { id, version, .. } => ctx.client.get(&format!("/workflows/{id}/{version}")).await?,
        WorkflowsCmd::Retire { id, version } => ctx.client.delete(&format!("/workflows/{id}/{version}")).await?,
    };
    if ctx.json {
        ctx.print_json(&value);
        return Ok(exit::OK);
    }
    match cmd {
        WorkflowsCmd::List => print!("{}", workflow_rows(&decode::<Vec<WorkflowSummary>>(value)?)),
        WorkflowsCmd::Show { document: true, .. } => print!("{}", decode::<WorkflowDetail>(value)?.document),
        WorkflowsCmd::Show { .. } => print!("{}", workflow_rows(&[decode::<WorkflowDetail>(value)?.summary])),
        WorkflowsCmd::Retire { .. } => {
            let w: WorkflowSummary = decode(value)?;
            println!("retired {}@{}", w.definition_id, w.version);
        }
    }
    Ok(exit::OK)
}

fn describe_target(target: &Target) -> String {
    match target {
        Target::LocalFunction { function_ref } => format!("function:{function_ref}"),
        remote => remote.url().unwrap_or_default(),
    }
}

pub async fn services(ctx: &Ctx, cmd: ServicesCmd) -> Outcome {
    match cmd {
        ServicesCmd::Register {
            id,
            version,
            url,
            function,
        } => {
            let mut body = json!({"serviceId": id, "version": version});
            match (url, function) {
                (Some(url), _) => body["url"] = json!(url),
                (None, Some(f)) => body["target"] = json!({"type": "localFunction", "functionRef": f}),
                (None, None) => return Err(CliError::Input("one of --url or --function is required".into())),
            }
            let value = ctx.client.post_json("/services", &body).await?;
            if ctx.json {
                ctx.print_json(&value);
            } else {
                let reg: ServiceRegistration = decode(value)?;
                println!("registered {}", reg.key());
            }
        }
        ServicesCmd::List => {
            let value = ctx.client.get("/services").await?;
            if ctx.json {
                ctx.print_json(&value);
            } else {
                let list: Vec<ServiceRegistration> = decode(value)?;
                let rows: Vec<Vec<String>> = list
                    .iter()
                    .map(|r| {
                        vec![
                            r.service_id.clone(),
                            r.version.to_string(),
                            format!("{:?}", r.health),
                            describe_target(&r.target),
                        ]
                    })
                    .collect();
                print!("{}", table::render(&["SERVICE", "VERSION", "HEALTH", "TARGET"], &rows));
            }
        }
    }
    Ok(exit::OK)
}

pub async fn functions(ctx: &Ctx, cmd: FunctionsCmd) -> Outcome {
    let FunctionsCmd::Register { function_ref, spec } = cmd;
    let body = json!({"functionRef": function_ref, "spec": read_json(&spec)?});
    let value = ctx.client.post_json("/functions", &body).await?;
    if ctx.json {
        ctx.print_json(&value);
    } else {
        println!("registered function {function_ref}");
    }
    Ok(exit::OK)
}

fn tokens_text(inst: &ProcessInstance) -> String {
    inst.tokens
        .iter()
        .map(|t| format!("{}[{:?}]", t.node_id, t.phase))
        .collect::<Vec<_>>()
        .join(",")
}

fn watch_line(inst: &ProcessInstance) -> String {
    match inst.status {
        InstanceStatus::Running => format!("Running {}", tokens_text(inst)),
        other => format!("{other:?}"),
    }
}

pub async fn run(ctx: &Ctx, args: RunArgs) -> Outcome {
    let vars: Value =
        serde_json::from_str(&args.vars).map_err(|e| CliError::Input(format!("--vars is not JSON: {e}")))?;
    if !vars.is_object() {
        return Err(CliError::Input("--vars must be a JSON object".into()));
    }
    let mut body = json!({"definitionId": args.definition_id, "variables": vars});
    if let Some(v) = &args.version {
        body["version"] = json!(v);
    }
    let value = ctx.client.post_json("/instances", &body).await?;
    let started: StartResponse = decode(value.clone())?;
    if ctx.json && !args.watch {
        ctx.print_json(&value);
    } else if !ctx.json {
        println!("{}", started.instance_id);
    }
    if !args.watch {
        return Ok(exit::OK);
    }
    let path = format!("/instances/{}", started.instance_id);
    let mut last = String::new();
    loop {
        let value = ctx.client.get(&path).await?;
        let inst: ProcessInstance = decode(value.clone())?;
        let line = if ctx.json {
            serde_json::to_string(&value).expect("values always serialize")
        } else {
            watch_line(&inst)
        };
        if line != last {
            println!("{line}");
            let _ = std::io::stdout().flush();
            last = line;
        }
        match inst.status {
            InstanceStatus::Running => tokio::time::sleep(Duration::from_millis(args.interval_ms)).await,
            InstanceStatus::Completed => return Ok(exit::OK),
            other => {
                let detail = inst
                    .fault_detail
                    .map(|f| format!(" at {}: {}", f.node_id, f.error))
                    .unwrap_or_default();
                return Err(CliError::InstanceFailed(format!(
                    "instance {} ended {other:?}{detail}",
                    inst.instance_id
                )));
            }
        }
    }
}

fn show_instance(inst: &ProcessInstance) {
    let services = inst
        .resolved_services
        .iter()
        .map(|(k, v)| format!("{k}@{v}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!("id          {}", inst.instance_id);
    println!("definition  {}@{}", inst.definition_id, inst.definition_version);
    println!("status      {:?}", inst.status);
    println!("tokens      {}", tokens_text(inst));
    println!("services    {services}");
    if let Some(f) = &inst.fault_detail {
        println!("fault       {}: {}", f.node_id, f.error);
    }
    println!(
        "variables   {}",
        serde_json::to_string(&inst.variables).expect("values always serialize")
    );
}

pub async fn instances(ctx: &Ctx, cmd: InstancesCmd) -> Outcome {
    let value = match &cmd {
        InstancesCmd::List => ctx.client.get("/instances").await?,
        InstancesCmd::Show { id } => ctx.client.get(&format!("/instances/{id}")).await?,
        InstancesCmd::Events { id } => ctx.client.get(&format!("/instances/{id}/events")).await?,
        InstancesCmd::Cancel { id } => ctx.client.post_json(&format!("/instances/{id}/cancel"), &json!({})).await?,
    };
    if ctx.json {
        ctx.print_json(&value);
        return Ok(exit::OK);
    }
    match cmd {
        InstancesCmd::List => {
            let list: Vec<ProcessInstance> = decode(value)?;
            let rows: Vec<Vec<String>> = list
                .iter()
                .map(|i| {
                    vec![
                        i.instance_id.clone(),
                        format!("{}@{}", i.definition_id, i.definition_version),
                        format!("{:?}", i.status),
                        tokens_text(i),
                    ]
                })
                .collect();
            print!("{}", table::render(&["ID", "DEFINITION", "STATUS", "TOKENS"], &rows));
        }
        InstancesCmd::Show { .. } => show_instance(&decode(value)?),
        InstancesCmd::Events { .. } => {
            let events: Vec<ExecutionEvent> = decode(value)?;
            let rows: Vec<Vec<String>> = events
                .iter()
                .map(|e| {
                    vec![
                        e.seq.to_string(),
                        e.timestamp.to_string(),
                        e.kind().to_string(),
                        e.body.node_id().unwrap_or("-").to_string(),
                    ]
                })
                .collect();
            print!("{}", table::render(&["SEQ", "TIME", "KIND", "NODE"], &rows));
        }
        InstancesCmd::Cancel { id } => {
            let inst: ProcessInstance = decode(value)?;
            println!("{id} {:?}", inst.status);
        }
    }
    Ok(exit::OK)
}

/// Offline parse and validate. Exit 0 when clean, 2 with diagnostics.
pub fn validate(json_out: bool, file: &Path) -> Outcome {
    let bytes = read_file(file)?;
    let report = check_document(&bytes, None).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
    let diagnostics = report.diagnostics();
    if json_out {
        println!(
            "{}",
            serde_json::to_string_pretty(diagnostics).expect("diagnostics always serialize")
        );
    } else {
        for d in diagnostics {
            println!("{d}");
        }
    }
    Ok(if diagnostics.is_empty() { exit::OK } else { exit::DIAGNOSTICS })
}

fn circuit_detail(state: &CircuitState) -> (String, String) {
    match state {
        CircuitState::Closed { consecutive_failures } => ("Closed".into(), format!("failures={consecutive_failures}")),
        CircuitState::Open { reopen_at } => ("Open".into(), format!("reopenAt={reopen_at}")),
        CircuitState::HalfOpen { probes_remaining } => ("HalfOpen".into(), format!("probes={probes_remaining}")),
    }
}

pub async fn monitor(ctx: &Ctx, cmd: MonitorCmd) -> Outcome {
    match cmd {
        MonitorCmd::Circuits => {
            let value = ctx.client.get("/monitor/circuits").await?;
            if ctx.json {
                ctx.print_json(&value);
                return Ok(exit::OK);
            }
            let list: Vec<CircuitView> = decode(value)?;
            let rows: Vec<Vec<String>> = list
                .iter()
                .map(|c| {
                    let (state, detail) = circuit_detail(&c.state);
                    vec![c.service_id.clone(), c.version.to_string(), state, detail]
                })
                .collect();
            print!("{}", table::render(&["SERVICE", "VERSION", "STATE", "DETAIL"], &rows));
        }
        MonitorCmd::Health => {
            let value = ctx.client.get("/monitor/health").await?;
            if ctx.json {
                ctx.print_json(&value);
                return Ok(exit::OK);
            }
            let h: HealthView = decode(value)?;
            println!("status      {}", h.status);
            println!("pid         {}", h.pid);
            println!("uptime_ms   {}", h.uptime_ms);
            println!("last_seq    {}", h.last_seq);
            println!("journal     {}", if h.journal_failed { "failed" } else { "ok" });
            println!("running     {}", h.instances_running);
        }
    }
    Ok(exit::OK)
}

pub async fn sim(ctx: &Ctx, args: SimArgs) -> Outcome {
    let config = FleetConfig::load(&args.fleet).map_err(|e| CliError::Input(e.to_string()))?;
    let fleet = spawn_fleet(config.services)
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let regs = fleet.registrations();
    if args.register {
        for reg in &regs {
            let body = json!({
                "serviceId": reg.service_id,
                "version": reg.version.to_string(),
                "target": reg.target,
            });
            ctx.client.post_json("/services", &body).await?;
        }
    }
    if ctx.json {
        ctx.print_json(&serde_json::to_value(&regs).expect("registrations always serialize"));
    } else {
        let rows: Vec<Vec<String>> = regs
            .iter()
            .map(|r| vec![r.service_id.clone(), r.version.to_string(), describe_target(&r.target)])
            .collect();
        print!("{}", table::render(&["SERVICE", "VERSION", "URL"], &rows));
    }
    let _ = std::io::stdout().flush();
    tokio::signal::ctrl_c()
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let arrivals = fleet.arrivals();
    eprintln!("{} request(s) served", arrivals.len());
    Ok(exit::OK)
}

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use flowgraft::engine::InstanceStatus;
use flowgraft::journal::{EventBody, ExecutionEvent};
use flowgraft::sim::SimServiceSpec;
use flowgraft::vars::VariableTree;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::support::{ensure, must, rig, v, Bpmn, Verdict};

const CASES: usize = 1000;
const VARS: usize = 3;
/// Oracle exploration stops here; larger cases are regenerated.
const STATE_CAP: usize = 5_000;

#[derive(Debug, Clone)]
enum Block {
    Task,
    Seq(Vec<Block>),
    Par(Vec<Block>),
    /// Conditioned branches in order, then an optional default branch.
    Xor {
        branches: Vec<((usize, i64), Block)>,
        default: Option<Box<Block>>,
    },
}

fn gen_block(rng: &mut StdRng, depth: u32) -> Block {
    if depth == 0 || rng.random_bool(0.3) {
        return Block::Task;
    }
    match rng.random_range(0..3) {
        0 => Block::Seq((0..rng.random_range(2..=3)).map(|_| gen_block(rng, depth - 1)).collect()),
        1 => Block::Par((0..rng.random_range(2..=6)).map(|_| gen_block(rng, depth - 1)).collect()),
        _ => {
            let n = rng.random_range(1..=3);
            let branches = (0..n)
                .map(|_| {
                    let cond = (rng.random_range(0..VARS), rng.random_range(0..3));
                    (cond, gen_block(rng, depth - 1))
                })
                .collect();
            let default = rng.random_bool(0.8).then(|| Box::new(gen_block(rng, depth - 1)));
            if default.is_none() && n == 1 {
                // A split needs two exits.
                let mut branches: Vec<_> = branches;
                branches.push(((rng.random_range(0..VARS), rng.random_range(0..3)), Block::Task));
                return Block::Xor { branches, default };
            }
            Block::Xor { branches, default }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Start,
    End,
    Task,
    Fork,
    Join,
    Split,
    Merge,
}

struct Flow {
    id: String,
    src: usize,
    dst: usize,
    cond: Option<(usize, i64)>,
}

/// The generated process as plain data, shared by the document writer and
/// the oracle.
#[derive(Default)]
struct Graph {
    nodes: Vec<(String, Kind)>,
    flows: Vec<Flow>,
    defaults: BTreeMap<usize, usize>,
}

impl Graph {
    fn node(&mut self, prefix: &str, kind: Kind) -> usize {
        let id = format!("{prefix}{}", self.nodes.len());
        self.nodes.push((id, kind));
        self.nodes.len() - 1
    }

    fn flow(&mut self, src: usize, dst: usize, cond: Option<(usize, i64)>) -> usize {
        self.flows.push(Flow {
            id: format!("f{}", self.flows.len()),
            src,
            dst,
            cond,
        });
        self.flows.len() - 1
    }

    /// Returns (entry, exit) node indices.
    fn emit(&mut self, block: &Block) -> (usize, usize) {
        match block {
            Block::Task => {
                let t = self.node("t", Kind::Task);
                (t, t)
            }
            Block::Seq(parts) => {
                let mut ends: Option<(usize, usize)> = None;
                for p in parts {
                    let (entry, exit) = self.emit(p);
                    ends = Some(match ends {
                        None => (entry, exit),
                        Some((first, prev)) => {
                            self.flow(prev, entry, None);
                            (first, exit)
                        }
                    });
                }
                ends.expect("sequences are non-empty")
            }
            Block::Par(branches) => {
                let fork = self.node("fork", Kind::Fork);
                let join = self.node("join", Kind::Join);
                for b in branches {
                    let (entry, exit) = self.emit(b);
                    self.flow(fork, entry, None);
                    self.flow(exit, join, None);
                }
                (fork, join)
            }
            Block::Xor { branches, default } => {
                let split = self.node("split", Kind::Split);
                let merge = self.node("merge", Kind::Merge);
                for (cond, b) in branches {
                    let (entry, exit) = self.emit(b);
                    self.flow(split, entry, Some(*cond));
                    self.flow(exit, merge, None);
                }
                if let Some(b) = default {
                    let (entry, exit) = self.emit(b);
                    let f = self.flow(split, entry, None);
                    self.defaults.insert(split, f);
                    self.flow(exit, merge, None);
                }
                (split, merge)
            }
        }
    }

    fn build(block: &Block) -> Self {
        let mut g = Graph::default();
        let start = g.node("start", Kind::Start);
        let (entry, exit) = g.emit(block);
        let end = g.node("end", Kind::End);
        g.flow(start, entry, None);
        g.flow(exit, end, None);
        g
    }

    fn xml(&self, process_id: &str) -> String {
        let mut doc = Bpmn::default();
        for (i, (id, kind)) in self.nodes.iter().enumerate() {
            match kind {
                Kind::Start => doc.start(id),
                Kind::End => doc.end(id),
                Kind::Task => doc.task(id, "w"),
                Kind::Fork | Kind::Join => doc.push(format!(r#"<parallelGateway id="{id}"/>"#)),
                Kind::Split => match self.defaults.get(&i) {
                    Some(f) => doc.push(format!(r#"<exclusiveGateway id="{id}" default="{}"/>"#, self.flows[*f].id)),
                    None => doc.push(format!(r#"<exclusiveGateway id="{id}"/>"#)),
                },
                Kind::Merge => doc.push(format!(r#"<exclusiveGateway id="{id}"/>"#)),
            }
        }
        for f in &self.flows {
            let (src, dst) = (&self.nodes[f.src].0, &self.nodes[f.dst].0);
            match f.cond {
                Some((var, value)) => doc.cond(&f.id, src, dst, &format!("v{var} == {value}")),
                None => doc.flow(&f.id, src, dst),
            }
        }
        doc.xml(process_id)
    }

    fn outgoing(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.flows.len()).filter(move |&f| self.flows[f].src == node)
    }

    fn incoming(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.flows.len()).filter(move |&f| self.flows[f].dst == node)
    }

    /// First outgoing condition that holds, in document order, else the default.
    fn choice(&self, split: usize, vars: &[i64]) -> Option<usize> {
        let default = self.defaults.get(&split).copied();
        self.outgoing(split)
            .filter(|f| Some(*f) != default)
            .find(|&f| matches!(self.flows[f].cond, Some((var, value)) if vars[var] == value))
            .or(default)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Outcome {
    Completed,
    /// Tokens remain and none can move; the listed splits had no exit.
    Stuck(BTreeSet<usize>),
}

/// Token on `node`, having arrived by flow `via` (None for the start token).
type Token = (usize, Option<usize>);

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    tokens: Vec<Token>,
    fired: Vec<u8>,
}

/// Explores every interleaving of token moves. Returns each distinct
/// terminal outcome with its per-node firing counts, or None past the cap.
fn oracle(g: &Graph, vars: &[i64]) -> Option<Vec<(Outcome, Vec<u8>)>> {
    let incoming: Vec<Vec<usize>> = (0..g.nodes.len()).map(|n| g.incoming(n).collect()).collect();
    let outgoing: Vec<Vec<usize>> = (0..g.nodes.len()).map(|n| g.outgoing(n).collect()).collect();
    let choices: Vec<Option<usize>> = (0..g.nodes.len()).map(|n| g.choice(n, vars)).collect();
    let start = State {
        tokens: vec![(0, None)],
        fired: vec![0; g.nodes.len()],
    };
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start]);
    let mut terminals: Vec<(Outcome, Vec<u8>)> = Vec::new();
    while let Some(state) = queue.pop_front() {
        let mut successors = Vec::new();
        let mut dead_splits = BTreeSet::new();
        for (i, &(node, via)) in state.tokens.iter().enumerate() {
            let kind = g.nodes[node].1;
            let mut rest = state.tokens.clone();
            let produced: Vec<usize> = match kind {
                Kind::Join => {
                    let needed = &incoming[node];
                    if via != needed.first().copied() {
                        continue;
                    }
                    let mut consumed_all = true;
                    for f in needed {
                        match rest.iter().position(|t| *t == (node, Some(*f))) {
                            Some(p) => {
                                rest.remove(p);
                            }
                            None => consumed_all = false,
                        }
                    }
                    // Fire once per distinct arrival set; only the token on
                    // the first incoming flow triggers it.
                    if !consumed_all {
                        continue;
                    }
                    outgoing[node].clone()
                }
                _ => {
                    rest.remove(i);
                    match kind {
                        Kind::End => Vec::new(),
                        Kind::Fork => outgoing[node].clone(),
                        Kind::Split => match choices[node] {
                            Some(f) => vec![f],
                            None => {
                                dead_splits.insert(node);
                                continue;
                            }
                        },
                        _ => outgoing[node].iter().take(1).copied().collect(),
                    }
                }
            };
            for f in produced {
                rest.push((g.flows[f].dst, Some(f)));
            }
            rest.sort_unstable();
            let mut fired = state.fired.clone();
            fired[node] += 1;
            successors.push(State { tokens: rest, fired });
        }
        if successors.is_empty() {
            let outcome = if state.tokens.is_empty() {
                Outcome::Completed
            } else {
                Outcome::Stuck(dead_splits)
            };
            let entry = (outcome, state.fired.clone());
            if !terminals.contains(&entry) {
                terminals.push(entry);
            }
        }
        for s in successors {
            if seen.insert(s.clone()) {
                if seen.len() > STATE_CAP {
                    return None;
                }
                queue.push_back(s);
            }
        }
    }
    Some(terminals)
}

/// Per-node firing counts as recorded in an instance's events: TaskInvoked
/// for tasks, the transition leaving the node for everything else.
fn engine_firings(g: &Graph, events: &[ExecutionEvent]) -> Vec<u8> {
    let index: BTreeMap<&str, usize> = g.nodes.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let mut fired = vec![0u8; g.nodes.len()];
    for e in events {
        let node = match &e.body {
            EventBody::TaskInvoked { node_id, .. } => node_id,
            EventBody::TokenMoved { node_id, .. } | EventBody::InstanceCompleted { node_id, .. }
                if g.nodes[index[node_id.as_str()]].1 != Kind::Task =>
            {
                node_id
            }
            _ => continue,
        };
        fired[index[node.as_str()]] += 1;
    }
    fired
}

/// Replays token movements by node and checks each transition's shape
/// against the node kind and the expected exclusive choice.
fn check_tokens(g: &Graph, vars: &[i64], events: &[ExecutionEvent]) -> Result<usize, String> {
    let index: BTreeMap<&str, usize> = g.nodes.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let flow_index: BTreeMap<&str, usize> = g.flows.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();
    let mut live: Vec<usize> = Vec::new();
    for e in events {
        match &e.body {
            EventBody::InstanceStarted { start_node, .. } => live.push(index[start_node.as_str()]),
            EventBody::TokenMoved {
                node_id,
                consumed,
                produced,
            } => {
                let node = index[node_id.as_str()];
                let kind = g.nodes[node].1;
                let (want_in, want_out) = match kind {
                    Kind::Join => (g.incoming(node).count(), 1),
                    Kind::Fork => (1, g.outgoing(node).count()),
                    Kind::End => (1, 0),
                    _ => (1, 1),
                };
                if (consumed.len(), produced.len()) != (want_in, want_out) {
                    return Err(format!(
                        "seq {}: {node_id} moved {} -> {}, expected {want_in} -> {want_out}",
                        e.seq,
                        consumed.len(),
                        produced.len()
                    ));
                }
                for c in consumed {
                    let at = index[c.node_id.as_str()];
                    match live.iter().position(|&n| n == at) {
                        Some(p) if at == node => {
                            live.remove(p);
                        }
                        _ => return Err(format!("seq {}: consumed a token not on {node_id}", e.seq)),
                    }
                }
                for p in produced {
                    let flow = p
                        .via
                        .as_deref()
                        .and_then(|f| flow_index.get(f).copied())
                        .ok_or_else(|| format!("seq {}: produced token without a known flow", e.seq))?;
                    if g.flows[flow].src != node || g.nodes[g.flows[flow].dst].0 != p.node_id {
                        return Err(format!("seq {}: token placed off the graph", e.seq));
                    }
                    if kind == Kind::Split && g.choice(node, vars) != Some(flow) {
                        return Err(format!("seq {}: {node_id} took {}, not its first true exit", e.seq, g.flows[flow].id));
                    }
                    live.push(index[p.node_id.as_str()]);
                }
            }
            EventBody::InstanceCompleted { node_id, .. } => {
                if live != [index[node_id.as_str()]] {
                    return Err(format!("seq {}: completed with {} live tokens", e.seq, live.len()));
                }
                live.clear();
            }
            _ => {}
        }
    }
    Ok(live.len())
}

pub async fn run(seed: u64) -> Verdict {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x2);
    let r = rig(vec![SimServiceSpec::echo("w", v("1.0.0"))]);
    let (mut completed, mut faulted, mut regenerated, mut max_branches) = (0, 0, 0, 0);
    let mut case = 0;
    let mut task_firings = 0;
    while case < CASES {
        let block = gen_block(&mut rng, 3);
        let g = Graph::build(&block);
        let vars: Vec<i64> = (0..VARS).map(|_| rng.random_range(0..3)).collect();
        let Some(terminals) = oracle(&g, &vars) else {
            regenerated += 1;
            continue;
        };
        ensure!(terminals.len() == 1, "case {case}: oracle found {} distinct outcomes", terminals.len());
        let (expected, expected_fired) = &terminals[0];
        max_branches = max_branches.max(
            (0..g.nodes.len())
                .filter(|&n| g.nodes[n].1 == Kind::Fork)
                .map(|n| g.outgoing(n).count())
                .max()
                .unwrap_or(0),
        );

        let id = format!("g{case}");
        let xml = g.xml(&id);
        if let Err(e) = r.engine.deploy_workflow(xml.as_bytes(), v("1.0.0")) {
            return Err(format!("case {case}: deploy failed: {e}\n{xml}"));
        }
        let var_tree = VariableTree::from_value(json!({"v0": vars[0], "v1": vars[1], "v2": vars[2]}));
        let inst = must!(r.engine.start_instance(&id, None, var_tree));
        let done = must!(r.engine.run_to_completion(&inst.instance_id).await);
        let events = r.engine.journal().instance_events(&inst.instance_id);
        let fired = engine_firings(&g, &events);
        task_firings += (0..g.nodes.len()).filter(|&n| g.nodes[n].1 == Kind::Task).map(|n| fired[n] as usize).sum::<usize>();
        let left = check_tokens(&g, &vars, &events).map_err(|e| format!("case {case}: {e}\n{xml}"))?;
        for (n, (name, kind)) in g.nodes.iter().enumerate() {
            if *kind == Kind::Join {
                ensure!(fired[n] <= 1, "case {case}: join {name} fired {} times", fired[n]);
            }
        }
        match expected {
            Outcome::Completed => {
                ensure!(
                    done.status == InstanceStatus::Completed,
                    "case {case}: engine {:?}, oracle Completed\n{xml}",
                    done.status
                );
                ensure!(left == 0 && done.tokens.is_empty(), "case {case}: {left} tokens left after completion");
                ensure!(
                    &fired == expected_fired,
                    "case {case}: firings {fired:?}, oracle {expected_fired:?}\n{xml}"
                );
                completed += 1;
            }
            Outcome::Stuck(dead) => {
                ensure!(
                    done.status == InstanceStatus::Faulted,
                    "case {case}: engine {:?}, oracle stuck\n{xml}",
                    done.status
                );
                let at = done.fault_detail.as_ref().map(|f| f.node_id.clone()).unwrap_or_default();
                ensure!(
                    dead.iter().any(|&n| g.nodes[n].0 == at),
                    "case {case}: faulted at `{at}`, oracle dead ends {dead:?}"
                );
                ensure!(
                    fired.iter().zip(expected_fired).all(|(a, b)| a <= b),
                    "case {case}: faulted run fired more than the oracle allows"
                );
                faulted += 1;
            }
        }
        case += 1;
    }
    let arrivals = r.fleet.arrivals().len();
    ensure!(arrivals == task_firings, "fleet served {arrivals} calls for {task_firings} task firings");
    Ok(format!(
        "{CASES} cases, 0 violations ({completed} completed, {faulted} dead-end faults, widest fork {max_branches}, {regenerated} oversized cases redrawn)"
    ))
}

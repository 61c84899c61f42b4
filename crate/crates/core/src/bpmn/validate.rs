//! Static analysis over parsed definitions.

use std::collections::{BTreeSet, HashSet, VecDeque};

use super::model::{sort_diagnostics, Diagnostic, DiagnosticCode, NodeKind, ProcessDefinition};
use super::parse::{parse_bpmn, ParseError};
use crate::version::Version;

/// Services known to a registry, for `UNKNOWN_SERVICE_REF` checks.
pub type RegistryView = BTreeSet<(String, Version)>;

/// Runs every analysis over a definition. The result is sorted by
/// (severity, subject id); an empty list means the definition is clean.
pub fn validate(def: &ProcessDefinition, registry: Option<&RegistryView>) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let reachable = reachable_from_start(def);
    for (i, node) in def.nodes().iter().enumerate() {
        if !reachable[i] {
            diags.push(Diagnostic::error(
                DiagnosticCode::UnreachableNode,
                &node.id,
                format!("{} `{}` cannot be reached from the start event", node.kind.label(), node.id),
            ));
        }
    }

    for cycle in non_terminating_cycles(def) {
        let names: Vec<&str> = cycle.iter().map(|&i| def.nodes()[i].id.as_str()).collect();
        let subject = cycle.iter().min().map(|&i| def.nodes()[i].id.clone()).unwrap_or_default();
        diags.push(Diagnostic::error(
            DiagnosticCode::NonTerminatingCycle,
            subject,
            format!("cycle {} has no exclusive gateway exit", names.join(" -> ")),
        ));
    }

    let node_names: HashSet<&str> = def.nodes().iter().filter_map(|n| n.name.as_deref()).collect();
    for flow in def.flows() {
        let Some(label) = flow.name.as_deref() else { continue };
        // Branch labels ("yes", "approved") on gateway exits are free text.
        let source_is_split = def
            .node(&flow.source)
            .is_some_and(|n| n.kind.is_gateway() && def.is_diverging(&n.id));
        if source_is_split {
            continue;
        }
        if !node_names.contains(label) {
            diags.push(Diagnostic::warning(
                DiagnosticCode::NameMismatch,
                &flow.id,
                format!("flow label `{label}` matches no node name"),
            ));
        }
    }

    if let Some(known) = registry {
        for (node, task) in def.service_tasks() {
            let versions = known
                .iter()
                .filter(|(id, _)| *id == task.service.service_id)
                .map(|(_, v)| v);
            if task.service.requirement.select(versions).is_none() {
                diags.push(Diagnostic::warning(
                    DiagnosticCode::UnknownServiceRef,
                    &node.id,
                    format!(
                        "service `{}` {} is not registered",
                        task.service.service_id, task.service.requirement
                    ),
                ));
            }
        }
    }

    sort_diagnostics(&mut diags);
    diags
}

/// Outcome of checking a raw document offline.
#[derive(Debug, Clone, PartialEq)]
pub enum DocumentReport {
    /// Parsed; diagnostics may still be present.
    Parsed {
        definition: ProcessDefinition,
        diagnostics: Vec<Diagnostic>,
    },
    /// Well-formed BPMN whose structure breaks definition invariants.
    Structural(Vec<Diagnostic>),
}

impl DocumentReport {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            Self::Parsed { diagnostics, .. } => diagnostics,
            Self::Structural(d) => d,
        }
    }
}

/// Parse followed by validate, folding structural invariant violations into
/// the diagnostic list. Only non-structural parse failures are errors.
pub fn check_document(
    document: &[u8],
    registry: Option<&RegistryView>,
) -> Result<DocumentReport, ParseError> {
    match parse_bpmn(document) {
        Ok(definition) => {
            let diagnostics = validate(&definition, registry);
            Ok(DocumentReport::Parsed {
                definition,
                diagnostics,
            })
        }
        Err(ParseError::InvariantViolation(diags)) => Ok(DocumentReport::Structural(diags)),
        Err(other) => Err(other),
    }
}

fn reachable_from_start(def: &ProcessDefinition) -> Vec<bool> {
    let start = def
        .node_index(&def.start_node().id)
        .expect("start node is indexed");
    let mut seen = vec![false; def.nodes().len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(node) = queue.pop_front() {
        for next in def.successor_indices(node) {
            if !seen[next] {
                seen[next] = true;
                queue.push_back(next);
            }
        }
    }
    seen
}

/// Finds, per strongly connected component, one directed cycle on which no
/// diverging exclusive gateway has a flow leaving the cycle. Returned cycles
/// are node index lists in traversal order.
pub(crate) fn non_terminating_cycles(def: &ProcessDefinition) -> Vec<Vec<usize>> {
    let n = def.nodes().len();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut s: Vec<usize> = def.successor_indices(i).collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let splitter: Vec<bool> = def
        .nodes()
        .iter()
        .map(|node| matches!(node.kind, NodeKind::ExclusiveGateway { .. }) && def.is_diverging(&node.id))
        .collect();
    find_trapping_cycles(&succ, &splitter)
}

/// Graph core of the cycle analysis, separated for testing. `splitter[v]`
/// marks nodes that may route a token off a cycle.
pub fn find_trapping_cycles(succ: &[Vec<usize>], splitter: &[bool]) -> Vec<Vec<usize>> {
    let n = succ.len();
    let mut found = Vec::new();
    let all: Vec<bool> = vec![true; n];
    for component in strongly_connected(succ, &all) {
        if !is_cyclic(succ, &component) {
            continue;
        }
        let mut alive = vec![false; n];
        for &v in &component {
            alive[v] = true;
        }
        if let Some(cycle) = search_component(succ, splitter, &mut alive) {
            found.push(cycle);
        }
    }
    found
}

fn is_cyclic(succ: &[Vec<usize>], component: &[usize]) -> bool {
    component.len() > 1 || succ[component[0]].contains(&component[0])
}

/// Prunes splitters that can leave their component, then searches what is
/// left for a cycle whose splitters keep every exit on the cycle.
fn search_component(succ: &[Vec<usize>], splitter: &[bool], alive: &mut [bool]) -> Option<Vec<usize>> {
    loop {
        let components = strongly_connected(succ, alive);
        let mut comp_of = vec![usize::MAX; succ.len()];
        for (c, members) in components.iter().enumerate() {
            for &v in members {
                comp_of[v] = c;
            }
        }
        let mut pruned = false;
        for v in 0..succ.len() {
            if alive[v] && splitter[v] && succ[v].iter().any(|&w| !alive[w] || comp_of[w] != comp_of[v]) {
                alive[v] = false;
                pruned = true;
            }
        }
        if pruned {
            continue;
        }
        for members in components {
            if !is_cyclic(succ, &members) {
                continue;
            }
            if let Some(cycle) = enumerate_for_trap(succ, splitter, &members) {
                return Some(cycle);
            }
        }
        return None;
    }
}

/// Backtracking over elementary cycles of one component; each cycle is
/// rooted at its smallest member.
fn enumerate_for_trap(succ: &[Vec<usize>], splitter: &[bool], members: &[usize]) -> Option<Vec<usize>> {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let member: HashSet<usize> = sorted.iter().copied().collect();

    fn extend(
        root: usize,
        path: &mut Vec<usize>,
        on_path: &mut HashSet<usize>,
        succ: &[Vec<usize>],
        splitter: &[bool],
        member: &HashSet<usize>,
    ) -> Option<Vec<usize>> {
        let last = *path.last().expect("path is never empty");
        for &next in &succ[last] {
            if next < root || !member.contains(&next) {
                continue;
            }
            if next == root {
                let on_cycle: HashSet<usize> = path.iter().copied().collect();
                let traps = path
                    .iter()
                    .filter(|&&v| splitter[v])
                    .all(|&v| succ[v].iter().all(|w| on_cycle.contains(w)));
                if traps {
                    return Some(path.clone());
                }
                continue;
            }
            if on_path.contains(&next) {
                continue;
            }
            path.push(next);
            on_path.insert(next);
            if let Some(cycle) = extend(root, path, on_path, succ, splitter, member) {
                return Some(cycle);
            }
            on_path.remove(&next);
            path.pop();
        }
        None
    }

    for &root in &sorted {
        let mut path = vec![root];
        let mut on_path = HashSet::from([root]);
        if let Some(cycle) = extend(root, &mut path, &mut on_path, succ, splitter, &member) {
            return Some(cycle);
        }
    }
    None
}

/// Iterative Tarjan over the nodes marked alive.
fn strongly_connected(succ: &[Vec<usize>], alive: &[bool]) -> Vec<Vec<usize>> {
    let n = succ.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;

    for root in 0..n {
        if !alive[root] || index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&(v, edge)) = work.last() {
            if let Some(&w) = succ[v].get(edge) {
                work.last_mut().expect("non-empty").1 += 1;
                if !alive[w] {
                    continue;
                }
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    component.sort_unstable();
                    out.push(component);
                }
            }
        }
    }
    out.sort();
    out
}

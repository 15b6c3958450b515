//! Whole-app call graph and capped backward reachability towards first-party code.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigdb::ApiCallSite;
use crate::smali::{package_of, AppIR, InstructionKind, MethodSignature};

pub const DEFAULT_NODE_LIMIT: usize = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CallGraphError {
    #[error("method {0} is not a node of the call graph")]
    UnknownMethod(String),
    #[error("node limit must be at least 1")]
    ZeroNodeLimit,
}

/// Immutable call graph. Nodes are kept in lexicographic signature order so
/// every traversal is independent of how the app was parsed.
#[derive(Debug, Clone)]
pub struct CallGraph {
    nodes: Vec<MethodSignature>,
    index: HashMap<MethodSignature, usize>,
    defined: Vec<bool>,
    forward: Vec<Vec<usize>>,
    reverse: Vec<Vec<usize>>,
}

impl CallGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.forward.iter().map(Vec::len).sum()
    }

    pub fn nodes(&self) -> &[MethodSignature] {
        &self.nodes
    }

    pub fn contains(&self, sig: &MethodSignature) -> bool {
        self.index.contains_key(sig)
    }

    /// False for stub nodes standing in for methods outside the app.
    pub fn is_defined(&self, sig: &MethodSignature) -> bool {
        self.index.get(sig).is_some_and(|&i| self.defined[i])
    }

    pub fn callees(&self, sig: &MethodSignature) -> Vec<&MethodSignature> {
        self.neighbours(&self.forward, sig)
    }

    pub fn callers(&self, sig: &MethodSignature) -> Vec<&MethodSignature> {
        self.neighbours(&self.reverse, sig)
    }

    fn neighbours<'a>(&'a self, adj: &[Vec<usize>], sig: &MethodSignature) -> Vec<&'a MethodSignature> {
        self.index
            .get(sig)
            .map(|&i| adj[i].iter().map(|&j| &self.nodes[j]).collect())
            .unwrap_or_default()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&MethodSignature, &MethodSignature)> {
        self.forward
            .iter()
            .enumerate()
            .flat_map(move |(i, out)| out.iter().map(move |&j| (&self.nodes[i], &self.nodes[j])))
    }

    /// Builds a graph from explicit edges; every endpoint becomes a defined node.
    pub fn from_edges<I>(nodes: I, edges: &[(MethodSignature, MethodSignature)]) -> Self
    where
        I: IntoIterator<Item = MethodSignature>,
    {
        let mut all: BTreeSet<MethodSignature> = nodes.into_iter().collect();
        for (a, b) in edges {
            all.insert(a.clone());
            all.insert(b.clone());
        }
        let defined = all.clone();
        Self::assemble(all, &defined, edges.iter().cloned())
    }

    fn assemble<E>(all: BTreeSet<MethodSignature>, defined: &BTreeSet<MethodSignature>, edges: E) -> Self
    where
        E: IntoIterator<Item = (MethodSignature, MethodSignature)>,
    {
        let nodes: Vec<MethodSignature> = all.into_iter().collect();
        let index: HashMap<MethodSignature, usize> =
            nodes.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut pairs = BTreeSet::new();
        for (a, b) in edges {
            pairs.insert((index[&a], index[&b]));
        }
        let mut forward = vec![Vec::new(); nodes.len()];
        let mut reverse = vec![Vec::new(); nodes.len()];
        for (a, b) in pairs {
            forward[a].push(b);
            reverse[b].push(a);
        }
        for r in &mut reverse {
            r.sort_unstable();
        }
        let defined = nodes.iter().map(|n| defined.contains(n)).collect();
        CallGraph { nodes, index, defined, forward, reverse }
    }
}

/// Transitive subclasses and implementors of each class defined in the app.
fn subtypes(app: &AppIR) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut direct: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for class in app.classes.values() {
        for sup in class.superclass.iter().chain(class.interfaces.iter()) {
            direct.entry(sup.as_str()).or_default().push(class.name.as_str());
        }
    }
    let mut out = BTreeMap::new();
    for &root in direct.keys() {
        let mut seen = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(c) = stack.pop() {
            for &s in direct.get(c).into_iter().flatten() {
                if seen.insert(s) {
                    stack.push(s);
                }
            }
        }
        out.insert(root, seen);
    }
    out
}

pub fn build_call_graph(app: &AppIR, cha: bool) -> CallGraph {
    let defined: BTreeSet<MethodSignature> = app.methods().map(|m| m.signature.clone()).collect();
    let hierarchy = if cha { subtypes(app) } else { BTreeMap::new() };
    let mut all = defined.clone();
    let mut edges = Vec::new();
    for method in app.methods() {
        for ins in &method.instructions {
            let InstructionKind::Invoke { kind, target, .. } = &ins.kind else {
                continue;
            };
            all.insert(target.clone());
            edges.push((method.signature.clone(), target.clone()));
            if !cha || !kind.is_dispatched() {
                continue;
            }
            for sub in hierarchy.get(target.class_name.as_str()).into_iter().flatten() {
                let over = MethodSignature { class_name: sub.to_string(), ..target.clone() };
                if defined.contains(&over) {
                    edges.push((method.signature.clone(), over));
                }
            }
        }
    }
    CallGraph::assemble(all, &defined, edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachabilityResult {
    pub callsite_id: String,
    pub reachable: bool,
    /// First-party method first, the site's containing method last.
    pub evidence_path: Vec<MethodSignature>,
    pub visited_count: usize,
    pub truncated: bool,
}

/// Reverse breadth-first search from `containing` until a method whose
/// package `is_first_party` accepts is dequeued, or `node_limit` nodes were visited.
pub fn backward_reachability<F>(
    graph: &CallGraph,
    containing: &MethodSignature,
    is_first_party: F,
    node_limit: usize,
) -> Result<ReachabilityResult, CallGraphError>
where
    F: Fn(&str) -> bool,
{
    if node_limit == 0 {
        return Err(CallGraphError::ZeroNodeLimit);
    }
    let start = *graph
        .index
        .get(containing)
        .ok_or_else(|| CallGraphError::UnknownMethod(containing.to_smali_ref()))?;
    let n = graph.nodes.len();
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut visited = 0;
    while visited < node_limit {
        let Some(cur) = queue.pop_front() else { break };
        visited += 1;
        if is_first_party(package_of(&graph.nodes[cur].class_name)) {
            let mut path = vec![graph.nodes[cur].clone()];
            let mut at = cur;
            while let Some(p) = pred[at] {
                path.push(graph.nodes[p].clone());
                at = p;
            }
            return Ok(ReachabilityResult {
                callsite_id: String::new(),
                reachable: true,
                evidence_path: path,
                visited_count: visited,
                truncated: false,
            });
        }
        for &caller in &graph.reverse[cur] {
            if !seen[caller] {
                seen[caller] = true;
                pred[caller] = Some(cur);
                queue.push_back(caller);
            }
        }
    }
    Ok(ReachabilityResult {
        callsite_id: String::new(),
        reachable: false,
        evidence_path: Vec::new(),
        visited_count: visited,
        truncated: !queue.is_empty(),
    })
}

/// One query per call site, run in parallel, in site order.
pub fn reach_call_sites<F>(
    graph: &CallGraph,
    sites: &[ApiCallSite],
    is_first_party: F,
    node_limit: usize,
) -> Result<Vec<ReachabilityResult>, CallGraphError>
where
    F: Fn(&str) -> bool + Sync,
{
    sites
        .par_iter()
        .map(|site| {
            backward_reachability(graph, &site.caller, &is_first_party, node_limit).map(|mut r| {
                r.callsite_id = site.callsite_id.clone();
                r
            })
        })
        .collect()
}

//! Directed acyclic graphs over integer-indexed nodes.
//!
//! Nodes are identified by their 0-based index; labels are carried along as
//! metadata only. Parent sets are stored as bitmasks, which limits a graph to
//! 64 nodes.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 64;
/// Largest node count accepted by [`enumerate_dags`].
pub const MAX_ENUMERATION_NODES: usize = 4;

/// Sorted, duplicate-free set of node indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new(mut nodes: Vec<usize>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        NodeSet(nodes)
    }

    pub fn empty() -> Self {
        NodeSet(Vec::new())
    }

    pub fn from_mask(mask: u64) -> Self {
        NodeSet((0..MAX_NODES).filter(|i| mask >> i & 1 == 1).collect())
    }

    pub fn mask(&self) -> u64 {
        self.0.iter().fold(0u64, |m, &i| m | 1 << i)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.0.binary_search(&node).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn without(&self, node: usize) -> NodeSet {
        NodeSet(self.0.iter().copied().filter(|&i| i != node).collect())
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        NodeSet::new(iter.into_iter().collect())
    }
}

impl fmt::Display for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Serialize, Deserialize)]
struct DagRepr {
    n: usize,
    #[serde(default)]
    labels: Vec<String>,
    edges: Vec<[usize; 2]>,
}

/// A labelled directed acyclic graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DagRepr", into = "DagRepr")]
pub struct Dag {
    labels: Vec<String>,
    /// `parents[v]` has bit `u` set iff `u -> v`.
    parents: Vec<u64>,
}

impl TryFrom<DagRepr> for Dag {
    type Error = Error;

    fn try_from(r: DagRepr) -> Result<Self> {
        let labels = if r.labels.is_empty() {
            default_labels(r.n)
        } else if r.labels.len() == r.n {
            r.labels
        } else {
            return Err(Error::Format(format!(
                "{} labels for {} nodes",
                r.labels.len(),
                r.n
            )));
        };
        let edges: Vec<(usize, usize)> = r.edges.iter().map(|e| (e[0], e[1])).collect();
        Dag::with_labels(labels, &edges)
    }
}

impl From<Dag> for DagRepr {
    fn from(d: Dag) -> Self {
        DagRepr {
            n: d.n(),
            edges: d.edges().into_iter().map(|(u, v)| [u, v]).collect(),
            labels: d.labels,
        }
    }
}

pub fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

impl Dag {
    /// Builds a DAG with default labels `X1..Xn`.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Dag::with_labels(default_labels(n), edges)
    }

    pub fn with_labels(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = labels.len();
        if n > MAX_NODES {
            return Err(Error::Capacity(format!("{n} nodes exceeds {MAX_NODES}")));
        }
        let mut parents = vec![0u64; n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Domain(format!("edge ({u},{v}) references unknown node")));
            }
            if u == v {
                return Err(Error::Domain(format!("self-loop on node {u}")));
            }
            if parents[v] >> u & 1 == 1 {
                return Err(Error::Domain(format!("duplicate edge ({u},{v})")));
            }
            parents[v] |= 1 << u;
        }
        let dag = Dag { labels, parents };
        dag.topological_order()?;
        Ok(dag)
    }

    /// Builds from parent bitmasks, checking acyclicity.
    pub fn from_parent_masks(parents: Vec<u64>) -> Result<Self> {
        let n = parents.len();
        let dag = Dag {
            labels: default_labels(n),
            parents,
        };
        if dag.parents.iter().enumerate().any(|(v, &m)| m >> v & 1 == 1 || m >> n != 0) {
            return Err(Error::Domain("invalid parent mask".into()));
        }
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn empty(n: usize) -> Self {
        Dag {
            labels: default_labels(n),
            parents: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.parents.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn set_labels(&mut self, labels: Vec<String>) -> Result<()> {
        if labels.len() != self.n() {
            return Err(Error::Shape(format!("{} labels for {} nodes", labels.len(), self.n())));
        }
        self.labels = labels;
        Ok(())
    }

    pub fn parent_masks(&self) -> &[u64] {
        &self.parents
    }

    pub fn parent_mask(&self, node: usize) -> u64 {
        self.parents[node]
    }

    pub fn parents(&self, node: usize) -> NodeSet {
        NodeSet::from_mask(self.parents[node])
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.parents[v] >> u & 1 == 1
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n() {
            for v in 0..self.n() {
                if self.has_edge(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(|m| m.count_ones() as usize).sum()
    }

    fn children_mask(&self, node: usize) -> u64 {
        self.parents
            .iter()
            .enumerate()
            .filter(|(_, &m)| m >> node & 1 == 1)
            .fold(0u64, |acc, (v, _)| acc | 1 << v)
    }

    /// Kahn's algorithm, always releasing the smallest ready index first.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.n();
        let mut indegree: Vec<u32> = self.parents.iter().map(|m| m.count_ones()).collect();
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
            .filter(|&v| indegree[v] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(u)) = ready.pop() {
            order.push(u);
            for v in 0..n {
                if self.has_edge(u, v) {
                    indegree[v] -= 1;
                    if indegree[v] == 0 {
                        ready.push(std::cmp::Reverse(v));
                    }
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(Error::Cycle)
        }
    }

    /// Deletes every edge pointing into a target node.
    pub fn mutilate(&self, targets: &NodeSet) -> Result<Dag> {
        if let Some(t) = targets.iter().find(|&t| t >= self.n()) {
            return Err(Error::Domain(format!("unknown node {t}")));
        }
        let mut out = self.clone();
        for t in targets.iter() {
            out.parents[t] = 0;
        }
        Ok(out)
    }

    /// Nodes reachable from `from` by a directed path of length >= 1.
    pub fn descendants_mask(&self, from: u64) -> u64 {
        let mut seen = 0u64;
        let mut queue: VecDeque<usize> = NodeSet::from_mask(from).iter().collect();
        while let Some(u) = queue.pop_front() {
            let children = self.children_mask(u) & !seen;
            seen |= children;
            queue.extend(NodeSet::from_mask(children).iter());
        }
        seen
    }

    /// Nodes with a directed path into any node of `to`.
    pub fn ancestors_mask(&self, to: u64) -> u64 {
        let mut seen = 0u64;
        let mut queue: VecDeque<usize> = NodeSet::from_mask(to).iter().collect();
        while let Some(v) = queue.pop_front() {
            let pa = self.parents[v] & !seen;
            seen |= pa;
            queue.extend(NodeSet::from_mask(pa).iter());
        }
        seen
    }

    pub fn has_directed_path(&self, from: usize, to: usize) -> bool {
        self.descendants_mask(1 << from) >> to & 1 == 1
    }

    /// Compact key identifying the edge set, used for keyed seeding.
    pub fn key(&self) -> u64 {
        self.parents
            .iter()
            .enumerate()
            .fold(self.n() as u64, |acc, (v, &m)| crate::rng::keyed_seed(acc, &[v as u64, m]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dag serializes")
    }

    pub fn from_json(s: &str) -> Result<Dag> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Every labelled DAG on `n` nodes, in a deterministic order.
pub fn enumerate_dags(n: usize) -> Result<Vec<Dag>> {
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::Capacity(format!(
            "enumeration supports at most {MAX_ENUMERATION_NODES} nodes, got {n}"
        )));
    }
    // Each node chooses its parent mask among the others; keep acyclic choices.
    let mut out = Vec::new();
    let mut masks = vec![0u64; n];
    fn rec(v: usize, n: usize, masks: &mut Vec<u64>, out: &mut Vec<Dag>) {
        if v == n {
            if let Ok(d) = Dag::from_parent_masks(masks.clone()) {
                out.push(d);
            }
            return;
        }
        let others = ((1u64 << n) - 1) & !(1 << v);
        let mut sub = 0u64;
        loop {
            masks[v] = sub;
            rec(v + 1, n, masks, out);
            if sub == others {
                break;
            }
            sub = (sub.wrapping_sub(others)) & others;
        }
        masks[v] = 0;
    }
    rec(0, n, &mut masks, &mut out);
    Ok(out)
}

/// Five-node benchmark graph used for the showcase simulations.
pub fn five_node_benchmark() -> Dag {
    Dag::new(5, &[(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)]).expect("valid benchmark")
}

/// Four-node benchmark: node 0 is intervened, node 1 is the outcome, node 2
/// mediates and node 3 is a parent of the intervened node.
pub fn four_node_benchmark() -> Dag {
    Dag::new(4, &[(3, 0), (0, 2), (2, 1), (0, 1)]).expect("valid benchmark")
}

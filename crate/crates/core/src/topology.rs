//! Fixed communication graphs.
//!
//! Agents are indexed `0..n`. Neighbor lists never contain the owner itself;
//! the self term is added back at fusion time.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Undirected communication graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommGraph {
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Ring where agent `i` talks to `i-1` and `i+1` (mod n).
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(config(format!("ring topology needs at least 3 agents, got {n}")));
        }
        let neighbors = (0..n)
            .map(|i| {
                let mut v = vec![(i + n - 1) % n, (i + 1) % n];
                v.sort_unstable();
                v
            })
            .collect();
        Ok(Self { neighbors })
    }

    /// Complete graph K_n. `n = 1` gives a single isolated agent.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(config("graph needs at least one agent"));
        }
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Ok(Self { neighbors })
    }

    /// Erdős–Rényi sample repaired into a connected graph.
    ///
    /// If the sample has several components, a random tree over the
    /// components is added: component `k` is joined to a uniformly chosen
    /// earlier component through a random pair of members.
    pub fn random_connected(n: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(config(format!("random topology needs at least 2 agents, got {n}")));
        }
        if !(0.0..=1.0).contains(&edge_prob) {
            return Err(config(format!("edge probability must lie in [0, 1], got {edge_prob}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < edge_prob {
                    sets[i].insert(j);
                    sets[j].insert(i);
                }
            }
        }

        let mut comps = components(&sets);
        if comps.len() > 1 {
            comps.shuffle(&mut rng);
            for k in 1..comps.len() {
                let target = rng.random_range(0..k);
                let a = *comps[k].choose(&mut rng).expect("component is non-empty");
                let b = *comps[target].choose(&mut rng).expect("component is non-empty");
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }

        Ok(Self {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Graph from an explicit undirected edge list. The result must pass
    /// [`validate`].
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(config("graph needs at least one agent"));
        }
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(config(format!("edge ({a}, {b}) references an agent outside 0..{n}")));
            }
            if a == b {
                return Err(config(format!("self-loop on agent {a} is not allowed")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let graph = Self {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        match validate(&graph).violation {
            None => Ok(graph),
            Some(v) => Err(config(format!("explicit edge list is not admissible: {v}"))),
        }
    }

    /// Wraps raw adjacency lists without checking them. Use [`validate`] to
    /// diagnose the result.
    pub fn from_neighbor_lists_unchecked(neighbors: Vec<Vec<usize>>) -> Self {
        Self { neighbors }
    }

    pub fn num_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    /// Sorted members of `N_i ∪ {i}`.
    pub fn closed_neighborhood(&self, agent: usize) -> Vec<usize> {
        let mut v = self.neighbors[agent].clone();
        v.push(agent);
        v.sort_unstable();
        v
    }

    pub fn is_member(&self, agent: usize, other: usize) -> bool {
        agent == other || self.neighbors[agent].binary_search(&other).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.num_directed_edges() / 2
    }

    pub fn num_directed_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Undirected edges as `(low, high)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }
}

fn components(sets: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    let n = sets.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &v in &sets[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// First invariant a graph breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    Empty,
    OutOfRange { agent: usize, neighbor: usize },
    SelfMembership { agent: usize },
    NotSortedUnique { agent: usize },
    Asymmetric { agent: usize, neighbor: usize },
    Disconnected { unreachable: usize },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::Empty => write!(f, "graph has no agents"),
            GraphViolation::OutOfRange { agent, neighbor } => {
                write!(f, "agent {agent} lists out-of-range neighbor {neighbor}")
            }
            GraphViolation::SelfMembership { agent } => write!(f, "agent {agent} lists itself"),
            GraphViolation::NotSortedUnique { agent } => {
                write!(f, "neighbor list of agent {agent} is not sorted and unique")
            }
            GraphViolation::Asymmetric { agent, neighbor } => {
                write!(f, "symmetry: {neighbor} is a neighbor of {agent} but not vice versa")
            }
            GraphViolation::Disconnected { unreachable } => {
                write!(f, "connectivity: agent {unreachable} is unreachable from agent 0")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violation: Option<GraphViolation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks symmetry, absence of self-membership and connectivity (BFS).
pub fn validate(graph: &CommGraph) -> ValidationReport {
    let fail = |v| ValidationReport { violation: Some(v) };
    let n = graph.num_agents();
    if n == 0 {
        return fail(GraphViolation::Empty);
    }
    for (i, ns) in graph.neighbors.iter().enumerate() {
        if ns.windows(2).any(|w| w[0] >= w[1]) {
            return fail(GraphViolation::NotSortedUnique { agent: i });
        }
        for &j in ns {
            if j >= n {
                return fail(GraphViolation::OutOfRange { agent: i, neighbor: j });
            }
            if j == i {
                return fail(GraphViolation::SelfMembership { agent: i });
            }
        }
    }
    for (i, ns) in graph.neighbors.iter().enumerate() {
        for &j in ns {
            if graph.neighbors[j].binary_search(&i).is_err() {
                return fail(GraphViolation::Asymmetric { agent: i, neighbor: j });
            }
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &graph.neighbors[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(unreachable) = seen.iter().position(|s| !s) {
        return fail(GraphViolation::Disconnected { unreachable });
    }
    ValidationReport { violation: None }
}

/// Topology section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring,
    Complete,
    Random { edge_prob: f64, seed: u64 },
    ExplicitEdgeList { edges: Vec<(usize, usize)> },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Ring
    }
}

impl GraphSpec {
    pub fn build(&self, n: usize) -> Result<CommGraph> {
        match self {
            GraphSpec::Ring => CommGraph::ring(n),
            GraphSpec::Complete => CommGraph::complete(n),
            GraphSpec::Random { edge_prob, seed } => CommGraph::random_connected(n, *edge_prob, *seed),
            GraphSpec::ExplicitEdgeList { edges } => CommGraph::from_edges(n, edges),
        }
    }
}

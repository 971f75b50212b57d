//! Author-to-author initiation network.

use std::collections::HashSet;
use std::sync::Arc;

use super::history::UserIx;

/// Disjoint sets with union by size and path halving.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    /// Read-only find; union by size bounds the depth by log2(n).
    pub fn find(&self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            x = self.parent[x as usize];
        }
        x
    }

    fn find_mut(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find_mut(a), self.find_mut(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }

    pub fn component_size(&self, x: u32) -> u32 {
        self.size[self.find(x) as usize]
    }

    pub fn connected(&self, a: u32, b: u32) -> bool {
        self.find(a) == self.find(b)
    }
}

/// The three source/candidate relationship indicators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Dyadic {
    pub weakly_connected: bool,
    pub friend_of_friend: bool,
    /// The candidate previously initiated with the source.
    pub prior_reciprocal: bool,
}

impl Dyadic {
    pub fn as_array(&self) -> [f64; 3] {
        [
            f64::from(u8::from(self.weakly_connected)),
            f64::from(u8::from(self.friend_of_friend)),
            f64::from(u8::from(self.prior_reciprocal)),
        ]
    }
}

/// Directed multigraph over authors; edges are only ever added.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    indegree: Vec<u32>,
    outdegree: Vec<u32>,
    out_targets: Vec<HashSet<UserIx>>,
    neighbors: Vec<HashSet<UserIx>>,
    components: UnionFind,
    n_edges: usize,
}

impl InteractionGraph {
    pub fn new(n_users: usize) -> Self {
        InteractionGraph {
            indegree: vec![0; n_users],
            outdegree: vec![0; n_users],
            out_targets: vec![HashSet::new(); n_users],
            neighbors: vec![HashSet::new(); n_users],
            components: UnionFind::new(n_users),
            n_edges: 0,
        }
    }

    pub fn add_edge(&mut self, from: UserIx, to: UserIx) {
        if from == to {
            return;
        }
        self.indegree[to as usize] += 1;
        self.outdegree[from as usize] += 1;
        self.out_targets[from as usize].insert(to);
        self.neighbors[from as usize].insert(to);
        self.neighbors[to as usize].insert(from);
        self.components.union(from, to);
        self.n_edges += 1;
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn indegree(&self, u: UserIx) -> u32 {
        self.indegree[u as usize]
    }

    pub fn outdegree(&self, u: UserIx) -> u32 {
        self.outdegree[u as usize]
    }

    pub fn component_size(&self, u: UserIx) -> u32 {
        self.components.component_size(u)
    }

    pub fn has_edge(&self, from: UserIx, to: UserIx) -> bool {
        self.out_targets[from as usize].contains(&to)
    }

    pub fn neighbors(&self, u: UserIx) -> &HashSet<UserIx> {
        &self.neighbors[u as usize]
    }

    pub fn dyadic(&self, source: UserIx, candidate: UserIx) -> Dyadic {
        if source == candidate {
            return Dyadic::default();
        }
        let (a, b) = (&self.neighbors[source as usize], &self.neighbors[candidate as usize]);
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        Dyadic {
            weakly_connected: self.components.connected(source, candidate),
            friend_of_friend: small
                .iter()
                .any(|w| *w != source && *w != candidate && large.contains(w)),
            prior_reciprocal: self.has_edge(candidate, source),
        }
    }
}

/// One initiation edge, timestamped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedEdge {
    pub ts: i64,
    pub from: UserIx,
    pub to: UserIx,
}

/// Replays a time-ordered edge list into a graph, one instant at a time.
#[derive(Clone, Debug)]
pub struct GraphCursor {
    graph: InteractionGraph,
    edges: Arc<Vec<TimedEdge>>,
    next: usize,
    at: i64,
}

impl GraphCursor {
    pub fn new(n_users: usize, edges: Arc<Vec<TimedEdge>>) -> Self {
        GraphCursor {
            graph: InteractionGraph::new(n_users),
            edges,
            next: 0,
            at: i64::MIN,
        }
    }

    /// Applies every edge with `ts < t`. Panics if `t` moves backwards.
    pub fn advance_to(&mut self, t: i64) -> &InteractionGraph {
        assert!(t >= self.at, "graph cursor cannot rewind ({t} < {})", self.at);
        self.at = t;
        while let Some(e) = self.edges.get(self.next) {
            if e.ts >= t {
                break;
            }
            self.graph.add_edge(e.from, e.to);
            self.next += 1;
        }
        &self.graph
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    #[test]
    fn empty_graph_has_no_dyadic_signal() {
        let g = InteractionGraph::new(3);
        assert_eq!(g.dyadic(0, 1), Dyadic::default());
        assert_eq!(g.component_size(2), 1);
    }

    #[test]
    fn reciprocal_edge() {
        let mut g = InteractionGraph::new(2);
        // candidate (1) previously initiated with source (0)
        g.add_edge(1, 0);
        let d = g.dyadic(0, 1);
        assert!(d.prior_reciprocal && d.weakly_connected && !d.friend_of_friend);
        assert!(!g.dyadic(1, 0).prior_reciprocal);
    }

    #[test]
    fn chain_gives_friend_of_friend() {
        // A->B, B->C; dyad (A, C)
        let mut g = InteractionGraph::new(3);
        g.add_edge(0, 1);
        g.add_edge(1, 2);
        assert_eq!(g.dyadic(0, 2).as_array(), [1.0, 1.0, 0.0]);
        assert_eq!(g.indegree(1), 1);
        assert_eq!(g.outdegree(1), 1);
        assert_eq!(g.component_size(0), 3);
    }

    #[test]
    fn cursor_is_strictly_before() {
        let edges = Arc::new(vec![
            TimedEdge { ts: 5, from: 0, to: 1 },
            TimedEdge { ts: 9, from: 1, to: 2 },
        ]);
        let mut c = GraphCursor::new(3, edges);
        assert_eq!(c.advance_to(5).n_edges(), 0);
        assert_eq!(c.advance_to(6).n_edges(), 1);
        assert_eq!(c.advance_to(100).n_edges(), 2);
    }

    fn bfs_components(n: usize, edges: &[(u32, u32)]) -> Vec<usize> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a as usize].push(b as usize);
            adj[b as usize].push(a as usize);
        }
        let mut comp = vec![usize::MAX; n];
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut q = VecDeque::from([start]);
            comp[start] = start;
            while let Some(x) = q.pop_front() {
                for &y in &adj[x] {
                    if comp[y] == usize::MAX {
                        comp[y] = start;
                        q.push_back(y);
                    }
                }
            }
        }
        comp
    }

    proptest! {
        #[test]
        fn union_find_matches_bfs(n in 1usize..25, raw in prop::collection::vec((0u32..25, 0u32..25), 0..40)) {
            let edges: Vec<(u32, u32)> = raw
                .into_iter()
                .map(|(a, b)| (a % n as u32, b % n as u32))
                .filter(|(a, b)| a != b)
                .collect();
            let mut g = InteractionGraph::new(n);
            let mut last_sizes = vec![1u32; n];
            for &(a, b) in &edges {
                g.add_edge(a, b);
                for u in 0..n as u32 {
                    let s = g.component_size(u);
                    prop_assert!(s >= last_sizes[u as usize]);
                    last_sizes[u as usize] = s;
                }
            }
            let comp = bfs_components(n, &edges);
            for a in 0..n {
                for b in 0..n {
                    prop_assert_eq!(g.dyadic(a as u32, b as u32).weakly_connected || a == b, comp[a] == comp[b]);
                }
                let size = comp.iter().filter(|&&c| c == comp[a]).count() as u32;
                prop_assert_eq!(g.component_size(a as u32), size);
            }
        }
    }
}

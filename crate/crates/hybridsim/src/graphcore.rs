//! Graph representation, deterministic generators, centralized distance
//! oracles, and adversarial-instance construction. Everything here is
//! centralized ground truth; the simulator modules build on top of it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel for "unreachable" in distance arrays. Large enough to never be a
/// real distance (weights ≤ n^c_w, paths ≤ n edges) but safe to add to.
pub const INF: u64 = u64::MAX / 4;
/// Hop-count sentinel for "unreachable".
pub const INF_HOPS: u32 = u32::MAX / 4;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph parameters: {0}")]
    InvalidParams(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("unknown node index {0}")]
    UnknownNode(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What family a graph was generated from, kept for experiment metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraphKind {
    Path { n: usize },
    Cycle { n: usize },
    /// `d`-dimensional grid with side length `m` (Cartesian product of paths),
    /// `m^d` nodes with L1 adjacency.
    Grid { d: u32, m: usize },
    ErdosRenyi { n: usize, p: f64 },
    RandomTree { n: usize },
    Custom,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraphMeta {
    pub kind: Option<GraphKind>,
    pub seed: Option<u64>,
    /// True when an Erdős–Rényi draw was disconnected and a random spanning
    /// tree was unioned in to repair connectivity.
    pub connectivity_repaired: bool,
}

/// Undirected connected graph with positive integer weights.
///
/// Nodes are dense indices `0..n`. Each node additionally carries an
/// identifier (`node_ids`); by default identifiers equal indices, matching a
/// model where identifiers are exactly `[n]`. Identifier reassignment (for the
/// large-id-space model variant) keeps indices stable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    node_ids: Vec<u64>,
    /// Per node: sorted list of (neighbor index, edge weight).
    adj: Vec<Vec<(usize, u64)>>,
    weighted: bool,
    pub meta: GraphMeta,
    #[serde(skip)]
    hop_diameter_cache: OnceLock<u32>,
}

impl Graph {
    /// Builds a graph from an undirected edge list (unit weights).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Graph, GraphError> {
        let weighted: Vec<(usize, usize, u64)> =
            edges.iter().map(|&(u, v)| (u, v, 1)).collect();
        Self::from_weighted_edges(n, &weighted, false)
    }

    /// Builds a graph from an undirected weighted edge list.
    pub fn from_weighted_edges(
        n: usize,
        edges: &[(usize, usize, u64)],
        weighted: bool,
    ) -> Result<Graph, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidParams("n must be ≥ 1".into()));
        }
        let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            if u >= n {
                return Err(GraphError::UnknownNode(u));
            }
            if v >= n {
                return Err(GraphError::UnknownNode(v));
            }
            if u == v {
                return Err(GraphError::InvalidParams(format!("self-loop at {u}")));
            }
            if w == 0 {
                return Err(GraphError::InvalidParams("edge weight must be ≥ 1".into()));
            }
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let g = Graph {
            n,
            node_ids: (0..n as u64).collect(),
            adj,
            weighted,
            meta: GraphMeta::default(),
            hop_diameter_cache: OnceLock::new(),
        };
        if !g.check_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.adj.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn node_id(&self, v: usize) -> u64 {
        self.node_ids[v]
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    pub fn index_of_id(&self, id: u64) -> Option<usize> {
        self.node_ids.iter().position(|&x| x == id)
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, u64)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// All undirected edges as (u, v, w) with u < v.
    pub fn edges(&self) -> Vec<(usize, usize, u64)> {
        let mut out = Vec::with_capacity(self.m());
        for u in 0..self.n {
            for &(v, w) in &self.adj[u] {
                if u < v {
                    out.push((u, v, w));
                }
            }
        }
        out
    }

    /// Reassigns node identifiers to distinct random draws from `[n^c]`.
    /// Indices and adjacency are untouched.
    pub fn assign_random_ids(&mut self, c: u32, seed: u64) -> Result<(), GraphError> {
        if c < 1 {
            return Err(GraphError::InvalidParams("id exponent c must be ≥ 1".into()));
        }
        let space = (self.n as u128).pow(c);
        if space < self.n as u128 {
            return Err(GraphError::InvalidParams("id space smaller than n".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x1d5_0ff5e7);
        let mut used = std::collections::HashSet::new();
        let mut ids = Vec::with_capacity(self.n);
        while ids.len() < self.n {
            let cand = (rng.gen::<u128>() % space) as u64;
            if used.insert(cand) {
                ids.push(cand);
            }
        }
        self.node_ids = ids;
        Ok(())
    }

    /// Replaces all edge weights with uniform draws from `[1, n^c_w]`.
    pub fn randomize_weights(&mut self, c_w: u32, seed: u64) {
        let w_max = (self.n as u64).saturating_pow(c_w).max(1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x77e1_6475);
        let mut assignment: HashMap<(usize, usize), u64> = HashMap::new();
        for (u, v, _) in self.edges() {
            assignment.insert((u, v), rng.gen_range(1..=w_max));
        }
        for u in 0..self.n {
            for entry in &mut self.adj[u] {
                let key = if u < entry.0 { (u, entry.0) } else { (entry.0, u) };
                entry.1 = assignment[&key];
            }
        }
        self.weighted = true;
        self.hop_diameter_cache = OnceLock::new();
    }

    /// Overwrites the weight of edge {u, v}; errors if absent.
    pub fn set_weight(&mut self, u: usize, v: usize, w: u64) -> Result<(), GraphError> {
        let mut found = false;
        for node in [u, v] {
            let other = u + v - node;
            if let Some(e) = self.adj[node].iter_mut().find(|e| e.0 == other) {
                e.1 = w;
                found = true;
            }
        }
        if !found {
            return Err(GraphError::InvalidParams(format!("no edge {{{u},{v}}}")));
        }
        self.weighted = true;
        Ok(())
    }

    fn check_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Hop distances from `v` to every node (BFS; ties broken by visiting
    /// neighbors in ascending index order, which the sorted adjacency gives).
    pub fn bfs_hops(&self, v: usize) -> Vec<u32> {
        let mut dist = vec![INF_HOPS; self.n];
        dist[v] = 0;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            for &(w, _) in &self.adj[u] {
                if dist[w] == INF_HOPS {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// The ball B_t(v): all nodes at hop distance ≤ t, sorted by index.
    pub fn ball(&self, v: usize, t: u32) -> Result<Vec<usize>, GraphError> {
        if v >= self.n {
            return Err(GraphError::UnknownNode(v));
        }
        let hops = self.bfs_hops(v);
        Ok((0..self.n).filter(|&u| hops[u] <= t).collect())
    }

    /// |B_t(v)| for every t in 0..=eccentricity(v), as a prefix-size vector.
    pub fn ball_sizes(&self, v: usize) -> Vec<usize> {
        let hops = self.bfs_hops(v);
        let ecc = *hops.iter().max().unwrap() as usize;
        let mut counts = vec![0usize; ecc + 1];
        for &h in &hops {
            counts[h as usize] += 1;
        }
        for t in 1..=ecc {
            counts[t] += counts[t - 1];
        }
        counts
    }

    pub fn eccentricity(&self, v: usize) -> u32 {
        *self.bfs_hops(v).iter().max().unwrap()
    }

    /// Hop diameter D (max hop distance over all pairs), cached.
    pub fn hop_diameter(&self) -> u32 {
        *self.hop_diameter_cache.get_or_init(|| {
            (0..self.n).map(|v| self.eccentricity(v)).max().unwrap()
        })
    }

    /// Serializes to the text format: header `n m weighted{0|1}` then one line
    /// per edge `u v [w]`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let edges = self.edges();
        let _ = writeln!(out, "{} {} {}", self.n, edges.len(), u8::from(self.weighted));
        for (u, v, w) in edges {
            if self.weighted {
                let _ = writeln!(out, "{u} {v} {w}");
            } else {
                let _ = writeln!(out, "{u} {v}");
            }
        }
        out
    }

    /// Parses the text format produced by [`Graph::to_text`]. Validates
    /// connectivity.
    pub fn from_text(text: &str) -> Result<Graph, GraphError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(GraphError::Parse { line: 1, msg: "empty input".into() })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(GraphError::Parse {
                line: 1,
                msg: "header must be `n m weighted{0|1}`".into(),
            });
        }
        let parse = |s: &str, line: usize| -> Result<u64, GraphError> {
            s.parse().map_err(|_| GraphError::Parse { line, msg: format!("bad number {s:?}") })
        };
        let n = parse(parts[0], 1)? as usize;
        let m = parse(parts[1], 1)? as usize;
        let weighted = match parts[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(GraphError::Parse {
                    line: 1,
                    msg: format!("weighted flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        let mut edges = Vec::with_capacity(m);
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let expect = if weighted { 3 } else { 2 };
            if fields.len() != expect {
                return Err(GraphError::Parse {
                    line: lineno,
                    msg: format!("expected {expect} fields, got {}", fields.len()),
                });
            }
            let u = parse(fields[0], lineno)? as usize;
            let v = parse(fields[1], lineno)? as usize;
            let w = if weighted { parse(fields[2], lineno)? } else { 1 };
            edges.push((u, v, w));
        }
        if edges.len() != m {
            return Err(GraphError::Parse {
                line: 1,
                msg: format!("header declares {m} edges, found {}", edges.len()),
            });
        }
        Self::from_weighted_edges(n, &edges, weighted)
    }
}

/// Deterministic graph generation; identical (kind, seed) yields identical
/// graphs.
pub fn generate(kind: &GraphKind, seed: u64) -> Result<Graph, GraphError> {
    let mut g = match *kind {
        GraphKind::Path { n } => {
            require(n >= 2, "path needs n ≥ 2")?;
            let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            Graph::from_edges(n, &edges)?
        }
        GraphKind::Cycle { n } => {
            require(n >= 3, "cycle needs n ≥ 3")?;
            let mut edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            edges.push((n - 1, 0));
            Graph::from_edges(n, &edges)?
        }
        GraphKind::Grid { d, m } => {
            require(d >= 1, "grid needs d ≥ 1")?;
            require(m >= 2, "grid needs m ≥ 2")?;
            let n = m.checked_pow(d).filter(|&n| n <= 1 << 24).ok_or_else(|| {
                GraphError::InvalidParams("grid too large".into())
            })?;
            let mut edges = Vec::new();
            for v in 0..n {
                // Mixed-radix coordinates; connect to +1 along each axis.
                let mut stride = 1usize;
                for _axis in 0..d {
                    let coord = (v / stride) % m;
                    if coord + 1 < m {
                        edges.push((v, v + stride));
                    }
                    stride *= m;
                }
            }
            Graph::from_edges(n, &edges)?
        }
        GraphKind::ErdosRenyi { n, p } => {
            require(n >= 2, "erdos_renyi needs n ≥ 2")?;
            require(p > 0.0 && p <= 1.0, "erdos_renyi needs p ∈ (0,1]")?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut edge_set = std::collections::HashSet::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.gen_bool(p) {
                        edge_set.insert((u, v));
                    }
                }
            }
            // Connectivity repair: union with a random spanning tree.
            let edges: Vec<_> = edge_set.iter().copied().collect();
            let repaired = {
                let mut probe: Vec<Vec<usize>> = vec![Vec::new(); n];
                for &(u, v) in &edges {
                    probe[u].push(v);
                    probe[v].push(u);
                }
                !connected_adj(&probe)
            };
            if repaired {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                for i in 1..n {
                    let j = rng.gen_range(0..i);
                    let (a, b) = (order[i].min(order[j]), order[i].max(order[j]));
                    edge_set.insert((a, b));
                }
            }
            let edges: Vec<_> = {
                let mut e: Vec<_> = edge_set.into_iter().collect();
                e.sort_unstable();
                e
            };
            let mut g = Graph::from_edges(n, &edges)?;
            g.meta.connectivity_repaired = repaired;
            g
        }
        GraphKind::RandomTree { n } => {
            require(n >= 2, "random_tree needs n ≥ 2")?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut edges = Vec::with_capacity(n - 1);
            for v in 1..n {
                edges.push((rng.gen_range(0..v), v));
            }
            Graph::from_edges(n, &edges)?
        }
        GraphKind::Custom => {
            return Err(GraphError::InvalidParams("cannot generate Custom".into()))
        }
    };
    g.meta.kind = Some(kind.clone());
    g.meta.seed = Some(seed);
    Ok(g)
}

fn require(cond: bool, msg: &str) -> Result<(), GraphError> {
    if cond {
        Ok(())
    } else {
        Err(GraphError::InvalidParams(msg.into()))
    }
}

fn connected_adj(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

/// Exact distances from a set of sources: weighted distance (Dijkstra), hop
/// distance (BFS), and optionally the hop-limited distance d^h (h rounds of
/// Bellman–Ford relaxation — the least weight over paths of at most h edges).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceTable {
    pub sources: Vec<usize>,
    /// dist[i][v] = weighted distance from sources[i] to v.
    pub dist: Vec<Vec<u64>>,
    /// hops[i][v] = hop distance from sources[i] to v.
    pub hops: Vec<Vec<u32>>,
    pub hop_limit: Option<u32>,
    /// dist_h[i][v] = d^h(sources[i], v), present iff hop_limit was given.
    pub dist_h: Option<Vec<Vec<u64>>>,
    #[serde(skip)]
    index: OnceLock<HashMap<usize, usize>>,
}

impl DistanceTable {
    fn row(&self, s: usize) -> Option<usize> {
        self.index
            .get_or_init(|| {
                self.sources.iter().enumerate().map(|(i, &s)| (s, i)).collect()
            })
            .get(&s)
            .copied()
    }

    pub fn dist(&self, s: usize, v: usize) -> Option<u64> {
        Some(self.dist[self.row(s)?][v])
    }

    pub fn hops(&self, s: usize, v: usize) -> Option<u32> {
        Some(self.hops[self.row(s)?][v])
    }

    pub fn dist_h(&self, s: usize, v: usize) -> Option<u64> {
        Some(self.dist_h.as_ref()?[self.row(s)?][v])
    }

    /// CSV with columns (source,node,dist,hops).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,node,dist,hops\n");
        for (i, &s) in self.sources.iter().enumerate() {
            for v in 0..self.dist[i].len() {
                let _ = writeln!(out, "{s},{v},{},{}", self.dist[i][v], self.hops[i][v]);
            }
        }
        out
    }
}

/// Runs Dijkstra from `source`; returns weighted distances.
pub fn dijkstra(g: &Graph, source: usize) -> Vec<u64> {
    use std::cmp::Reverse;
    let mut dist = vec![INF; g.n()];
    dist[source] = 0;
    let mut heap = std::collections::BinaryHeap::new();
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in g.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

/// d^h from `source`: least weight over paths of at most `h` edges.
pub fn hop_limited_dist(g: &Graph, source: usize, h: u32) -> Vec<u64> {
    let mut cur = vec![INF; g.n()];
    cur[source] = 0;
    for _ in 0..h {
        let mut next = cur.clone();
        for u in 0..g.n() {
            if cur[u] >= INF {
                continue;
            }
            for &(v, w) in g.neighbors(u) {
                let nd = cur[u] + w;
                if nd < next[v] {
                    next[v] = nd;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Exact oracle distances from a set of sources.
pub fn oracle_distances(
    g: &Graph,
    sources: &[usize],
    hop_limit: Option<u32>,
) -> Result<DistanceTable, GraphError> {
    if sources.is_empty() {
        return Err(GraphError::InvalidParams("sources must be nonempty".into()));
    }
    for &s in sources {
        if s >= g.n() {
            return Err(GraphError::UnknownNode(s));
        }
    }
    let dist: Vec<Vec<u64>> = sources.iter().map(|&s| dijkstra(g, s)).collect();
    let hops: Vec<Vec<u32>> = sources.iter().map(|&s| g.bfs_hops(s)).collect();
    let dist_h = hop_limit
        .map(|h| sources.iter().map(|&s| hop_limited_dist(g, s, h)).collect());
    Ok(DistanceTable {
        sources: sources.to_vec(),
        dist,
        hops,
        hop_limit,
        dist_h,
        index: OnceLock::new(),
    })
}

/// An adversarial weighted instance exhibiting a polynomial distance gap
/// around a node whose neighborhood grows slowly.
#[derive(Debug, Clone)]
pub struct HardInstance {
    /// The reweighted graph.
    pub graph: Graph,
    /// Center node with a sparse neighborhood.
    pub v: usize,
    /// Ball radius around `v` excluded from the partition.
    pub r: u32,
    pub v1: Vec<usize>,
    pub v2: Vec<usize>,
    /// Gap polynomial p(n).
    pub p_of_n: u64,
    /// Weight placed on non-tree and partition-crossing edges: n · p(n).
    pub heavy_weight: u64,
}

/// Outcome of [`hard_instance`]: graphs too small (or k too large) for the
/// gap construction yield an explicit degenerate result instead of an error.
#[derive(Debug, Clone)]
pub enum HardInstanceOutcome {
    Ready(Box<HardInstance>),
    Degenerate { reason: String },
}

/// Builds the hard instance: around a node `v` with a slowly growing
/// neighborhood (|B_r(v)| ≤ k/r at r = NQ_k − 1), partitions the remaining
/// nodes by a breadth-first fill into V1 (first ⌈n/4⌉) and V2 (rest), then
/// assigns weight 1 to BFS-tree edges inside V1 ∪ B_r(v) ∪ {paths within V2}
/// and weight n·p(n) to every non-tree edge and every edge crossing
/// (V1 ∪ B_r(v)) ↔ V2. Every V2 node is then at distance ≥ p(n) times the
/// distance of any V1 node from v.
pub fn hard_instance(
    g: &Graph,
    k: usize,
    p_exponent: u32,
) -> Result<HardInstanceOutcome, GraphError> {
    let n = g.n();
    if k < 1 || p_exponent < 1 {
        return Err(GraphError::InvalidParams("need k ≥ 1 and p_exponent ≥ 1".into()));
    }
    if k > n / 2 {
        return Ok(HardInstanceOutcome::Degenerate {
            reason: format!("k={k} exceeds n/2={}", n / 2),
        });
    }
    let report = crate::nq::nq_graph(g, k);
    let nq = report.nq_graph;
    if nq < 3 {
        return Ok(HardInstanceOutcome::Degenerate {
            reason: format!("neighborhood quality {nq} < 3"),
        });
    }
    // Center: the node attaining the maximum (its ball stays below k/r for
    // every r < NQ), lowest index among maximizers.
    let v = (0..n).find(|&u| report.nq_node[u] == nq).unwrap();
    let r = nq - 1;
    let hops = g.bfs_hops(v);
    let ball_r: Vec<usize> = (0..n).filter(|&u| hops[u] <= r).collect();
    debug_assert!((ball_r.len() as u64) * (r as u64) <= k as u64);

    // BFS tree from v, children in ascending index order; bfs_order lists
    // nodes in visit order so every node's tree parent precedes it.
    let mut parent = vec![usize::MAX; n];
    let mut bfs_order = Vec::with_capacity(n);
    {
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[v] = true;
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            bfs_order.push(u);
            for &(w, _) in g.neighbors(u) {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = u;
                    queue.push_back(w);
                }
            }
        }
    }

    let in_ball: Vec<bool> = (0..n).map(|u| hops[u] <= r).collect();
    let target = n.div_ceil(4);
    let mut in_v1 = vec![false; n];
    let mut v1 = Vec::with_capacity(target);
    for &u in &bfs_order {
        if v1.len() == target {
            break;
        }
        if !in_ball[u] {
            in_v1[u] = true;
            v1.push(u);
        }
    }
    let v2: Vec<usize> = (0..n).filter(|&u| !in_ball[u] && !in_v1[u]).collect();
    if v1.len() < target || v2.len() < n / 4 {
        return Ok(HardInstanceOutcome::Degenerate {
            reason: "partition sides too small".into(),
        });
    }

    let p_of_n = (n as u64)
        .checked_pow(p_exponent)
        .ok_or_else(|| GraphError::InvalidParams("p(n) overflows u64".into()))?;
    let heavy = (n as u64)
        .checked_mul(p_of_n)
        .ok_or_else(|| GraphError::InvalidParams("n·p(n) overflows u64".into()))?;

    let mut out = g.clone();
    let side2 = &|u: usize| !in_ball[u] && !in_v1[u];
    for (a, b, _) in g.edges() {
        let tree_edge = parent[a] == b || parent[b] == a;
        let crossing = side2(a) != side2(b);
        let w = if !tree_edge || crossing { heavy } else { 1 };
        out.set_weight(a, b, w)?;
    }
    out.meta.kind = Some(GraphKind::Custom);
    Ok(HardInstanceOutcome::Ready(Box::new(HardInstance {
        graph: out,
        v,
        r,
        v1,
        v2,
        p_of_n,
        heavy_weight: heavy,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        generate(&GraphKind::Path { n }, 0).unwrap()
    }

    #[test]
    fn grid_structure() {
        let g = generate(&GraphKind::Grid { d: 2, m: 4 }, 0).unwrap();
        assert_eq!(g.n(), 16);
        // Corner (0,0) has degree 2; center (1,1) has degree 4.
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(5), 4);
        assert_eq!(g.m(), 24);
    }

    #[test]
    fn path_diameter_and_balls() {
        let g = path(5);
        assert_eq!(g.hop_diameter(), 4);
        assert_eq!(g.ball(0, 2).unwrap().len(), 3);
    }

    #[test]
    fn grid_corner_ball_closed_form() {
        // |B_r(corner)| = C(r+d, d) for r ≤ m−1.
        let g = generate(&GraphKind::Grid { d: 2, m: 10 }, 0).unwrap();
        assert_eq!(g.ball(0, 3).unwrap().len(), 10); // C(5,2)
        let g = generate(&GraphKind::Grid { d: 2, m: 20 }, 0).unwrap();
        assert_eq!(g.ball(0, 5).unwrap().len(), 21); // C(7,2)
    }

    #[test]
    fn ball_zero_and_growth() {
        let g = generate(&GraphKind::Grid { d: 2, m: 8 }, 0).unwrap();
        assert_eq!(g.ball(9, 0).unwrap(), vec![9]);
        let sizes = g.ball_sizes(9);
        for t in 1..sizes.len() {
            assert!(sizes[t] >= sizes[t - 1]);
        }
        assert_eq!(*sizes.last().unwrap(), g.n());
        assert_eq!(sizes.len() as u32 - 1, g.eccentricity(9));
    }

    #[test]
    fn endpoint_ball_on_long_path() {
        let g = path(100);
        assert_eq!(g.ball(0, 7).unwrap().len(), 8);
    }

    #[test]
    fn oracle_path_distances() {
        let g = path(5);
        let t = oracle_distances(&g, &[0], None).unwrap();
        assert_eq!(t.dist[0], vec![0, 1, 2, 3, 4]);
        assert_eq!(t.dist(0, 0), Some(0));
    }

    #[test]
    fn oracle_weighted_cycle_detour() {
        // Cycle of 6 with one heavy edge: endpoints of that edge are at
        // distance 5 the other way around.
        let mut g = generate(&GraphKind::Cycle { n: 6 }, 0).unwrap();
        g.set_weight(0, 1, 10).unwrap();
        let t = oracle_distances(&g, &[0], None).unwrap();
        assert_eq!(t.dist(0, 1), Some(5));
    }

    #[test]
    fn oracle_symmetry_and_triangle() {
        let mut g = generate(&GraphKind::ErdosRenyi { n: 40, p: 0.1 }, 7).unwrap();
        g.randomize_weights(2, 3);
        let all: Vec<usize> = (0..g.n()).collect();
        let t = oracle_distances(&g, &all, None).unwrap();
        for u in 0..g.n() {
            for v in 0..g.n() {
                assert_eq!(t.dist[u][v], t.dist[v][u]);
                for w in (0..g.n()).step_by(7) {
                    assert!(t.dist[u][v] <= t.dist[u][w] + t.dist[w][v]);
                }
            }
        }
    }

    #[test]
    fn hop_limited_dominates_true_distance() {
        let mut g = generate(&GraphKind::Grid { d: 2, m: 6 }, 0).unwrap();
        g.randomize_weights(1, 11);
        let t = oracle_distances(&g, &[0], Some(3)).unwrap();
        let full = oracle_distances(&g, &[0], Some(64)).unwrap();
        for v in 0..g.n() {
            assert!(t.dist_h(0, v).unwrap() >= t.dist(0, v).unwrap());
            // With the hop limit at ≥ diameter, d^h equals d.
            assert_eq!(full.dist_h(0, v).unwrap(), full.dist(0, v).unwrap());
        }
    }

    #[test]
    fn generators_deterministic() {
        for kind in [
            GraphKind::ErdosRenyi { n: 50, p: 0.05 },
            GraphKind::RandomTree { n: 50 },
        ] {
            let a = generate(&kind, 42).unwrap();
            let b = generate(&kind, 42).unwrap();
            assert_eq!(a.to_text(), b.to_text());
            let c = generate(&kind, 43).unwrap();
            assert!(a.to_text() != c.to_text() || a.m() == c.m());
        }
    }

    #[test]
    fn generator_validation() {
        assert!(generate(&GraphKind::Grid { d: 0, m: 4 }, 0).is_err());
        assert!(generate(&GraphKind::Grid { d: 2, m: 1 }, 0).is_err());
        assert!(generate(&GraphKind::ErdosRenyi { n: 10, p: 0.0 }, 0).is_err());
        assert!(generate(&GraphKind::ErdosRenyi { n: 10, p: 1.5 }, 0).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut g = generate(&GraphKind::Cycle { n: 9 }, 0).unwrap();
        g.set_weight(2, 3, 17).unwrap();
        let text = g.to_text();
        let back = Graph::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert!(Graph::from_text("3 1 0\n0 1\n").is_err()); // disconnected
        assert!(Graph::from_text("bogus").is_err());
    }

    #[test]
    fn random_ids_distinct() {
        let mut g = path(64);
        g.assign_random_ids(2, 5).unwrap();
        let mut ids = g.node_ids().to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 64);
        assert!(g.node_ids().iter().all(|&id| id < 64 * 64));
    }

    #[test]
    fn hard_instance_path() {
        let g = path(64);
        let out = hard_instance(&g, 8, 1).unwrap();
        let HardInstanceOutcome::Ready(hi) = out else {
            panic!("expected a ready instance");
        };
        assert!(hi.v1.len() >= 16 && hi.v2.len() >= 16);
        // Gap: every V2 node at least p(n) times further from v than any V1
        // node.
        let t = oracle_distances(&hi.graph, &[hi.v], None).unwrap();
        let max1 = hi.v1.iter().map(|&u| t.dist(hi.v, u).unwrap()).max().unwrap();
        let min2 = hi.v2.iter().map(|&u| t.dist(hi.v, u).unwrap()).min().unwrap();
        assert!(min2 >= hi.p_of_n * max1, "gap violated: {min2} < p·{max1}");
        // Ball sparsity |B_r(v)| ≤ k/r.
        let ball = hi.graph.ball(hi.v, hi.r).unwrap();
        assert!(ball.len() as u64 * hi.r as u64 <= 8);
        // Max weight is n·p(n) by construction.
        let wmax = hi.graph.edges().iter().map(|e| e.2).max().unwrap();
        assert_eq!(wmax, hi.heavy_weight);
    }

    #[test]
    fn hard_instance_grid_sides() {
        let g = generate(&GraphKind::Grid { d: 2, m: 8 }, 0).unwrap();
        match hard_instance(&g, 16, 1).unwrap() {
            HardInstanceOutcome::Ready(hi) => {
                assert!(hi.v1.len() >= 16);
                assert!(hi.v2.len() >= 16);
            }
            HardInstanceOutcome::Degenerate { reason } => {
                panic!("unexpected degenerate: {reason}")
            }
        }
    }

    #[test]
    fn hard_instance_degenerate_cases() {
        let g = path(8);
        // k > n/2.
        assert!(matches!(
            hard_instance(&g, 5, 1).unwrap(),
            HardInstanceOutcome::Degenerate { .. }
        ));
        // Tiny k on a tiny graph: NQ < 3.
        assert!(matches!(
            hard_instance(&g, 1, 1).unwrap(),
            HardInstanceOutcome::Degenerate { .. }
        ));
    }

    #[test]
    fn distance_table_csv() {
        let g = path(3);
        let t = oracle_distances(&g, &[0], None).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("source,node,dist,hops\n"));
        assert!(csv.contains("0,2,2,2"));
    }
}

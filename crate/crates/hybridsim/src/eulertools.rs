//! Contract-and-aggregate round simulation, forest decomposition, cycle
//! orientation by repeated independent-set contraction, a randomized network
//! decomposition, and the Eulerian-orientation oracle over subgraphs
//! extended with a few virtual nodes.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::graphcore::Graph;
use crate::hybridnet::{log2_ceil, HybridError, Net};
use crate::overlay::AggOp;

#[derive(Debug, Error)]
pub enum EulerError {
    #[error("engine error: {0}")]
    Engine(#[from] HybridError),
    #[error("node {0} has odd degree")]
    OddDegree(usize),
    #[error("node {0} does not have degree 2")]
    DegreeViolation(usize),
    #[error("arboricity bound violated; witness nodes {witness:?}")]
    ArboricityExceeded { witness: Vec<usize> },
    #[error("value too large for a global message: {0}")]
    Oversized(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("internal invariant broken: {0}")]
    Invariant(String),
}

/// Undirected multigraph: parallel edges allowed, self-loops not.
#[derive(Debug, Clone)]
pub struct MultiGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl MultiGraph {
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }
}

/// A direction per edge of a multigraph: forward[i] means edges[i].0 →
/// edges[i].1.
#[derive(Debug, Clone)]
pub struct Orientation {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub forward: Vec<bool>,
}

impl Orientation {
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .zip(&self.forward)
            .map(|(&(u, v), &f)| if f { (u, v) } else { (v, u) })
            .collect()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for (from, _) in self.directed_edges() {
            d[from] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for (_, to) in self.directed_edges() {
            d[to] += 1;
        }
        d
    }

    /// Eulerian balance: indegree = outdegree everywhere.
    pub fn balanced(&self) -> bool {
        self.in_degrees() == self.out_degrees()
    }

    /// Directed edge list, one `from to` pair per line.
    pub fn to_edge_list(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (from, to) in self.directed_edges() {
            let _ = writeln!(out, "{from} {to}");
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Contract-and-aggregate rounds

/// One round of the contraction model: ⊤-edges merge endpoints into
/// supernodes, every supernode reaches consensus y_s = ⊕ over member inputs,
/// and aggregates ⊗ over the values proposed by its incident surviving
/// edges (self-loops dropped, parallel edges kept).
#[derive(Debug, Clone)]
pub struct MinorRoundSpec {
    /// Per edge of `graph.edges()` order: ⊤ (contract) or ⊥.
    pub contract: Vec<bool>,
    /// Per-node input x_v.
    pub x: Vec<u64>,
    pub consensus: AggOp,
    /// Per edge: (value proposed towards the lower endpoint's supernode,
    /// value proposed towards the higher endpoint's supernode).
    pub z: Vec<(u64, u64)>,
    pub aggregate: AggOp,
}

#[derive(Debug, Clone)]
pub struct MinorRoundResult {
    pub supernode_of: Vec<usize>,
    /// Per node: the consensus value of its supernode.
    pub y: Vec<u64>,
    /// Per node: the edge aggregate of its supernode.
    pub agg: Vec<u64>,
}

struct UnionFind(Vec<usize>);
impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, v: usize) -> usize {
        if self.0[v] != v {
            let r = self.find(self.0[v]);
            self.0[v] = r;
        }
        self.0[v]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Simulates one contraction round; polylog round cost charged to the
/// engine, result identical to the centralized evaluation.
pub fn minor_round(net: &mut Net, spec: &MinorRoundSpec) -> Result<MinorRoundResult, EulerError> {
    let g = net.graph();
    let n = g.n();
    let edges = g.edges();
    if spec.contract.len() != edges.len()
        || spec.z.len() != edges.len()
        || spec.x.len() != n
    {
        return Err(EulerError::InvalidInput("spec shape does not match the graph".into()));
    }
    let word_limit = 1u128 << (4 * net.word_bits()).min(127);
    let too_big = |v: u64| (v as u128) >= word_limit;
    if spec.x.iter().any(|&v| too_big(v))
        || spec.z.iter().any(|&(a, b)| too_big(a) || too_big(b))
    {
        return Err(EulerError::Oversized("input exceeds the global message size".into()));
    }

    let mut uf = UnionFind::new(n);
    for (i, &(u, v, _)) in edges.iter().enumerate() {
        if spec.contract[i] {
            uf.union(u, v);
        }
    }
    let supernode_of: Vec<usize> = (0..n).map(|v| uf.find(v)).collect();

    let mut y_of: HashMap<usize, u64> = HashMap::new();
    for v in 0..n {
        let e = y_of.entry(supernode_of[v]).or_insert(spec.consensus.identity());
        *e = spec.consensus.apply(*e, spec.x[v]);
    }
    let mut agg_of: HashMap<usize, u64> = HashMap::new();
    for (i, &(u, v, _)) in edges.iter().enumerate() {
        if spec.contract[i] {
            continue;
        }
        let (su, sv) = (supernode_of[u], supernode_of[v]);
        if su == sv {
            continue; // self-loop after contraction
        }
        let (za, zb) = spec.z[i];
        let e = agg_of.entry(su).or_insert(spec.aggregate.identity());
        *e = spec.aggregate.apply(*e, za);
        let e = agg_of.entry(sv).or_insert(spec.aggregate.identity());
        *e = spec.aggregate.apply(*e, zb);
    }
    let log_n = log2_ceil(n) as u64;
    net.charge_flood_rounds(log_n * log_n);
    Ok(MinorRoundResult {
        y: (0..n).map(|v| y_of[&supernode_of[v]]).collect(),
        agg: (0..n)
            .map(|v| *agg_of.get(&supernode_of[v]).unwrap_or(&spec.aggregate.identity()))
            .collect(),
        supernode_of,
    })
}

// ---------------------------------------------------------------------------
// Forest decomposition

pub const C_FOREST: usize = 4;

#[derive(Debug, Clone)]
pub struct ForestDecomposition {
    pub orientation: Orientation,
    pub max_outdegree: usize,
    /// Peeling layer per node.
    pub layers: Vec<usize>,
}

/// Peeling decomposition: repeatedly remove all nodes of remaining degree
/// ≤ c_f·α and orient their remaining edges outward. Succeeds whenever the
/// arboricity is at most α (average degree ≤ 2α, so low-degree nodes always
/// exist); otherwise the stuck remainder is returned as a witness.
pub fn forest_decomposition(
    h: &MultiGraph,
    alpha_in: usize,
) -> Result<ForestDecomposition, EulerError> {
    let threshold = C_FOREST * alpha_in.max(1);
    let mut degree = h.degrees();
    let mut alive = vec![true; h.n];
    let mut layers = vec![0usize; h.n];
    let mut forward = vec![None::<bool>; h.edges.len()];
    let mut remaining: usize = alive.iter().filter(|&&a| a).count();
    let mut layer = 0usize;
    while forward.iter().any(|f| f.is_none()) {
        let peel: Vec<usize> =
            (0..h.n).filter(|&v| alive[v] && degree[v] <= threshold).collect();
        if peel.is_empty() {
            let witness: Vec<usize> = (0..h.n).filter(|&v| alive[v]).collect();
            return Err(EulerError::ArboricityExceeded { witness });
        }
        let peel_set: Vec<bool> = {
            let mut s = vec![false; h.n];
            for &v in &peel {
                s[v] = true;
            }
            s
        };
        for (i, &(u, v)) in h.edges.iter().enumerate() {
            if forward[i].is_some() {
                continue;
            }
            // Oriented away from the peeled endpoint; ties (both peeled this
            // layer) go from the smaller index.
            match (peel_set[u], peel_set[v]) {
                (true, _) => forward[i] = Some(true),
                (false, true) => forward[i] = Some(false),
                _ => continue,
            }
            degree[u] -= 1;
            degree[v] -= 1;
        }
        for &v in &peel {
            alive[v] = false;
            layers[v] = layer;
            remaining -= 1;
        }
        layer += 1;
        let _ = remaining;
    }
    let orientation = Orientation {
        n: h.n,
        edges: h.edges.clone(),
        forward: forward.into_iter().map(|f| f.unwrap()).collect(),
    };
    let max_outdegree = orientation.out_degrees().into_iter().max().unwrap_or(0);
    if max_outdegree > threshold {
        return Err(EulerError::Invariant("outdegree exceeded the peeling threshold".into()));
    }
    Ok(ForestDecomposition { orientation, max_outdegree, layers })
}

// ---------------------------------------------------------------------------
// Cycle orientation

#[derive(Debug)]
pub struct CycleOrientation {
    pub orientation: Orientation,
    pub cycles: usize,
    /// Contraction iterations until every cycle shrank to ≤ 3 nodes.
    pub iterations: u32,
}

/// Deterministic maximal independent set on a cycle given as an identifier
/// sequence: iterated color reduction down to six colors, a reduction to
/// three, then selection by ascending color class.
fn cycle_mis(ids: &[u64]) -> Vec<bool> {
    let l = ids.len();
    debug_assert!(l >= 4);
    let mut colors: Vec<u64> = ids.to_vec();
    while colors.iter().max().copied().unwrap_or(0) >= 6 {
        let next: Vec<u64> = (0..l)
            .map(|i| {
                let succ = colors[(i + 1) % l];
                let diff = colors[i] ^ succ;
                let k = diff.trailing_zeros() as u64;
                2 * k + ((colors[i] >> k) & 1)
            })
            .collect();
        colors = next;
    }
    for c in (3..=5).rev() {
        for i in 0..l {
            if colors[i] == c {
                let a = colors[(i + l - 1) % l];
                let b = colors[(i + 1) % l];
                colors[i] = (0..3).find(|&x| x != a && x != b).unwrap();
            }
        }
    }
    let mut selected = vec![false; l];
    for c in 0..3u64 {
        for i in 0..l {
            if colors[i] == c && !selected[(i + l - 1) % l] && !selected[(i + 1) % l] {
                selected[i] = true;
            }
        }
    }
    selected
}

/// Orients a 2-regular multigraph: each cycle gets a consistent rotation
/// (every node in = out = 1). The rotation is fixed by the cycle traversal;
/// the round cost is governed by the contraction loop, which repeatedly
/// removes an independent set until ≤ 3 nodes remain and is certified to
/// shrink every cycle geometrically within c·log n iterations.
pub fn orient_cycles(net: &mut Net, h2: &MultiGraph) -> Result<CycleOrientation, EulerError> {
    let degrees = h2.degrees();
    if let Some(v) = (0..h2.n).find(|&v| degrees[v] != 2) {
        return Err(EulerError::DegreeViolation(v));
    }
    // Decompose into cycles by walking unused edges.
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); h2.n]; // (edge, other)
    for (i, &(u, v)) in h2.edges.iter().enumerate() {
        incident[u].push((i, v));
        incident[v].push((i, u));
    }
    let mut used = vec![false; h2.edges.len()];
    let mut forward = vec![false; h2.edges.len()];
    let mut cycles = 0usize;
    let mut max_iterations = 0u32;
    let log_n = log2_ceil(h2.n.max(2));
    for start in 0..h2.n {
        if incident[start].iter().all(|&(e, _)| used[e]) {
            continue;
        }
        // Traverse the cycle through `start`, orienting along the walk.
        let mut seq = vec![start];
        let mut cur = start;
        loop {
            let &(e, nxt) =
                incident[cur].iter().find(|&&(e, _)| !used[e]).expect("even degree");
            used[e] = true;
            forward[e] = h2.edges[e].0 == cur;
            if nxt == start {
                break;
            }
            seq.push(nxt);
            cur = nxt;
        }
        cycles += 1;
        // Contraction loop: remove a maximal independent set per iteration.
        let mut ids: Vec<u64> = seq.iter().map(|&v| v as u64).collect();
        let mut iterations = 0u32;
        while ids.len() > 3 {
            let mis = cycle_mis(&ids);
            let picked = mis.iter().filter(|&&b| b).count();
            let l = ids.len();
            if picked * 3 < l || picked * 2 > l {
                return Err(EulerError::Invariant(format!(
                    "independent set of {picked} on a {l}-cycle outside [L/3, L/2]"
                )));
            }
            ids = ids
                .iter()
                .zip(&mis)
                .filter(|(_, &m)| !m)
                .map(|(&id, _)| id)
                .collect();
            iterations += 1;
            if iterations > 4 * log_n {
                return Err(EulerError::Invariant("contraction did not converge".into()));
            }
        }
        max_iterations = max_iterations.max(iterations);
    }
    net.charge_flood_rounds((max_iterations as u64 + 1) * log_n as u64);
    let orientation = Orientation { n: h2.n, edges: h2.edges.clone(), forward };
    debug_assert!(orientation.balanced());
    Ok(CycleOrientation { orientation, cycles, iterations: max_iterations })
}

// ---------------------------------------------------------------------------
// Network decomposition

pub const C_CHI: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    G,
    G2,
}

#[derive(Debug, Clone)]
pub struct NetworkDecomposition {
    pub power: Power,
    pub colors: usize,
    pub cluster_of: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    /// Color class per cluster.
    pub color_of: Vec<usize>,
    /// Declared cluster weak diameter bound in G hops.
    pub diameter_bound: u32,
    pub max_diameter: u32,
    /// χ ceiling c_χ·⌈log n⌉ and whether the run stayed within it.
    pub chi_bound: usize,
    pub within_bound: bool,
}

/// Randomized decomposition by exponential-shift ball carving on G or G²:
/// per color class, every remaining node draws a truncated geometric radius
/// (the highest-identifier node takes the maximum), joins the
/// highest-identifier node whose ball covers it, and stays only if strictly
/// interior. Clusters of one class are non-adjacent in the chosen power
/// graph; classes repeat until every node is clustered.
pub fn network_decomposition(g: &Graph, power: Power, seed: u64) -> NetworkDecomposition {
    use rand::SeedableRng;
    let n = g.n();
    let r_max = log2_ceil(n) as u32;
    // Power-graph hop distances.
    let dist_p: Vec<Vec<u32>> = (0..n)
        .map(|v| {
            let hops = g.bfs_hops(v);
            match power {
                Power::G => hops,
                Power::G2 => hops.iter().map(|&h| h.div_ceil(2)).collect(),
            }
        })
        .collect();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut color_of: Vec<usize> = Vec::new();
    let mut colors = 0usize;
    let chi_bound = C_CHI * log2_ceil(n) as usize;
    while !remaining.is_empty() {
        let top = *remaining.iter().max_by_key(|&&v| g.node_id(v)).unwrap();
        let radius: HashMap<usize, u32> = remaining
            .iter()
            .map(|&v| {
                let mut r = 0u32;
                while r < r_max && rng.gen_bool(0.5) {
                    r += 1;
                }
                (v, if v == top { r_max } else { r })
            })
            .collect();
        let mut kept: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut next_remaining = Vec::new();
        for &u in &remaining {
            let winner = remaining
                .iter()
                .copied()
                .filter(|&v| dist_p[v][u] <= radius[&v])
                .max_by_key(|&v| g.node_id(v));
            match winner {
                Some(c) if dist_p[c][u] < radius[&c] => kept.entry(c).or_default().push(u),
                _ => next_remaining.push(u),
            }
        }
        if kept.is_empty() {
            // The top node always covers itself strictly (radius r_max ≥ 1).
            unreachable!("ball carving made no progress");
        }
        let mut centers: Vec<usize> = kept.keys().copied().collect();
        centers.sort_unstable();
        for c in centers {
            let members = kept.remove(&c).unwrap();
            let ci = clusters.len();
            for &v in &members {
                cluster_of[v] = ci;
            }
            clusters.push(members);
            color_of.push(colors);
        }
        remaining = next_remaining;
        colors += 1;
    }
    let factor = match power {
        Power::G => 2,
        Power::G2 => 4,
    };
    let diameter_bound = factor * r_max;
    let max_diameter = clusters
        .iter()
        .map(|members| {
            members
                .iter()
                .map(|&v| {
                    let hops = g.bfs_hops(v);
                    members.iter().map(|&u| hops[u]).max().unwrap_or(0)
                })
                .max()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0);
    let within_bound = colors <= chi_bound && max_diameter <= diameter_bound;
    NetworkDecomposition {
        power,
        colors,
        cluster_of,
        clusters,
        color_of,
        diameter_bound,
        max_diameter,
        chi_bound,
        within_bound,
    }
}

// ---------------------------------------------------------------------------
// Eulerian orientation

pub const C_VIRTUAL: usize = 1;

/// Up to c_v·log² n virtual nodes appended after the real nodes.
#[derive(Debug, Clone)]
pub struct VirtualNodeSet {
    pub n_real: usize,
    pub count: usize,
}

impl VirtualNodeSet {
    pub fn new(n_real: usize, count: usize) -> Result<VirtualNodeSet, EulerError> {
        let log_n = log2_ceil(n_real.max(2)) as usize;
        let bound = C_VIRTUAL * log_n * log_n;
        if count > bound {
            return Err(EulerError::InvalidInput(format!(
                "{count} virtual nodes exceed the ceiling {bound}"
            )));
        }
        Ok(VirtualNodeSet { n_real, count })
    }
}

#[derive(Debug)]
pub struct EulerianRun {
    pub orientation: Orientation,
    pub colors_used: usize,
    pub cycles_removed: usize,
    pub rounds: u64,
}

fn find_cycle(
    n: usize,
    edge_ids: &[usize],
    edges: &[(usize, usize)],
) -> Option<Vec<(usize, bool)>> {
    // Returns a cycle as (edge id, traversed-forward) pairs, if one exists
    // in the subgraph given by edge_ids.
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (edge, other)
    for &e in edge_ids {
        let (u, v) = edges[e];
        adj[u].push((e, v));
        adj[v].push((e, u));
    }
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] || adj[start].is_empty() {
            continue;
        }
        // Iterative DFS remembering the edge used to enter each node.
        let mut stack = vec![(start, usize::MAX)];
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n]; // (pred node, edge)
        while let Some((v, via)) = stack.pop() {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            for &(e, u) in &adj[v] {
                if e == via {
                    continue;
                }
                if !visited[u] {
                    parent[u] = Some((v, e));
                    stack.push((u, e));
                } else {
                    // Back edge v→u (u already visited): close the cycle by
                    // walking parents from v up to u.
                    let mut cycle = vec![(e, edges[e].0 == v)];
                    let mut cur = v;
                    while cur != u {
                        let (pred, pe) = parent[cur]?;
                        cycle.push((pe, edges[pe].0 == pred));
                        cur = pred;
                    }
                    cycle.reverse();
                    return Some(cycle);
                }
            }
        }
    }
    None
}

/// Computes an orientation of H (a subgraph of the communication graph plus
/// virtual nodes) with indegree = outdegree everywhere. Per color class of
/// a G² network decomposition, each cluster greedily orients and removes
/// cycles among the remaining real edges it touches; the residual (a union
/// of per-class forests plus all virtual-incident edges) is certified by a
/// forest decomposition, then every node pairs its incident residual edges
/// by ascending neighbor identifier, which splits the residual into a
/// 2-regular multigraph whose cycle rotations finish the orientation.
pub fn eulerian_orientation(
    net: &mut Net,
    h: &MultiGraph,
    virtuals: &VirtualNodeSet,
) -> Result<EulerianRun, EulerError> {
    let g = net.graph();
    let n_real = g.n();
    if virtuals.n_real != n_real || h.n != n_real + virtuals.count {
        return Err(EulerError::InvalidInput("node counts do not line up".into()));
    }
    let degrees = h.degrees();
    if let Some(v) = (0..h.n).find(|&v| degrees[v] % 2 != 0) {
        return Err(EulerError::OddDegree(v));
    }
    // Real-real edges must be simple edges of G.
    let g_edges: std::collections::HashSet<(usize, usize)> =
        g.edges().into_iter().map(|(u, v, _)| (u, v)).collect();
    let mut seen = std::collections::HashSet::new();
    for &(u, v) in &h.edges {
        if u == v {
            return Err(EulerError::InvalidInput(format!("self-loop at {u}")));
        }
        if u < n_real && v < n_real {
            let key = (u.min(v), u.max(v));
            if !g_edges.contains(&key) {
                return Err(EulerError::InvalidInput(format!("{key:?} is not an edge of G")));
            }
            if !seen.insert(key) {
                return Err(EulerError::InvalidInput(format!("real edge {key:?} repeated")));
            }
        }
    }
    let start_round = net.round();
    let nd = network_decomposition(g, Power::G2, 0xc1c1e);

    let mut oriented: Vec<Option<bool>> = vec![None; h.edges.len()];
    let mut cycles_removed = 0usize;
    for color in 0..nd.colors {
        for (ci, members) in nd.clusters.iter().enumerate() {
            if nd.color_of[ci] != color {
                continue;
            }
            let in_cluster: Vec<bool> = {
                let mut m = vec![false; h.n];
                for &v in members {
                    m[v] = true;
                }
                m
            };
            loop {
                let pool: Vec<usize> = (0..h.edges.len())
                    .filter(|&e| {
                        let (u, v) = h.edges[e];
                        oriented[e].is_none()
                            && u < n_real
                            && v < n_real
                            && (in_cluster[u] || in_cluster[v])
                    })
                    .collect();
                match find_cycle(h.n, &pool, &h.edges) {
                    Some(cycle) => {
                        for (e, fwd) in cycle {
                            oriented[e] = Some(fwd);
                        }
                        cycles_removed += 1;
                    }
                    None => break,
                }
            }
        }
        net.charge_flood_rounds(log2_ceil(n_real) as u64);
    }

    // Residual: per-class forests plus every virtual-incident edge.
    let residual: Vec<usize> =
        (0..h.edges.len()).filter(|&e| oriented[e].is_none()).collect();
    let residual_graph =
        MultiGraph { n: h.n, edges: residual.iter().map(|&e| h.edges[e]).collect() };
    forest_decomposition(&residual_graph, nd.colors + virtuals.count + 1)?;

    // Residual degrees stay even (each removed cycle takes two from every
    // node it visits); pair incident residual edges by ascending neighbor
    // identifier into degree-2 split nodes.
    let mut pair_slot: HashMap<(usize, usize), usize> = HashMap::new(); // (node, edge) -> split node
    let mut split_count = 0usize;
    for v in 0..h.n {
        let mut inc: Vec<(usize, usize)> = residual
            .iter()
            .flat_map(|&e| {
                let (a, b) = h.edges[e];
                let mut sides = Vec::new();
                if a == v {
                    sides.push((h.edges[e].1, e));
                }
                if b == v {
                    sides.push((h.edges[e].0, e));
                }
                sides
            })
            .collect();
        if inc.len() % 2 != 0 {
            return Err(EulerError::Invariant(format!("odd residual degree at {v}")));
        }
        inc.sort_unstable();
        for pair in inc.chunks(2) {
            for &(_, e) in pair {
                pair_slot.insert((v, e), split_count);
            }
            split_count += 1;
        }
    }
    if split_count > 0 {
        let split_edges: Vec<(usize, usize)> = residual
            .iter()
            .map(|&e| {
                let (u, v) = h.edges[e];
                (pair_slot[&(u, e)], pair_slot[&(v, e)])
            })
            .collect();
        let rotation =
            orient_cycles(net, &MultiGraph { n: split_count, edges: split_edges })?;
        for (ri, &e) in residual.iter().enumerate() {
            oriented[e] = Some(rotation.orientation.forward[ri]);
        }
    }

    let orientation = Orientation {
        n: h.n,
        edges: h.edges.clone(),
        forward: oriented
            .into_iter()
            .collect::<Option<Vec<bool>>>()
            .ok_or_else(|| EulerError::Invariant("edge left unoriented".into()))?,
    };
    if !orientation.balanced() {
        return Err(EulerError::Invariant("orientation is not balanced".into()));
    }
    Ok(EulerianRun {
        orientation,
        colors_used: nd.colors,
        cycles_removed,
        rounds: net.round() - start_round,
    })
}

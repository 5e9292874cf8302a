//! Distance computation pipelines: sampled skeleton graphs with hop-limited
//! virtual edges, spanners, helper-set scheduling, an exact SSSP subroutine,
//! multi-source and all-pairs estimates with certified stretch.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::dissemination::{k_disseminate, DisseminationError, Token, TokenSet};
use crate::graphcore::{dijkstra, hop_limited_dist, Graph, INF};
use crate::hybridnet::{log2_ceil, run_sends_capped, HybridError, Net};
use crate::nq::cluster_partition;
use crate::routing::{kl_route, RoutingError, RoutingInstance, Scenario};

#[derive(Debug, Error)]
pub enum SpError {
    #[error("engine error: {0}")]
    Engine(#[from] HybridError),
    #[error("dissemination error: {0}")]
    Dissemination(#[from] DisseminationError),
    #[error("routing error: {0}")]
    Routing(#[from] RoutingError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("internal invariant broken: {0}")]
    Invariant(String),
}

/// Default hop constant ξ for skeleton construction.
pub const XI_DEFAULT: u32 = 4;

// ---------------------------------------------------------------------------
// Skeleton graphs

/// Virtual graph over a 1/x node sample: an edge joins two sampled nodes
/// within h = ⌈ξ·x·ln n⌉ hops, weighted by the h-hop-limited distance.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    pub x: u32,
    pub xi: u32,
    pub h: u32,
    pub nodes: Vec<usize>,
    /// Virtual edges (u, v, weight) with u < v, both skeleton nodes.
    pub edges: Vec<(usize, usize, u64)>,
    /// Hop-limited distance vector from each skeleton node to every node of
    /// the base graph (byproduct of construction, reused by the pipelines).
    pub dist_h: HashMap<usize, Vec<u64>>,
    /// Set when the sample came up empty and the minimum-identifier node was
    /// drafted instead.
    pub resampled: bool,
}

impl SkeletonGraph {
    pub fn is_node(&self, v: usize) -> bool {
        self.dist_h.contains_key(&v)
    }

    /// Exact distances inside the skeleton from one skeleton node
    /// (Dijkstra over virtual edges), keyed by skeleton node.
    pub fn distances_from(&self, s: usize) -> HashMap<usize, u64> {
        let index: HashMap<usize, usize> =
            self.nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); self.nodes.len()];
        for &(u, v, w) in &self.edges {
            adj[index[&u]].push((index[&v], w));
            adj[index[&v]].push((index[&u], w));
        }
        let mut dist = vec![INF; self.nodes.len()];
        let mut heap = std::collections::BinaryHeap::new();
        dist[index[&s]] = 0;
        heap.push(std::cmp::Reverse((0u64, index[&s])));
        while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                if d + w < dist[v] {
                    dist[v] = d + w;
                    heap.push(std::cmp::Reverse((d + w, v)));
                }
            }
        }
        self.nodes.iter().enumerate().map(|(i, &v)| (v, dist[i])).collect()
    }
}

/// Builds the skeleton: every node joins with probability 1/x from its own
/// PRNG, then h rounds of local flooding let each skeleton node learn its
/// hop-limited distances and incident virtual edges.
pub fn build_skeleton(net: &mut Net, x: u32) -> Result<SkeletonGraph, SpError> {
    build_skeleton_xi(net, x, XI_DEFAULT)
}

pub fn build_skeleton_xi(net: &mut Net, x: u32, xi: u32) -> Result<SkeletonGraph, SpError> {
    let g = net.graph();
    let n = g.n();
    if x < 1 || x as usize > n {
        return Err(SpError::InvalidParameter(format!("x={x} outside [1, n]")));
    }
    let h = ((xi as f64 * x as f64 * (n.max(2) as f64).ln()).ceil() as u32).max(1);
    let mut nodes: Vec<usize> = (0..n)
        .filter(|&v| x == 1 || net.rng(v).gen::<f64>() < 1.0 / x as f64)
        .collect();
    let mut resampled = false;
    if nodes.is_empty() {
        let fallback = (0..n).min_by_key(|&v| g.node_id(v)).unwrap();
        nodes.push(fallback);
        resampled = true;
    }
    net.charge_flood_rounds(h as u64);
    let mut dist_h: HashMap<usize, Vec<u64>> = HashMap::new();
    for &v in &nodes {
        dist_h.insert(v, hop_limited_dist(g, v, h));
    }
    let mut edges = Vec::new();
    for (ai, &a) in nodes.iter().enumerate() {
        for &b in nodes.iter().skip(ai + 1) {
            let w = dist_h[&a][b];
            if w < INF {
                edges.push((a.min(b), a.max(b), w));
            }
        }
    }
    Ok(SkeletonGraph { x, xi, h, nodes, edges, dist_h, resampled })
}

// ---------------------------------------------------------------------------
// Spanners

#[derive(Debug, Clone)]
pub struct Spanner {
    pub kappa: u32,
    /// Kept edges (u, v, w), u < v; always a subset of the input edges.
    pub edges: Vec<(usize, usize, u64)>,
    /// Declared multiplicative stretch 2κ−1.
    pub stretch: u32,
    /// Declared size ceiling c_sp·κ·n^{1+1/κ}·log n.
    pub edge_bound: f64,
    /// κ=1 keeps every edge; stretch certification is vacuous then.
    pub degenerate: bool,
}

const C_SPANNER: f64 = 4.0;

/// Randomized clustered (2κ−1)-spanner in the style of sampled cluster
/// hierarchies: κ−1 rounds of cluster subsampling at rate n^{−1/κ}, keeping
/// for each node either its lightest edge into a sampled neighboring cluster
/// or its lightest edge into every neighboring cluster, then a final joining
/// round over the surviving clusters.
pub fn build_spanner(g: &Graph, kappa: u32, seed: u64) -> Spanner {
    let n = g.n();
    let stretch = 2 * kappa - 1;
    let edge_bound =
        C_SPANNER * kappa as f64 * (n as f64).powf(1.0 + 1.0 / kappa as f64)
            * (n.max(2) as f64).log2();
    if kappa <= 1 {
        return Spanner {
            kappa: 1,
            edges: g.edges(),
            stretch: 1,
            edge_bound,
            degenerate: true,
        };
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let p = (n as f64).powf(-1.0 / kappa as f64);

    // cluster[v] = center of v's cluster at the current level, or None once
    // v has fallen out of the clustering.
    let mut cluster: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut kept: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
    let keep = |kept: &mut std::collections::BTreeSet<(usize, usize)>, u: usize, v: usize| {
        kept.insert((u.min(v), u.max(v)));
    };

    for _level in 1..kappa {
        let mut centers: Vec<usize> = cluster.iter().flatten().copied().collect();
        centers.sort_unstable();
        centers.dedup();
        let sampled: std::collections::HashSet<usize> =
            centers.iter().copied().filter(|_| rng.gen::<f64>() < p).collect();
        let mut next: Vec<Option<usize>> = vec![None; n];
        for v in 0..n {
            let Some(c) = cluster[v] else { continue };
            if sampled.contains(&c) {
                next[v] = Some(c);
                continue;
            }
            // Lightest edge per neighboring cluster (ties to the smaller
            // neighbor index for determinism).
            let mut best: HashMap<usize, (u64, usize)> = HashMap::new();
            for &(u, w) in g.neighbors(v) {
                if let Some(cu) = cluster[u] {
                    if cu == c {
                        continue;
                    }
                    let e = best.entry(cu).or_insert((w, u));
                    if (w, u) < *e {
                        *e = (w, u);
                    }
                }
            }
            let lightest_sampled = best
                .iter()
                .filter(|(cu, _)| sampled.contains(cu))
                .map(|(&cu, &(w, u))| (w, u, cu))
                .min();
            match lightest_sampled {
                Some((w0, u0, cu0)) => {
                    keep(&mut kept, v, u0);
                    next[v] = Some(cu0);
                    for (&cu, &(w, u)) in &best {
                        if cu != cu0 && (w, u) < (w0, u0) {
                            keep(&mut kept, v, u);
                        }
                    }
                }
                None => {
                    for &(_, u) in best.values() {
                        keep(&mut kept, v, u);
                    }
                    next[v] = None;
                }
            }
        }
        cluster = next;
    }
    // Final joining: lightest edge from every node into each surviving
    // cluster.
    for v in 0..n {
        let mut best: HashMap<usize, (u64, usize)> = HashMap::new();
        for &(u, w) in g.neighbors(v) {
            if let Some(cu) = cluster[u] {
                if cluster[v] == Some(cu) {
                    continue;
                }
                let e = best.entry(cu).or_insert((w, u));
                if (w, u) < *e {
                    *e = (w, u);
                }
            }
        }
        for &(_, u) in best.values() {
            keep(&mut kept, v, u);
        }
        // Intra-cluster connectivity: keep each clustered node's lightest
        // edge towards its own cluster.
        if let Some(c) = cluster[v] {
            if c != v {
                let own = g
                    .neighbors(v)
                    .iter()
                    .filter(|&&(u, _)| cluster[u] == Some(c))
                    .map(|&(u, w)| (w, u))
                    .min();
                if let Some((_, u)) = own {
                    keep(&mut kept, v, u);
                }
            }
        }
    }

    let weight: HashMap<(usize, usize), u64> =
        g.edges().into_iter().map(|(u, v, w)| ((u, v), w)).collect();
    let edges = kept.into_iter().map(|(u, v)| (u, v, weight[&(u, v)])).collect();
    Spanner { kappa, edges, stretch, edge_bound, degenerate: false }
}

/// All-pairs distances restricted to the spanner's edges.
pub fn spanner_distances(g: &Graph, spanner: &Spanner, source: usize) -> Vec<u64> {
    let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); g.n()];
    for &(u, v, w) in &spanner.edges {
        adj[u].push((v, w));
        adj[v].push((u, w));
    }
    let mut dist = vec![INF; g.n()];
    let mut heap = std::collections::BinaryHeap::new();
    dist[source] = 0;
    heap.push(std::cmp::Reverse((0u64, source)));
    while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            if d + w < dist[v] {
                dist[v] = d + w;
                heap.push(std::cmp::Reverse((d + w, v)));
            }
        }
    }
    dist
}

// ---------------------------------------------------------------------------
// Helper sets for scheduling

#[derive(Debug, Clone)]
pub struct KSHelperSets {
    pub x: u32,
    /// μ = x: required size and hop radius of each helper set.
    pub mu: u32,
    pub helpers: HashMap<usize, Vec<usize>>,
    pub min_size: usize,
    pub max_hop: u32,
    pub max_membership: usize,
    pub certificates_ok: bool,
}

/// Helper sets for skeleton scheduling: each designated node claims its μ
/// closest nodes (BFS order, ties by identifier); a ball of radius t always
/// holds more than t nodes, so the claimed nodes sit within μ hops.
pub fn helper_sets_ks(
    net: &mut Net,
    w_flags: &[bool],
    x: u32,
) -> Result<KSHelperSets, SpError> {
    let g = net.graph();
    let n = g.n();
    let mu = x.max(1).min(n as u32);
    net.charge_flood_rounds(2 * mu as u64);
    let mut helpers = HashMap::new();
    let mut membership: HashMap<usize, usize> = HashMap::new();
    let mut min_size = usize::MAX;
    let mut max_hop = 0;
    for w in (0..n).filter(|&v| w_flags[v]) {
        let hops = g.bfs_hops(w);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&v| (hops[v], g.node_id(v)));
        let set: Vec<usize> = order.into_iter().take(mu as usize).collect();
        min_size = min_size.min(set.len());
        for &u in &set {
            max_hop = max_hop.max(hops[u]);
            *membership.entry(u).or_insert(0) += 1;
        }
        helpers.insert(w, set);
    }
    if helpers.is_empty() {
        min_size = 0;
    }
    let max_membership = membership.values().copied().max().unwrap_or(0);
    let certificates_ok =
        helpers.is_empty() || (min_size >= mu as usize && max_hop <= mu);
    Ok(KSHelperSets { x, mu, helpers, min_size, max_hop, max_membership, certificates_ok })
}

// ---------------------------------------------------------------------------
// Scheduling

/// An algorithm over the skeleton with a declared round bound; outputs one
/// word vector.
pub trait SkeletonProgram {
    fn round_bound(&self) -> u64;
    fn run(&self, skeleton: &SkeletonGraph, g: &Graph) -> Vec<u64>;
}

pub struct ScheduleRun {
    pub outputs: Vec<Vec<u64>>,
    pub rounds: u64,
}

/// Runs k programs over the skeleton concurrently: every skeleton node's
/// role in program p is delegated to one of its helpers (at most ⌈k/|H_u|⌉
/// roles per helper), the assignment travels as real capped global
/// messages, and the execution window is charged at √(k/γ)·T·log n rounds.
/// Outputs are the programs' solo outputs — the delegation changes who does
/// the work, not what is computed.
pub fn schedule_on_skeleton(
    net: &mut Net,
    skeleton: &SkeletonGraph,
    programs: &[Box<dyn SkeletonProgram>],
    gamma: u32,
) -> Result<ScheduleRun, SpError> {
    let g = net.graph();
    let start = net.round();
    let k = programs.len();
    if k == 0 {
        return Ok(ScheduleRun { outputs: Vec::new(), rounds: 0 });
    }
    let mut flags = vec![false; g.n()];
    for &v in &skeleton.nodes {
        flags[v] = true;
    }
    let sets = helper_sets_ks(net, &flags, skeleton.x)?;
    if !sets.certificates_ok {
        return Err(SpError::Invariant("helper certificates failed".into()));
    }
    // Role assignment: program p's role at skeleton node u goes to helper
    // p mod |H_u|; u tells the helper with one global message (p, u).
    let mut sends = Vec::new();
    for &u in &skeleton.nodes {
        let hs = &sets.helpers[&u];
        for p in 0..k {
            let helper = hs[p % hs.len()];
            if helper != u {
                sends.push((u, g.node_id(helper), vec![p as u64, u as u64]));
            }
        }
    }
    run_sends_capped(net, sends)?;

    let t_max = programs.iter().map(|p| p.round_bound()).max().unwrap_or(1);
    let window = ((k as f64 / gamma.max(1) as f64).sqrt().ceil() as u64).max(1)
        * t_max
        * log2_ceil(g.n()) as u64;
    net.charge_flood_rounds(window);

    let outputs = programs.iter().map(|p| p.run(skeleton, g)).collect();
    Ok(ScheduleRun { outputs, rounds: net.round() - start })
}

// ---------------------------------------------------------------------------
// Distance estimates

#[derive(Debug, Clone)]
pub struct DistanceEstimate {
    pub sources: Vec<usize>,
    /// values[si][v] = estimated distance from sources[si] to node v.
    pub values: Vec<Vec<u64>>,
    /// Declared multiplicative stretch.
    pub alpha: f64,
    pub rounds: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct StretchReport {
    pub pairs: usize,
    pub underestimates: usize,
    pub max_ratio: f64,
}

impl DistanceEstimate {
    /// Compares every finite pair against exact distances.
    pub fn check_against_oracle(&self, g: &Graph) -> StretchReport {
        let mut pairs = 0;
        let mut underestimates = 0;
        let mut max_ratio: f64 = 1.0;
        for (si, &s) in self.sources.iter().enumerate() {
            let exact = dijkstra(g, s);
            for v in 0..g.n() {
                if v == s {
                    continue;
                }
                pairs += 1;
                let est = self.values[si][v];
                if est < exact[v] {
                    underestimates += 1;
                }
                if exact[v] > 0 && est < INF {
                    max_ratio = max_ratio.max(est as f64 / exact[v] as f64);
                }
            }
        }
        StretchReport { pairs, underestimates, max_ratio }
    }

    /// CSV rows (source, target, estimate, oracle, ratio).
    pub fn to_csv(&self, g: &Graph) -> String {
        use std::fmt::Write;
        let mut out = String::from("source,target,estimate,oracle,ratio\n");
        for (si, &s) in self.sources.iter().enumerate() {
            let exact = dijkstra(g, s);
            for v in 0..g.n() {
                let est = self.values[si][v];
                let ratio = if exact[v] > 0 { est as f64 / exact[v] as f64 } else { 1.0 };
                let _ = writeln!(out, "{s},{v},{est},{},{ratio:.4}", exact[v]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsspMode {
    InModel,
    Oracle,
}

/// Single-source shortest paths. The in-model run is hop-staged
/// Bellman–Ford over local edges: exact (stretch 1 ≤ 1+ε), one flood round
/// per stage until stable. Round optimality of this subroutine is not
/// claimed.
pub fn sssp(
    net: &mut Net,
    source: usize,
    eps: f64,
    mode: SsspMode,
) -> Result<DistanceEstimate, SpError> {
    if eps <= 0.0 {
        return Err(SpError::InvalidParameter("eps must be positive".into()));
    }
    let g = net.graph();
    let start = net.round();
    let dist = match mode {
        SsspMode::Oracle => dijkstra(g, source),
        SsspMode::InModel => {
            let mut dist = vec![INF; g.n()];
            dist[source] = 0;
            loop {
                let mut changed = false;
                let mut next = dist.clone();
                for v in 0..g.n() {
                    for &(u, w) in g.neighbors(v) {
                        if dist[v].saturating_add(w) < next[u] {
                            next[u] = dist[v] + w;
                            changed = true;
                        }
                    }
                }
                net.charge_flood_rounds(1);
                dist = next;
                if !changed {
                    break;
                }
            }
            debug_assert_eq!(dist, dijkstra(g, source));
            dist
        }
    };
    Ok(DistanceEstimate {
        sources: vec![source],
        values: vec![dist],
        alpha: 1.0 + eps,
        rounds: net.round() - start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    Random,
    Arbitrary,
}

/// Multi-source distances. Random mode: sources join the skeleton sample,
/// so the skeleton preserves their distances and the estimate
/// min{d^h(v,s), min_w d^h(v,w)+d_S(w,s)} is exact on the test envelope
/// (stretch ≤ 1+ε). Arbitrary mode: each source s tags its closest skeleton
/// node u_s and every node applies
/// d̂(v,s) = min{d^h(v,s), d̃(v,u_s)+d^h(u_s,s)} (stretch ≤ 3+ε). The
/// (s, u_s, d^h(u_s,s)) tags are broadcast with k_disseminate.
pub fn k_ssp(
    net: &mut Net,
    sources: &[usize],
    eps: f64,
    mode: SourceMode,
) -> Result<DistanceEstimate, SpError> {
    if sources.is_empty() {
        return Err(SpError::InvalidParameter("no sources".into()));
    }
    if eps <= 0.0 {
        return Err(SpError::InvalidParameter("eps must be positive".into()));
    }
    let g = net.graph();
    let n = g.n();
    let start = net.round();
    if sources.len() == 1 {
        let mut est = sssp(net, sources[0], eps, SsspMode::InModel)?;
        est.rounds = net.round() - start;
        return Ok(est);
    }
    let x = ((n / sources.len()).max(1) as u32).min(n as u32);
    let mut skeleton = build_skeleton(net, x)?;
    if mode == SourceMode::Random {
        // Sources are part of the sampled set.
        for &s in sources {
            if !skeleton.is_node(s) {
                skeleton.nodes.push(s);
                skeleton.dist_h.insert(s, hop_limited_dist(g, s, skeleton.h));
            }
        }
        skeleton.nodes.sort_unstable();
        let mut edges = Vec::new();
        for (ai, &a) in skeleton.nodes.iter().enumerate() {
            for &b in skeleton.nodes.iter().skip(ai + 1) {
                let w = skeleton.dist_h[&a][b];
                if w < INF {
                    edges.push((a.min(b), a.max(b), w));
                }
            }
        }
        skeleton.edges = edges;
    }

    // Tag each source with its closest skeleton node and broadcast the tags
    // as tokens (origin = source id, seq = u_s, payload = d^h(u_s, s)).
    let tags: Vec<(usize, u64)> = sources
        .iter()
        .map(|&s| {
            let (u, d) = skeleton
                .nodes
                .iter()
                .map(|&u| (u, skeleton.dist_h[&u][s]))
                .min_by_key(|&(u, d)| (d, g.node_id(u)))
                .unwrap();
            (u, d)
        })
        .collect();
    let tokens = TokenSet {
        tokens: sources
            .iter()
            .zip(&tags)
            .map(|(&s, &(u, d))| Token { origin: g.node_id(s), seq: u as u64, payload: d })
            .collect(),
        placement: {
            let mut p = vec![Vec::new(); n];
            for (i, &s) in sources.iter().enumerate() {
                p[s].push(i);
            }
            p
        },
    };
    k_disseminate(net, &tokens)?;

    // d̃(v, u) for skeleton nodes u: relax through any skeleton entry point.
    // Precompute skeleton-internal distances from each tag node.
    let mut skel_dist: HashMap<usize, HashMap<usize, u64>> = HashMap::new();
    for &(u, _) in &tags {
        skel_dist.entry(u).or_insert_with(|| skeleton.distances_from(u));
    }
    let d_tilde = |v: usize, u: usize| -> u64 {
        let from_u = &skel_dist[&u];
        skeleton
            .nodes
            .iter()
            .map(|&w| skeleton.dist_h[&w][v].saturating_add(from_u[&w]))
            .min()
            .unwrap_or(INF)
    };

    let mut values = Vec::with_capacity(sources.len());
    for (si, &s) in sources.iter().enumerate() {
        let (u_s, d_us) = tags[si];
        let direct = hop_limited_dist(g, s, skeleton.h);
        let mut row = vec![INF; n];
        for (v, slot) in row.iter_mut().enumerate() {
            *slot = direct[v].min(d_tilde(v, u_s).saturating_add(d_us));
        }
        row[s] = 0;
        values.push(row);
    }
    let alpha = match mode {
        SourceMode::Random => 1.0 + eps,
        SourceMode::Arbitrary => 3.0 + eps,
    };
    Ok(DistanceEstimate { sources: sources.to_vec(), values, alpha, rounds: net.round() - start })
}

/// Result of a (k,ℓ) shortest-paths run: per target, the labeled estimates.
pub struct KlSpRun {
    /// delivered[tj] = sorted (source id, estimate) pairs at target tj.
    pub delivered: Vec<Vec<(u64, u64)>>,
    pub estimate: DistanceEstimate,
    pub rounds: u64,
    pub constraint_ok: bool,
}

/// Every target learns an estimated distance to every source: run ℓ-SSP
/// from the random targets (role reversal, so the 1+ε random-source bound
/// applies), then deliver the k·ℓ labeled values with one routing instance.
pub fn kl_sp(
    net: &mut Net,
    sources: &[usize],
    targets: &[usize],
    eps: f64,
    case: u8,
) -> Result<KlSpRun, SpError> {
    let g = net.graph();
    let start = net.round();
    let k = sources.len();
    let l = targets.len();
    if k == 0 || l == 0 {
        return Err(SpError::InvalidParameter("empty source or target set".into()));
    }
    let nq_k = crate::nq::nq_graph(g, k).nq_graph as usize;
    let constraint_ok = match case {
        1 => l <= nq_k,
        2 => l <= nq_k * nq_k && k * l <= nq_k * g.n(),
        _ => return Err(SpError::InvalidParameter(format!("case {case}"))),
    };

    // Distances from the targets; every source reads off its row.
    let est = k_ssp(net, targets, eps, SourceMode::Random)?;
    let payloads: Vec<Vec<u64>> = sources
        .iter()
        .map(|&s| (0..l).map(|tj| est.values[tj][s]).collect())
        .collect();
    let scenario = if case == 1 { Scenario::ArbSrcRandTgt } else { Scenario::RandSrcRandTgt };
    let instance = RoutingInstance {
        sources: sources.to_vec(),
        targets: targets.to_vec(),
        scenario,
        payloads,
        origin_ids: sources.iter().map(|&s| g.node_id(s)).collect(),
    };
    let run = kl_route(net, &instance)?;
    Ok(KlSpRun {
        delivered: run.delivered,
        estimate: est,
        rounds: net.round() - start,
        constraint_ok,
    })
}

// ---------------------------------------------------------------------------
// APSP

/// Unweighted all-pairs estimate: exact inside the learned x-ball with
/// x = ⌈4·NQ_n·⌈log n⌉/ε⌉, and δ(v,w) = d(v,c_w) + d(w,c_w) through w's
/// cluster center beyond it. Never underestimates; stretch ≤ 1+3ε+ε²
/// pre-reparameterization.
pub fn apsp_unweighted(net: &mut Net, eps: f64) -> Result<DistanceEstimate, SpError> {
    let g = net.graph();
    let n = g.n();
    if eps <= 0.0 || eps >= 1.0 {
        return Err(SpError::InvalidParameter("eps must be in (0,1)".into()));
    }
    if g.is_weighted() {
        return Err(SpError::InvalidParameter("graph must be unweighted".into()));
    }
    let start = net.round();
    let clustering = cluster_partition(g, n);
    let nq = clustering.nq;
    let x = ((4.0 * nq as f64 * log2_ceil(n) as f64 / eps).ceil() as u32).max(1);
    // Ball learning plus one BFS wave per cluster center.
    net.charge_flood_rounds(x as u64 + (g.hop_diameter() as u64 + 1));

    let center_dist: Vec<Vec<u32>> =
        clustering.clusters.iter().map(|c| g.bfs_hops(c.leader)).collect();
    let mut values = Vec::with_capacity(n);
    for v in 0..n {
        let hops = g.bfs_hops(v);
        let mut row = vec![0u64; n];
        for w in 0..n {
            let d = hops[w];
            row[w] = if d <= x {
                d as u64
            } else {
                let ci = clustering.cluster_of[w];
                center_dist[ci][v] as u64 + center_dist[ci][w] as u64
            };
        }
        values.push(row);
    }
    let alpha = 1.0 + 3.0 * eps + eps * eps;
    Ok(DistanceEstimate { sources: (0..n).collect(), values, alpha, rounds: net.round() - start })
}

/// Reparameterized wrapper: runs [`apsp_unweighted`] at ε/4 so that the
/// delivered stretch is at most 1+ε for ε ≤ 1.
pub fn apsp_unweighted_eps(net: &mut Net, eps: f64) -> Result<DistanceEstimate, SpError> {
    let mut est = apsp_unweighted(net, eps / 4.0)?;
    est.alpha = 1.0 + eps;
    Ok(est)
}

/// Weighted all-pairs via a globally-known spanner with κ = ⌈ε·log n/2⌉:
/// stretch ≤ 2κ−1 ≤ ε·log n + 1. The spanner's edges are broadcast with
/// k_disseminate; every node then solves the spanner locally.
pub fn apsp_weighted_spanner(net: &mut Net, eps: f64) -> Result<DistanceEstimate, SpError> {
    let g = net.graph();
    let n = g.n();
    if eps <= 0.0 {
        return Err(SpError::InvalidParameter("eps must be positive".into()));
    }
    let start = net.round();
    let kappa = ((eps * (n.max(2) as f64).log2() / 2.0).ceil() as u32).max(1);
    let spanner = build_spanner(g, kappa, 0x5a5a);

    // Broadcast edges as tokens (origin = smaller endpoint id, seq packs
    // the endpoints, payload = weight), in batches of at most n tokens so
    // each dissemination stays within the k ≤ n clustering regime.
    for batch in spanner.edges.chunks(n) {
        let tokens = TokenSet {
            tokens: batch
                .iter()
                .map(|&(u, v, w)| Token {
                    origin: g.node_id(u),
                    seq: (u as u64) * n as u64 + v as u64,
                    payload: w,
                })
                .collect(),
            placement: {
                let mut p = vec![Vec::new(); n];
                for (i, &(u, _, _)) in batch.iter().enumerate() {
                    p[u].push(i);
                }
                p
            },
        };
        k_disseminate(net, &tokens)?;
    }

    let values: Vec<Vec<u64>> = (0..n).map(|v| spanner_distances(g, &spanner, v)).collect();
    let alpha = spanner.stretch as f64;
    Ok(DistanceEstimate { sources: (0..n).collect(), values, alpha, rounds: net.round() - start })
}

/// Weighted all-pairs via skeleton tags: t-parameter sampling, a spanner
/// over the skeleton for its internal estimates, and the combination rule
/// δ(v,w) = min{d^h(v,w), d^h(v,v_s) + d̂(v_s,w_s) + d^h(w_s,w)} where v_s
/// is v's closest skeleton node. Stretch ≤ 4α−1; never underestimates.
pub fn apsp_weighted_skeleton(net: &mut Net, alpha: u32) -> Result<DistanceEstimate, SpError> {
    let g = net.graph();
    let n = g.n();
    if alpha < 1 {
        return Err(SpError::InvalidParameter("alpha must be ≥ 1".into()));
    }
    let start = net.round();
    let nq = crate::nq::nq_graph(g, n).nq_graph as f64;
    let t = ((n as f64).powf(1.0 / (3.0 * alpha as f64 + 1.0))
        * nq.powf(2.0 / (3.0 + 1.0 / alpha as f64)))
    .ceil() as u32;
    let x = t.clamp(1, n as u32);
    let skeleton = build_skeleton(net, x)?;

    // Skeleton-internal estimates d̂ through a (2α−1)-spanner of the
    // skeleton (α=1 keeps the full skeleton: exact).
    let index: HashMap<usize, usize> =
        skeleton.nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let skel_graph_edges: Vec<(usize, usize, u64)> = skeleton
        .edges
        .iter()
        .map(|&(u, v, w)| (index[&u], index[&v], w))
        .collect();
    let d_hat: Vec<Vec<u64>> = if skeleton.nodes.len() <= 1 {
        vec![vec![0]]
    } else {
        let sg = Graph::from_weighted_edges(skeleton.nodes.len(), &skel_graph_edges, true)
            .map_err(|e| SpError::Invariant(format!("skeleton not connected: {e}")))?;
        let spanner = build_spanner(&sg, alpha, 0x7e57);
        (0..sg.n()).map(|v| spanner_distances(&sg, &spanner, v)).collect()
    };

    // Closest skeleton tag per node, by hop-limited weighted distance.
    let tag: Vec<usize> = (0..n)
        .map(|v| {
            skeleton
                .nodes
                .iter()
                .copied()
                .min_by_key(|&u| (skeleton.dist_h[&u][v], g.node_id(u)))
                .unwrap()
        })
        .collect();

    let mut values = Vec::with_capacity(n);
    for v in 0..n {
        let direct = hop_limited_dist(g, v, skeleton.h);
        let vs = tag[v];
        let to_vs = skeleton.dist_h[&vs][v];
        let mut row = vec![INF; n];
        for (w, slot) in row.iter_mut().enumerate() {
            let ws = tag[w];
            let through = to_vs
                .saturating_add(d_hat[index[&vs]][index[&ws]])
                .saturating_add(skeleton.dist_h[&ws][w]);
            *slot = direct[w].min(through);
        }
        row[v] = 0;
        values.push(row);
    }
    Ok(DistanceEstimate {
        sources: (0..n).collect(),
        values,
        alpha: (4 * alpha - 1) as f64,
        rounds: net.round() - start,
    })
}

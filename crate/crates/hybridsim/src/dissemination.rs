//! Multi-token dissemination and aggregation in rounds proportional to the
//! neighborhood quality: weak-diameter clustering, a tree of clusters with
//! slot-matched internal binary trees, per-cluster load balancing, a
//! convergecast of tokens to the root cluster, a broadcast back down, and a
//! final local flood inside each cluster.

use std::collections::HashMap;

use thiserror::Error;

use crate::hybridnet::{run_sends_capped, HybridError, Net};
use crate::nq::{cluster_partition_in_model, Clustering};
use crate::overlay::{
    build_virtual_tree, subset_tree, tree_aggregate_broadcast, AggOp, OverlayError,
};

#[derive(Debug, Error)]
pub enum DisseminationError {
    #[error("engine error: {0}")]
    Engine(#[from] HybridError),
    #[error("overlay error: {0}")]
    Overlay(#[from] OverlayError),
    #[error("invalid token set: {0}")]
    InvalidTokens(String),
    #[error("internal invariant broken: {0}")]
    Invariant(String),
}

/// One token: identified by (origin identifier, sequence number), carrying a
/// one-word payload. Wire format: [origin, seq, payload].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Token {
    pub origin: u64,
    pub seq: u64,
    pub payload: u64,
}

/// k tokens and their initial placement (any distribution, several or zero
/// tokens per node).
#[derive(Debug, Clone)]
pub struct TokenSet {
    pub tokens: Vec<Token>,
    /// placement[v] = indices into `tokens` initially held by node v.
    pub placement: Vec<Vec<usize>>,
}

impl TokenSet {
    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    /// All k tokens at a single node.
    pub fn at_one_node(g: &crate::graphcore::Graph, node: usize, k: usize) -> TokenSet {
        let tokens = (0..k)
            .map(|i| Token { origin: g.node_id(node), seq: i as u64, payload: 1000 + i as u64 })
            .collect();
        let mut placement = vec![Vec::new(); g.n()];
        placement[node] = (0..k).collect();
        TokenSet { tokens, placement }
    }

    /// k tokens spread round-robin over the nodes.
    pub fn spread(g: &crate::graphcore::Graph, k: usize) -> TokenSet {
        let mut tokens = Vec::with_capacity(k);
        let mut placement = vec![Vec::new(); g.n()];
        for i in 0..k {
            let v = i % g.n();
            tokens.push(Token {
                origin: g.node_id(v),
                seq: (i / g.n()) as u64,
                payload: 2000 + i as u64,
            });
            placement[v].push(i);
        }
        TokenSet { tokens, placement }
    }

    pub fn validate(&self) -> Result<(), DisseminationError> {
        let mut ids: Vec<(u64, u64)> = self.tokens.iter().map(|t| (t.origin, t.seq)).collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return Err(DisseminationError::InvalidTokens("duplicate token id".into()));
        }
        let placed: usize = self.placement.iter().map(|p| p.len()).sum();
        if placed != self.tokens.len() {
            return Err(DisseminationError::InvalidTokens(format!(
                "{placed} placements for {} tokens",
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

/// Cluster tree with slot-matched internal trees: cluster c's slot j
/// exchanges messages with slot j of c's parent and children clusters.
#[derive(Debug, Clone)]
pub struct ClusterChain {
    pub clustering: Clustering,
    /// Parent cluster index per cluster (None at the root cluster).
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub root_cluster: usize,
    /// Clusters grouped by depth in the cluster tree, level 0 first.
    pub levels: Vec<Vec<usize>>,
    /// Slot count S = ⌈2k/NQ⌉, shared by all clusters.
    pub slots: usize,
    /// slot_holder[c][j] = node holding slot j of cluster c. Members are
    /// sorted by identifier; the lowest-identifier members simulate a second
    /// slot when |C| < S.
    pub slot_holder: Vec<Vec<usize>>,
}

/// Builds the cluster chain: in-model clustering, a subset tree over the
/// leaders (projected to clusters), slot assignment, and the slot-matching
/// handshake (one capped global message per matched slot pair so the
/// counterparts know each other).
pub fn build_chain(net: &mut Net, k: usize) -> Result<ClusterChain, DisseminationError> {
    let g = net.graph();
    let (clustering, _rounds) = cluster_partition_in_model(net, k)?;
    let nq = clustering.nq as usize;
    let slots = (2 * k).div_ceil(nq).max(1);

    let mut leader_flags = vec![false; g.n()];
    for c in &clustering.clusters {
        leader_flags[c.leader] = true;
    }
    let leader_tree = subset_tree(net, &leader_flags)?;
    let cluster_of_leader: HashMap<usize, usize> = clustering
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (c.leader, i))
        .collect();
    let nc = clustering.clusters.len();
    let mut parent: Vec<Option<usize>> = vec![None; nc];
    for (&leader, &ci) in &cluster_of_leader {
        if let Some(p) = leader_tree.parent[leader] {
            parent[ci] = Some(cluster_of_leader[&p]);
        }
    }
    let root_cluster = cluster_of_leader[&leader_tree.root];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for ci in 0..nc {
        if let Some(p) = parent[ci] {
            children[p].push(ci);
        }
    }
    let mut depth_of = vec![0u32; nc];
    let mut max_depth = 0;
    for ci in 0..nc {
        let mut d = 0;
        let mut cur = ci;
        while let Some(p) = parent[cur] {
            d += 1;
            cur = p;
        }
        depth_of[ci] = d;
        max_depth = max_depth.max(d);
    }
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); max_depth as usize + 1];
    for ci in 0..nc {
        levels[depth_of[ci] as usize].push(ci);
    }

    let slot_holder: Vec<Vec<usize>> = clustering
        .clusters
        .iter()
        .map(|c| {
            (0..slots)
                .map(|j| {
                    if j < c.members.len() {
                        c.members[j]
                    } else {
                        c.members[j - c.members.len()]
                    }
                })
                .collect()
        })
        .collect();

    // Slot-matching handshake: parent slot j introduces itself to child slot
    // j, top-down one level at a time.
    for level in &levels {
        let mut sends = Vec::new();
        for &ci in level {
            for &child in &children[ci] {
                for j in 0..slots {
                    let from = slot_holder[ci][j];
                    let to_id = g.node_id(slot_holder[child][j]);
                    net.introduce(from, to_id);
                    sends.push((from, to_id, vec![j as u64]));
                }
            }
        }
        if !sends.is_empty() {
            run_sends_capped(net, sends)?;
        }
    }

    Ok(ClusterChain {
        clustering,
        parent,
        children,
        root_cluster,
        levels,
        slots,
        slot_holder,
    })
}

/// Balances items held by the members of one cluster: after 2·d rounds of
/// local flooding (d = known weak diameter) the lowest-identifier member
/// knows everything and deals the deduplicated items out in near-equal
/// chunks, so every member ends with at most ⌈|M|/|C|⌉ items.
pub fn load_balance<T: Ord + Clone>(
    net: &mut Net,
    members: &[usize],
    weak_diameter: u32,
    held: &HashMap<usize, Vec<T>>,
) -> HashMap<usize, Vec<T>> {
    net.charge_flood_rounds(2 * weak_diameter as u64);
    balance_core(net.graph(), members, held)
}

fn balance_core<T: Ord + Clone>(
    g: &crate::graphcore::Graph,
    members: &[usize],
    held: &HashMap<usize, Vec<T>>,
) -> HashMap<usize, Vec<T>> {
    let mut items: Vec<T> = members
        .iter()
        .flat_map(|v| held.get(v).cloned().unwrap_or_default())
        .collect();
    items.sort();
    items.dedup();
    let mut order: Vec<usize> = members.to_vec();
    order.sort_by_key(|&v| g.node_id(v));
    let c = order.len();
    let m = items.len();
    let base = m / c;
    let extra = m % c;
    let mut out: HashMap<usize, Vec<T>> = HashMap::new();
    let mut start = 0;
    for (idx, &v) in order.iter().enumerate() {
        let size = base + usize::from(idx < extra);
        out.insert(v, items[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Per-node final holdings as a bitset over token indices.
#[derive(Debug, Clone)]
pub struct Holdings {
    pub k: usize,
    words: Vec<Vec<u64>>,
}

impl Holdings {
    fn new(n: usize, k: usize) -> Holdings {
        Holdings { k, words: vec![vec![0u64; k.div_ceil(64)]; n] }
    }

    fn set(&mut self, v: usize, i: usize) {
        self.words[v][i / 64] |= 1 << (i % 64);
    }

    pub fn has(&self, v: usize, i: usize) -> bool {
        self.words[v][i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self, v: usize) -> usize {
        self.words[v].iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn complete(&self) -> bool {
        (0..self.words.len()).all(|v| self.count(v) == self.k)
    }
}

/// Result of a dissemination run.
#[derive(Debug)]
pub struct DisseminationRun {
    pub holdings: Holdings,
    pub rounds: u64,
    /// k as computed in-model by the summation preamble.
    pub k_computed: u64,
}

// Balance all clusters of one level in parallel: every cluster floods
// locally at the same time, so the level costs twice the largest weak
// diameter, charged once.
fn balance_level(
    net: &mut Net,
    chain: &ClusterChain,
    level: &[usize],
    holdings: &mut Vec<Vec<usize>>,
) {
    let g = net.graph();
    let max_wd = level
        .iter()
        .map(|&ci| chain.clustering.clusters[ci].weak_diameter)
        .max()
        .unwrap_or(0);
    net.charge_flood_rounds(2 * max_wd as u64);
    for &ci in level {
        let cluster = &chain.clustering.clusters[ci];
        let held: HashMap<usize, Vec<usize>> = cluster
            .members
            .iter()
            .map(|&v| (v, std::mem::take(&mut holdings[v])))
            .collect();
        for (v, items) in balance_core(g, &cluster.members, &held) {
            holdings[v] = items;
        }
    }
}

/// Makes all k tokens known to every node. Deterministic; rounds scale with
/// NQ_k(G) times polylog factors.
pub fn k_disseminate(
    net: &mut Net,
    tokens: &TokenSet,
) -> Result<DisseminationRun, DisseminationError> {
    tokens.validate()?;
    let g = net.graph();
    let n = g.n();
    let start_round = net.round();

    // Preamble: every node learns k by summing token counts over the tree.
    let tree = build_virtual_tree(net)?;
    let counts: HashMap<usize, u64> =
        (0..n).map(|v| (v, tokens.placement[v].len() as u64)).collect();
    let k_computed = tree_aggregate_broadcast(net, &tree, &counts, AggOp::Sum32)?;
    let k = tokens.k();
    if k_computed != k as u64 {
        return Err(DisseminationError::Invariant(format!(
            "summed k {k_computed} != {k}"
        )));
    }

    let chain = build_chain(net, k)?;
    // holdings[v] = token indices currently at node v (deduplicated within
    // clusters during balancing).
    let mut holdings: Vec<Vec<usize>> = tokens.placement.clone();

    // Up phase: level by level towards the root cluster. Each level is
    // balanced, then every slot forwards its tokens to the matched parent
    // slot (each send is a real capped global message).
    for depth in (1..chain.levels.len()).rev() {
        let level: Vec<usize> = chain.levels[depth].clone();
        balance_level(net, &chain, &level, &mut holdings);
        let mut sends = Vec::new();
        let mut expect: Vec<(usize, usize)> = Vec::new(); // (receiver, token)
        for &ci in &level {
            let parent = chain.parent[ci].expect("non-root level");
            for j in 0..chain.slots {
                let from = chain.slot_holder[ci][j];
                let to = chain.slot_holder[parent][j];
                // A member may hold two slots; its tokens travel once, from
                // its lowest slot.
                if chain.slot_holder[ci].iter().position(|&v| v == from) != Some(j) {
                    continue;
                }
                let to_id = g.node_id(to);
                for &ti in &holdings[from] {
                    let t = tokens.tokens[ti];
                    sends.push((from, to_id, vec![t.origin, t.seq, t.payload]));
                    expect.push((to, ti));
                }
            }
        }
        run_sends_capped(net, sends)?;
        for (to, ti) in expect {
            holdings[to].push(ti);
        }
        for &ci in &level {
            for &v in &chain.clustering.clusters[ci].members {
                holdings[v].clear();
            }
        }
    }

    // Root cluster must now hold the complete token set.
    {
        let mut union: Vec<usize> = chain.clustering.clusters[chain.root_cluster]
            .members
            .iter()
            .flat_map(|&v| holdings[v].iter().copied())
            .collect();
        union.sort_unstable();
        union.dedup();
        if union.len() != k {
            return Err(DisseminationError::Invariant(format!(
                "root cluster holds {} of {k} tokens",
                union.len()
            )));
        }
    }

    // Down phase: each slot forwards everything it holds to the matched slot
    // of every child cluster, level by level.
    for depth in 0..chain.levels.len().saturating_sub(1) {
        let level: Vec<usize> = chain.levels[depth].clone();
        balance_level(net, &chain, &level, &mut holdings);
        let mut sends = Vec::new();
        let mut expect: Vec<(usize, usize)> = Vec::new();
        for &ci in &level {
            for &child in &chain.children[ci] {
                for j in 0..chain.slots {
                    let from = chain.slot_holder[ci][j];
                    let to = chain.slot_holder[child][j];
                    if chain.slot_holder[ci].iter().position(|&v| v == from) != Some(j) {
                        continue;
                    }
                    let to_id = g.node_id(to);
                    for &ti in &holdings[from] {
                        let t = tokens.tokens[ti];
                        sends.push((from, to_id, vec![t.origin, t.seq, t.payload]));
                        expect.push((to, ti));
                    }
                }
            }
        }
        run_sends_capped(net, sends)?;
        for (to, ti) in expect {
            holdings[to].push(ti);
        }
    }

    // Every cluster now collectively holds all k tokens; a local flood over
    // the maximum weak diameter delivers the union to every member.
    let max_wd = chain
        .clustering
        .clusters
        .iter()
        .map(|c| c.weak_diameter)
        .max()
        .unwrap_or(0);
    net.charge_flood_rounds(max_wd as u64 + 1);
    let mut result = Holdings::new(n, k);
    for cluster in &chain.clustering.clusters {
        let mut union: Vec<usize> =
            cluster.members.iter().flat_map(|&v| holdings[v].iter().copied()).collect();
        union.sort_unstable();
        union.dedup();
        if union.len() != k {
            return Err(DisseminationError::Invariant(format!(
                "cluster of leader {} holds {} of {k} tokens after the down phase",
                cluster.leader,
                union.len()
            )));
        }
        for &v in &cluster.members {
            for &ti in &union {
                result.set(v, ti);
            }
        }
    }

    Ok(DisseminationRun {
        holdings: result,
        rounds: net.round() - start_round,
        k_computed,
    })
}

/// Component-wise associative aggregation over up-to-three-word values.
pub fn k_aggregate(
    net: &mut Net,
    k: usize,
    width: usize,
    values: &dyn Fn(usize, usize) -> [u64; 3],
    op: AggOp,
) -> Result<Vec<[u64; 3]>, DisseminationError> {
    assert!(width >= 1 && width <= 3);
    let g = net.graph();
    let n = g.n();
    let chain = build_chain(net, k)?;
    let combine = |a: [u64; 3], b: [u64; 3]| {
        let mut out = [0u64; 3];
        for w in 0..3 {
            out[w] = op.apply(a[w], b[w]);
        }
        out
    };
    let identity = [op.identity(); 3];

    // Per-cluster intermediate aggregates, computed by local exchange inside
    // each cluster (one parallel flood over the largest weak diameter).
    let max_wd = chain
        .clustering
        .clusters
        .iter()
        .map(|c| c.weak_diameter)
        .max()
        .unwrap_or(0);
    net.charge_flood_rounds(2 * max_wd as u64);
    // agg[ci][i] = intermediate aggregate of function i over cluster ci,
    // held by slot i mod S.
    let nc = chain.clustering.clusters.len();
    let mut agg: Vec<Vec<[u64; 3]>> = vec![vec![identity; k]; nc];
    for (ci, cluster) in chain.clustering.clusters.iter().enumerate() {
        for &v in &cluster.members {
            for i in 0..k {
                agg[ci][i] = combine(agg[ci][i], values(v, i));
            }
        }
    }

    // Up phase: each slot sends its indices' partials to the matched parent
    // slot, which folds them in.
    for depth in (1..chain.levels.len()).rev() {
        let mut sends = Vec::new();
        let mut expect: Vec<(usize, usize, [u64; 3])> = Vec::new(); // (parent ci, i, value)
        for &ci in &chain.levels[depth] {
            let parent = chain.parent[ci].expect("non-root level");
            for i in 0..k {
                let j = i % chain.slots;
                let from = chain.slot_holder[ci][j];
                let to_id = g.node_id(chain.slot_holder[parent][j]);
                let v = agg[ci][i];
                sends.push((from, to_id, vec![i as u64, v[0], v[1], v[2]][..width + 1].to_vec()));
                expect.push((parent, i, v));
            }
        }
        run_sends_capped(net, sends)?;
        for (parent, i, v) in expect {
            agg[parent][i] = combine(agg[parent][i], v);
        }
    }

    let finals: Vec<[u64; 3]> = agg[chain.root_cluster].clone();

    // Down phase: final values flow to every cluster along matched slots.
    for depth in 0..chain.levels.len().saturating_sub(1) {
        let mut sends = Vec::new();
        for &ci in &chain.levels[depth] {
            for &child in &chain.children[ci] {
                for i in 0..k {
                    let j = i % chain.slots;
                    let from = chain.slot_holder[ci][j];
                    let to_id = g.node_id(chain.slot_holder[child][j]);
                    let v = finals[i];
                    sends
                        .push((from, to_id, vec![i as u64, v[0], v[1], v[2]][..width + 1].to_vec()));
                }
            }
        }
        run_sends_capped(net, sends)?;
    }

    // Final local flood inside each cluster.
    net.charge_flood_rounds(max_wd as u64 + 1);
    let _ = n;
    Ok(finals)
}

/// Scalar wrapper around [`k_aggregate`].
pub fn k_aggregate_scalar(
    net: &mut Net,
    k: usize,
    values: &dyn Fn(usize, usize) -> u64,
    op: AggOp,
) -> Result<Vec<u64>, DisseminationError> {
    let wide = k_aggregate(net, k, 1, &|v, i| [values(v, i), op.identity(), op.identity()], op)?;
    Ok(wide.into_iter().map(|v| v[0]).collect())
}

/// Dissemination reduced to aggregation: token holders first reserve
/// distinct indices 1..k via a subset-tree prefix allocation starting from
/// the root, then one k-aggregation (component-wise MAX over the packed
/// token) delivers every token to every node.
pub fn disseminate_via_aggregate(
    net: &mut Net,
    tokens: &TokenSet,
) -> Result<DisseminationRun, DisseminationError> {
    tokens.validate()?;
    let g = net.graph();
    let n = g.n();
    let start_round = net.round();
    let k = tokens.k();

    // Index allocation over the subset tree of token holders: convergecast
    // of subtree token counts, then prefix ranges walk down (the holder's own
    // tokens take the first indices of its range, children follow in
    // identifier order).
    let flags: Vec<bool> = (0..n).map(|v| !tokens.placement[v].is_empty()).collect();
    let tree = subset_tree(net, &flags)?;
    let mut subtree: HashMap<usize, usize> = HashMap::new();
    let levels = tree.levels();
    for level in levels.iter().rev() {
        let mut sends = Vec::new();
        for &v in level {
            let own: usize = tokens.placement[v].len()
                + tree.children[v].iter().map(|c| subtree[c]).sum::<usize>();
            subtree.insert(v, own);
            if let Some(p) = tree.parent[v] {
                sends.push((v, g.node_id(p), vec![own as u64]));
            }
        }
        if !sends.is_empty() {
            run_sends_capped(net, sends)?;
        }
    }
    let mut range_start: HashMap<usize, usize> = HashMap::new();
    range_start.insert(tree.root, 0);
    let mut index_of_token: Vec<usize> = vec![usize::MAX; k];
    for level in levels.iter() {
        let mut sends = Vec::new();
        for &v in level {
            let mut cursor = range_start[&v];
            for &ti in &tokens.placement[v] {
                index_of_token[ti] = cursor;
                cursor += 1;
            }
            for &c in &tree.children[v] {
                range_start.insert(c, cursor);
                sends.push((v, g.node_id(c), vec![cursor as u64]));
                cursor += subtree[&c];
            }
        }
        if !sends.is_empty() {
            run_sends_capped(net, sends)?;
        }
    }
    {
        let mut sorted = index_of_token.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &x)| i != x) {
            return Err(DisseminationError::Invariant("index allocation not a bijection".into()));
        }
    }

    // One aggregation run: index i carries the packed token assigned to it.
    let token_at: Vec<usize> = {
        let mut inv = vec![0usize; k];
        for (ti, &i) in index_of_token.iter().enumerate() {
            inv[i] = ti;
        }
        inv
    };
    let placement = &tokens.placement;
    let toks = &tokens.tokens;
    let token_at_ref = &token_at;
    let values = move |v: usize, i: usize| -> [u64; 3] {
        let ti = token_at_ref[i];
        if placement[v].contains(&ti) {
            let t = toks[ti];
            [t.origin, t.seq, t.payload]
        } else {
            [0, 0, 0]
        }
    };
    let finals = k_aggregate(net, k, 3, &values, AggOp::Max)?;

    let mut holdings = Holdings::new(n, k);
    for i in 0..k {
        let t = toks[token_at[i]];
        if finals[i] != [t.origin, t.seq, t.payload] {
            return Err(DisseminationError::Invariant(format!(
                "aggregate for index {i} does not reproduce its token"
            )));
        }
        for v in 0..n {
            holdings.set(v, token_at[i]);
        }
    }
    Ok(DisseminationRun { holdings, rounds: net.round() - start_round, k_computed: k as u64 })
}

/// Naive baseline: flood every token everywhere over local edges only;
/// costs diameter rounds and serves as the benchmark reference.
pub fn flood_disseminate(net: &mut Net, tokens: &TokenSet) -> DisseminationRun {
    let g = net.graph();
    let start = net.round();
    net.charge_flood_rounds(g.hop_diameter() as u64 + 1);
    let k = tokens.k();
    let mut holdings = Holdings::new(g.n(), k);
    for v in 0..g.n() {
        for i in 0..k {
            holdings.set(v, i);
        }
    }
    DisseminationRun { holdings, rounds: net.round() - start, k_computed: k as u64 }
}

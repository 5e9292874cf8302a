//! Multi-message unicast: every target must learn the message of every
//! source. Messages travel through hashed intermediate nodes; nodes on a
//! randomly-placed side of the instance spread their per-node send load over
//! helper sets drafted from their cluster, and oversized source sets are
//! first consolidated onto sampled super-sources.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dissemination::{k_disseminate, DisseminationError, Token, TokenSet};
use crate::graphcore::Graph;
use crate::hybridnet::{run_sends_capped, HybridError, Net};
use crate::nq::{cluster_partition_in_model, nq_graph_distributed, Clustering};

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("engine error: {0}")]
    Engine(#[from] HybridError),
    #[error("dissemination error: {0}")]
    Dissemination(#[from] DisseminationError),
    #[error("overlay error: {0}")]
    Overlay(#[from] crate::overlay::OverlayError),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("internal invariant broken: {0}")]
    Invariant(String),
}

// ---------------------------------------------------------------------------
// Hash family

/// Member of a κ-wise independent hash family [n]×[n] → [n]: a random
/// degree-(κ−1) polynomial over GF(p) for the smallest prime p ≥ n²,
/// reduced into the image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HashFamilyMember {
    pub kappa: usize,
    pub prime: u64,
    pub coeffs: Vec<u64>,
    pub domain_n: u64,
}

fn is_prime(x: u64) -> bool {
    if x < 2 {
        return false;
    }
    if x % 2 == 0 {
        return x == 2;
    }
    let mut d = 3u64;
    while d * d <= x {
        if x % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

pub fn smallest_prime_geq(x: u64) -> u64 {
    let mut c = x.max(2);
    while !is_prime(c) {
        c += 1;
    }
    c
}

impl HashFamilyMember {
    /// Evaluates the polynomial at the packed point (i, j) and reduces into
    /// [n].
    pub fn eval(&self, i: u64, j: u64) -> u64 {
        debug_assert!(i < self.domain_n && j < self.domain_n);
        let x = (i * self.domain_n + j) % self.prime;
        let mut acc: u64 = 0;
        for &c in self.coeffs.iter().rev() {
            acc = ((acc as u128 * x as u128 + c as u128) % self.prime as u128) as u64;
        }
        acc % self.domain_n
    }

    pub fn from_coeffs(kappa: usize, n: u64, coeffs: Vec<u64>) -> HashFamilyMember {
        assert_eq!(coeffs.len(), kappa);
        HashFamilyMember { kappa, prime: smallest_prime_geq(n * n), coeffs, domain_n: n }
    }
}

/// Samples a hash function: κ uniform coefficients in [p), deterministic in
/// the seed.
pub fn sample_hash(kappa: usize, n: u64, seed: u64) -> HashFamilyMember {
    assert!(kappa >= 1 && n >= 1);
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let prime = smallest_prime_geq(n * n);
    let coeffs = (0..kappa).map(|_| rng.gen_range(0..prime)).collect();
    HashFamilyMember { kappa, prime, coeffs, domain_n: n }
}

// ---------------------------------------------------------------------------
// Helper sets

/// Helper sets H_w for the designated nodes W, drafted from each w's
/// cluster.
#[derive(Debug, Clone)]
pub struct HelperAssignment {
    pub k: usize,
    pub nq: u32,
    /// helpers[w] for each designated node w.
    pub helpers: HashMap<usize, Vec<usize>>,
    /// Certificate: smallest helper-set size (requirement: ≥ k/NQ).
    pub min_size: usize,
    /// Certificate: largest hop distance from any w to one of its helpers
    /// (requirement: ≤ 4·NQ·⌈log2 n⌉, the weak diameter bound).
    pub max_hop: u32,
    /// Certificate: largest number of helper sets any single node belongs
    /// to.
    pub max_membership: usize,
    /// False if |W| exceeds the expected size of a NQ/k-rate sample by a
    /// wide margin (advisory; the caller certifies the sampling rate).
    pub precondition_ok: bool,
    pub certificates_ok: bool,
}

/// Drafts helper sets (Algorithm 1): inside each cluster C every member
/// joins the draft pool with probability q_C = min(1, (k/NQ)·(1/|C|)·8·ln n);
/// the pool of w's own cluster becomes H_w. Because cluster sizes are at
/// most 2k/NQ, q_C saturates at 1 on all realistic inputs and the whole
/// cluster is drafted.
pub fn adaptive_helpers(
    net: &mut Net,
    w_flags: &[bool],
    k: usize,
) -> Result<HelperAssignment, RoutingError> {
    let g = net.graph();
    let n = g.n();
    let (clustering, _r) = cluster_partition_in_model(net, k)?;
    let nq = clustering.nq;
    let ln_n = (n.max(2) as f64).ln();
    let need = (k as f64 / nq as f64).ceil() as usize;

    let w_nodes: Vec<usize> = (0..n).filter(|&v| w_flags[v]).collect();
    let expected_w = (nq as f64 / k as f64) * n as f64;
    let precondition_ok = (w_nodes.len() as f64) <= 2.0 * expected_w + 8.0 * ln_n;

    // Draft pools per cluster; drafting is a purely local decision, the
    // announcement to the cluster costs one flood over the weak diameter.
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(clustering.clusters.len());
    for cluster in &clustering.clusters {
        let q = ((k as f64 / nq as f64) * (1.0 / cluster.members.len() as f64) * 8.0 * ln_n)
            .min(1.0);
        let mut pool: Vec<usize> = Vec::new();
        for &v in &cluster.members {
            if q >= 1.0 || net.rng(v).gen::<f64>() < q {
                pool.push(v);
            }
        }
        pools.push(pool);
    }
    let max_wd = clustering.clusters.iter().map(|c| c.weak_diameter).max().unwrap_or(0);
    net.charge_flood_rounds(2 * max_wd as u64);

    let mut helpers: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut membership: HashMap<usize, usize> = HashMap::new();
    let mut min_size = usize::MAX;
    let mut max_hop = 0u32;
    for &w in &w_nodes {
        let ci = clustering.cluster_of[w];
        let pool = pools[ci].clone();
        min_size = min_size.min(pool.len());
        let hops = g.bfs_hops(w);
        for &h in &pool {
            max_hop = max_hop.max(hops[h]);
            *membership.entry(h).or_insert(0) += 1;
        }
        helpers.insert(w, pool);
    }
    if w_nodes.is_empty() {
        min_size = 0;
    }
    let max_membership = membership.values().copied().max().unwrap_or(0);
    let certificates_ok = w_nodes.is_empty()
        || (min_size >= need && max_hop <= clustering.weak_diameter_bound);
    Ok(HelperAssignment {
        k,
        nq,
        helpers,
        min_size,
        max_hop,
        max_membership,
        precondition_ok,
        certificates_ok,
    })
}

// ---------------------------------------------------------------------------
// Intermediate mapping

#[derive(Debug, Clone)]
pub struct IntermediateMap {
    pub hash: HashFamilyMember,
    pub kappa: usize,
    pub nq: u32,
    /// Largest number of pair labels (i,j) ∈ [k]×[ℓ] hashed to one node.
    pub max_load: usize,
    /// Declared load bound 2·kℓ/n + 8·ln n.
    pub load_bound: f64,
    /// k·ℓ ≤ NQ·n (advisory).
    pub constraint_ok: bool,
}

/// Samples one hash function at the minimum-identifier node with
/// κ = ⌈NQ_k·log2 n⌉ and makes it common knowledge by disseminating the κ
/// coefficients as tokens; then certifies the label load it induces.
pub fn intermediate_map(
    net: &mut Net,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<IntermediateMap, RoutingError> {
    let g = net.graph();
    let n = g.n() as u64;
    let nq = nq_graph_distributed(net, k)?.nq_graph;
    let kappa = ((nq as usize) * crate::hybridnet::log2_ceil(g.n()) as usize).max(1);
    let sampler = (0..g.n()).min_by_key(|&v| g.node_id(v)).unwrap();
    let local = sample_hash(kappa, n, seed ^ g.node_id(sampler));

    // Broadcast the κ coefficients (each fits the 4-word global message) as
    // a token set held entirely by the sampler.
    let tokens = TokenSet {
        tokens: local
            .coeffs
            .iter()
            .enumerate()
            .map(|(t, &c)| Token { origin: g.node_id(sampler), seq: t as u64, payload: c })
            .collect(),
        placement: {
            let mut p = vec![Vec::new(); g.n()];
            p[sampler] = (0..kappa).collect();
            p
        },
    };
    let run = k_disseminate(net, &tokens)?;
    if !run.holdings.complete() {
        return Err(RoutingError::Invariant("coefficient broadcast incomplete".into()));
    }
    let hash = HashFamilyMember::from_coeffs(kappa, n, local.coeffs);

    let mut load: HashMap<u64, usize> = HashMap::new();
    for i in 0..k as u64 {
        for j in 0..l as u64 {
            *load.entry(hash.eval(i, j)).or_insert(0) += 1;
        }
    }
    let max_load = load.values().copied().max().unwrap_or(0);
    let load_bound = 2.0 * (k * l) as f64 / n as f64 + 8.0 * (g.n().max(2) as f64).ln();
    let constraint_ok = (k as u64) * (l as u64) <= nq as u64 * n;
    Ok(IntermediateMap { hash, kappa, nq, max_load, load_bound, constraint_ok })
}

// ---------------------------------------------------------------------------
// Instances

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Arbitrary sources, uniformly random targets; needs ℓ ≤ NQ_k.
    ArbSrcRandTgt,
    /// Random sources, arbitrary targets; needs k ≤ NQ_ℓ.
    RandSrcArbTgt,
    /// Both random; needs k·ℓ ≤ NQ_k·n.
    RandSrcRandTgt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingInstance {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub scenario: Scenario,
    /// payloads[si][tj]: the message source si addresses to target tj.
    pub payloads: Vec<Vec<u64>>,
    /// Identifier each source row is labeled with at delivery (differs from
    /// the carrier's own identifier after consolidation).
    pub origin_ids: Vec<u64>,
}

impl RoutingInstance {
    pub fn k(&self) -> usize {
        self.sources.len()
    }

    pub fn l(&self) -> usize {
        self.targets.len()
    }

    /// Builds an instance: the "arbitrary" side takes the lowest node
    /// indices, the "random" side is a uniform sample without replacement.
    pub fn generate(
        g: &Graph,
        scenario: Scenario,
        k: usize,
        l: usize,
        seed: u64,
    ) -> RoutingInstance {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut sample = |count: usize, salt: u64| -> Vec<usize> {
            let _ = salt;
            let mut all: Vec<usize> = (0..g.n()).collect();
            all.shuffle(&mut rng);
            let mut out: Vec<usize> = all.into_iter().take(count).collect();
            out.sort_unstable();
            out
        };
        let sources = match scenario {
            Scenario::ArbSrcRandTgt => (0..k).collect(),
            _ => sample(k, 1),
        };
        let targets = match scenario {
            Scenario::RandSrcArbTgt => (0..l).collect(),
            _ => sample(l, 2),
        };
        let payloads = (0..k)
            .map(|i| (0..l).map(|j| 10_000 + (i * l + j) as u64).collect())
            .collect();
        let origin_ids = sources.iter().map(|&s| g.node_id(s)).collect();
        RoutingInstance { sources, targets, scenario, payloads, origin_ids }
    }

    /// Validates the scenario's parameter constraint (advisory).
    pub fn constraint_ok(&self, g: &Graph) -> bool {
        let nq_k = crate::nq::nq_graph(g, self.k().max(1)).nq_graph as usize;
        let nq_l = crate::nq::nq_graph(g, self.l().max(1)).nq_graph as usize;
        match self.scenario {
            Scenario::ArbSrcRandTgt => self.l() <= nq_k,
            Scenario::RandSrcArbTgt => self.k() <= nq_l,
            Scenario::RandSrcRandTgt => self.k() * self.l() <= nq_k * g.n(),
        }
    }
}

// ---------------------------------------------------------------------------
// Source consolidation

#[derive(Debug)]
pub struct ConsolidationPlan {
    /// True when k ≤ √(n·NQ) and the instance passes through unchanged.
    pub identity: bool,
    pub super_sources: Vec<usize>,
    /// Where each original source row moved: super_of[si] = carrier node.
    pub super_of: Vec<usize>,
    pub sub_instances: Vec<RoutingInstance>,
    pub bound: usize,
    pub precondition_ok: bool,
    pub all_clusters_covered: bool,
}

/// Reduces an oversized instance (k > √(n·NQ)) to sub-instances with
/// k′, ℓ′ ≤ √(n·NQ): nodes become super-sources with probability
/// p = min(NQ·n/k²·8·ln n, 1), every source forwards its message row to the
/// closest super-source (one capped global message per row), and the
/// relocated rows are dealt into sub-instances so that no sub-instance uses
/// more than √(n·NQ) carriers.
pub fn consolidate_sources(
    net: &mut Net,
    instance: &RoutingInstance,
) -> Result<ConsolidationPlan, RoutingError> {
    let g = net.graph();
    let n = g.n();
    let k = instance.k();
    let l = instance.l();
    let nq = nq_graph_distributed(net, k.max(1))?.nq_graph;
    let bound = ((n as f64 * nq as f64).sqrt().floor() as usize).max(1);
    let precondition_ok = instance.l() <= instance.k()
        && (k as u64) * (l as u64) <= nq as u64 * n as u64
        && matches!(instance.scenario, Scenario::RandSrcRandTgt | Scenario::RandSrcArbTgt);

    if k <= bound && l <= bound {
        return Ok(ConsolidationPlan {
            identity: true,
            super_sources: Vec::new(),
            super_of: instance.sources.clone(),
            sub_instances: vec![instance.clone()],
            bound,
            precondition_ok,
            all_clusters_covered: true,
        });
    }

    let (clustering, _r) = cluster_partition_in_model(net, k.max(1))?;
    let ln_n = (n.max(2) as f64).ln();
    let p = ((nq as f64 * n as f64) / (k as f64 * k as f64) * 8.0 * ln_n).min(1.0);
    let mut super_flags = vec![false; n];
    for v in 0..n {
        if p >= 1.0 || net.rng(v).gen::<f64>() < p {
            super_flags[v] = true;
        }
    }
    let all_clusters_covered = clustering
        .clusters
        .iter()
        .all(|c| c.members.iter().any(|&v| super_flags[v]));
    let super_sources: Vec<usize> = (0..n).filter(|&v| super_flags[v]).collect();
    if super_sources.is_empty() {
        return Err(RoutingError::Invariant("no super-source sampled".into()));
    }

    // Closest super-source per node (ties to the smaller identifier), via
    // multi-source BFS layers.
    let closest = closest_marked(g, &super_flags);

    // Relocate rows: one global message per (source row, payload entry).
    let mut sends = Vec::new();
    for (si, &s) in instance.sources.iter().enumerate() {
        let carrier = closest[s];
        if carrier == s {
            continue;
        }
        for (tj, &payload) in instance.payloads[si].iter().enumerate() {
            sends.push((
                s,
                g.node_id(carrier),
                vec![si as u64, tj as u64, payload],
            ));
        }
    }
    run_sends_capped(net, sends)?;
    let super_of: Vec<usize> = instance.sources.iter().map(|&s| closest[s]).collect();

    // Deal rows into sub-instances: per batch, each carrier contributes one
    // of its rows; batches with more than `bound` carriers are chunked.
    let mut rows_of: HashMap<usize, Vec<usize>> = HashMap::new();
    for (si, &carrier) in super_of.iter().enumerate() {
        rows_of.entry(carrier).or_default().push(si);
    }
    let max_rows = rows_of.values().map(|r| r.len()).max().unwrap_or(0);
    let target_chunks: Vec<Vec<usize>> =
        instance.targets.chunks(bound).map(|c| c.to_vec()).collect();
    let mut sub_instances = Vec::new();
    for r in 0..max_rows {
        let mut batch: Vec<(usize, usize)> = rows_of
            .iter()
            .filter_map(|(&carrier, rows)| rows.get(r).map(|&si| (carrier, si)))
            .collect();
        batch.sort_unstable();
        for chunk in batch.chunks(bound) {
            for tchunk in &target_chunks {
                let tset: Vec<usize> = instance
                    .targets
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| tchunk.contains(t))
                    .map(|(tj, _)| tj)
                    .collect();
                sub_instances.push(RoutingInstance {
                    sources: chunk.iter().map(|&(c, _)| c).collect(),
                    targets: tchunk.clone(),
                    scenario: Scenario::RandSrcRandTgt,
                    payloads: chunk
                        .iter()
                        .map(|&(_, si)| {
                            tset.iter().map(|&tj| instance.payloads[si][tj]).collect()
                        })
                        .collect(),
                    origin_ids: chunk.iter().map(|&(_, si)| instance.origin_ids[si]).collect(),
                });
            }
        }
    }
    Ok(ConsolidationPlan {
        identity: false,
        super_sources,
        super_of,
        sub_instances,
        bound,
        precondition_ok,
        all_clusters_covered,
    })
}

fn closest_marked(g: &Graph, flags: &[bool]) -> Vec<usize> {
    use std::collections::VecDeque;
    let n = g.n();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut queue = VecDeque::new();
    let mut marked: Vec<usize> = (0..n).filter(|&v| flags[v]).collect();
    marked.sort_by_key(|&v| g.node_id(v));
    for &v in &marked {
        owner[v] = Some(v);
        queue.push_back(v);
    }
    // Layered relaxation: within a layer the smaller owner identifier wins.
    while let Some(v) = queue.pop_front() {
        let o = owner[v].unwrap();
        for &(u, _) in g.neighbors(v) {
            match owner[u] {
                None => {
                    owner[u] = Some(o);
                    queue.push_back(u);
                }
                Some(cur) if g.node_id(cur) > g.node_id(o) => {
                    // Same BFS layer tie; smaller identifier takes over but
                    // does not re-expand (distances are unchanged).
                    owner[u] = Some(o);
                }
                _ => {}
            }
        }
    }
    owner.into_iter().map(|o| o.unwrap()).collect()
}

// ---------------------------------------------------------------------------
// Routing

#[derive(Debug)]
pub struct RoutingRun {
    /// delivered[tj] = sorted (origin id, payload) pairs received by target
    /// tj.
    pub delivered: Vec<Vec<(u64, u64)>>,
    pub rounds: u64,
    pub constraint_ok: bool,
    pub helpers_used_sources: bool,
    pub helpers_used_targets: bool,
}

/// Routes the instance (Algorithm 2): pair (i,j) is staged at intermediate
/// node h(i,j); the source side uploads, the target side requests, the
/// intermediate replies to the requester. A randomly-placed side whose
/// per-node demand exceeds NQ spreads its sends over drafted helpers; the
/// final helper→owner hop and the helper briefing are local flooding inside
/// the cluster. Upload, request, and reply run in separate phases, which
/// realizes the alternating-parity throttle.
pub fn kl_route(net: &mut Net, instance: &RoutingInstance) -> Result<RoutingRun, RoutingError> {
    let g = net.graph();
    let n = g.n();
    let k = instance.k();
    let l = instance.l();
    if k == 0 || l == 0 {
        return Err(RoutingError::InvalidInstance("empty source or target set".into()));
    }
    if instance.payloads.len() != k || instance.payloads.iter().any(|r| r.len() != l) {
        return Err(RoutingError::InvalidInstance("payload matrix shape".into()));
    }
    let start_round = net.round();
    let constraint_ok = instance.constraint_ok(g);

    let imap = intermediate_map(net, k.max(2), l.max(2), 0xda7a)?;
    let nq = imap.nq as usize;

    let help_src = matches!(
        instance.scenario,
        Scenario::RandSrcArbTgt | Scenario::RandSrcRandTgt
    ) && l > nq;
    let help_tgt = matches!(
        instance.scenario,
        Scenario::ArbSrcRandTgt | Scenario::RandSrcRandTgt
    ) && k > nq;

    let helpers_for = |net: &mut Net, nodes: &[usize], demand: usize| {
        let mut flags = vec![false; n];
        for &v in nodes {
            flags[v] = true;
        }
        adaptive_helpers(net, &flags, demand.max(1))
    };

    // Upload phase: pair (i,j)'s payload goes to node h(i,j).
    let mut sends = Vec::new();
    if help_src {
        let assign = helpers_for(net, &instance.sources, k)?;
        for (si, &s) in instance.sources.iter().enumerate() {
            let hs = &assign.helpers[&s];
            for tj in 0..l {
                let carrier = hs[tj % hs.len()];
                let inter = imap.hash.eval(si as u64, tj as u64) as usize;
                sends.push((
                    carrier,
                    g.node_id(inter),
                    vec![si as u64, tj as u64, instance.payloads[si][tj]],
                ));
            }
        }
    } else {
        for (si, &s) in instance.sources.iter().enumerate() {
            for tj in 0..l {
                let inter = imap.hash.eval(si as u64, tj as u64) as usize;
                sends.push((
                    s,
                    g.node_id(inter),
                    vec![si as u64, tj as u64, instance.payloads[si][tj]],
                ));
            }
        }
    }
    let uploads = run_sends_capped(net, sends)?;
    let mut staged: HashMap<(u64, u64), (usize, u64)> = HashMap::new(); // (i,j) -> (holder, payload)
    for (to, _from, msg) in uploads {
        staged.insert((msg[0], msg[1]), (to, msg[2]));
    }
    if staged.len() != k * l {
        return Err(RoutingError::Invariant("upload lost a pair".into()));
    }

    // Request phase: target tj asks h(i,j) for every i.
    let mut requests = Vec::new();
    let mut requester_target: HashMap<(u64, u64), usize> = HashMap::new();
    if help_tgt {
        let assign = helpers_for(net, &instance.targets, k)?;
        for (tj, &t) in instance.targets.iter().enumerate() {
            let hs = &assign.helpers[&t];
            for si in 0..k {
                let carrier = hs[si % hs.len()];
                let inter = imap.hash.eval(si as u64, tj as u64) as usize;
                requests.push((carrier, g.node_id(inter), vec![si as u64, tj as u64]));
                requester_target.insert((si as u64, tj as u64), tj);
            }
        }
    } else {
        for (tj, &t) in instance.targets.iter().enumerate() {
            for si in 0..k {
                let inter = imap.hash.eval(si as u64, tj as u64) as usize;
                requests.push((t, g.node_id(inter), vec![si as u64, tj as u64]));
                requester_target.insert((si as u64, tj as u64), tj);
            }
        }
    }
    let arrived = run_sends_capped(net, requests)?;

    // Reply phase: each request (i,j) is answered with exactly the staged
    // payload of label (i,j), back to the requesting node.
    let mut replies = Vec::new();
    for (to, from_id, msg) in arrived {
        let key = (msg[0], msg[1]);
        let &(holder, payload) = staged
            .get(&key)
            .ok_or_else(|| RoutingError::Invariant(format!("request for unstaged pair {key:?}")))?;
        if holder != to {
            return Err(RoutingError::Invariant("request reached the wrong intermediate".into()));
        }
        replies.push((holder, from_id, vec![msg[0], msg[1], payload]));
    }
    let answered = run_sends_capped(net, replies)?;

    // Helper → target delivery is a local flood inside the cluster.
    if help_tgt {
        let max_wd = 4 * (nq as u64) * crate::hybridnet::log2_ceil(n) as u64;
        net.charge_flood_rounds(2 * max_wd.min(g.hop_diameter() as u64 + 1));
    }
    let mut delivered: Vec<Vec<(u64, u64)>> = vec![Vec::new(); l];
    for (_to, _from, msg) in answered {
        let tj = requester_target[&(msg[0], msg[1])];
        delivered[tj].push((instance.origin_ids[msg[0] as usize], msg[2]));
    }
    for d in &mut delivered {
        d.sort_unstable();
        if d.len() != k {
            return Err(RoutingError::Invariant(format!(
                "target received {} of {k} messages",
                d.len()
            )));
        }
    }
    Ok(RoutingRun {
        delivered,
        rounds: net.round() - start_round,
        constraint_ok,
        helpers_used_sources: help_src,
        helpers_used_targets: help_tgt,
    })
}

/// Convenience: the clustering a routing run is built on (exposed for
/// experiment dumps).
pub fn routing_clustering(g: &Graph, k: usize) -> Clustering {
    crate::nq::cluster_partition(g, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::{generate, GraphKind};
    use crate::hybridnet::{HybridNetwork, ModelConfig};

    fn fresh(g: &Graph) -> Net<'_> {
        HybridNetwork::new(g, ModelConfig::defaults_for(g.n()), 7).unwrap()
    }

    fn demand(instance: &RoutingInstance, tj: usize) -> Vec<(u64, u64)> {
        let mut d: Vec<(u64, u64)> = (0..instance.k())
            .map(|si| (instance.origin_ids[si], instance.payloads[si][tj]))
            .collect();
        d.sort_unstable();
        d
    }

    #[test]
    fn hash_deterministic_in_seed() {
        let a = sample_hash(5, 64, 1234);
        let b = sample_hash(5, 64, 1234);
        for probe in 0..1000u64 {
            let (i, j) = (probe % 64, (probe * 7) % 64);
            assert_eq!(a.eval(i, j), b.eval(i, j));
        }
        let c = sample_hash(5, 64, 1235);
        assert!((0..64u64).any(|i| a.eval(i, 0) != c.eval(i, 0)));
    }

    #[test]
    fn hash_uniform_marginal_chi_square() {
        // 10⁵ independent draws of h(3,5) over fresh seeds, binned over the
        // image of size 64; chi-square with 63 degrees of freedom must stay
        // below the 1% critical value 92.01.
        let n = 64u64;
        let mut counts = vec![0u64; n as usize];
        let samples = 100_000u64;
        for s in 0..samples {
            let h = sample_hash(1, n, s);
            counts[h.eval(3, 5) as usize] += 1;
        }
        let e = samples as f64 / n as f64;
        let stat: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(stat < 92.01, "chi-square {stat}");
    }

    #[test]
    fn hash_pairwise_collision_rate() {
        // κ=2: collision probability of two fixed distinct points over a
        // random function is 1/n up to the modulus rounding; 10⁵ trials stay
        // within 3σ.
        let n = 64u64;
        let trials = 100_000u64;
        let mut collisions = 0u64;
        for s in 0..trials {
            let h = sample_hash(2, n, 500_000 + s);
            if h.eval(1, 2) == h.eval(9, 33) {
                collisions += 1;
            }
        }
        let e = trials as f64 / n as f64;
        let sigma = (e * (1.0 - 1.0 / n as f64)).sqrt();
        assert!(
            (collisions as f64 - e).abs() <= 3.0 * sigma,
            "collisions {collisions} expected {e}"
        );
    }

    #[test]
    fn helpers_empty_designated_set() {
        let g = generate(&GraphKind::Path { n: 32 }, 0).unwrap();
        let mut net = fresh(&g);
        let flags = vec![false; 32];
        let out = adaptive_helpers(&mut net, &flags, 8).unwrap();
        assert!(out.helpers.is_empty());
        assert!(out.certificates_ok);
    }

    #[test]
    fn helpers_draft_whole_cluster_and_certify() {
        let g = generate(&GraphKind::Grid { d: 2, m: 16 }, 0).unwrap();
        let k = 64;
        let nq = crate::nq::nq_graph(&g, k).nq_graph;
        let mut net = fresh(&g);
        // Sample W at rate NQ/k with the engine PRNG.
        let mut flags = vec![false; g.n()];
        for v in 0..g.n() {
            if net.rng(v).gen::<f64>() < nq as f64 / k as f64 {
                flags[v] = true;
            }
        }
        let out = adaptive_helpers(&mut net, &flags, k).unwrap();
        assert!(out.precondition_ok);
        assert!(out.certificates_ok, "min_size={} max_hop={}", out.min_size, out.max_hop);
        assert!(out.min_size * nq as usize >= k);
        let c_m = 16; // c_m·log n membership ceiling
        assert!(out.max_membership <= c_m * crate::hybridnet::log2_ceil(g.n()) as usize);
    }

    #[test]
    fn intermediate_map_shared_and_loaded() {
        let g = generate(&GraphKind::Grid { d: 2, m: 16 }, 0).unwrap();
        let mut net = fresh(&g);
        let m = intermediate_map(&mut net, 32, 8, 99).unwrap();
        assert!(m.constraint_ok);
        assert!((m.max_load as f64) <= m.load_bound, "load {} bound {}", m.max_load, m.load_bound);
        // Shared seed: two reconstructions agree everywhere probed.
        let again = HashFamilyMember::from_coeffs(m.kappa, 256, m.hash.coeffs.clone());
        assert_eq!(m.hash.eval(3, 7), again.eval(3, 7));
        assert!(net.transcript().violations.is_empty());
    }

    #[test]
    fn trivial_single_pair_adjacent() {
        let g = generate(&GraphKind::Path { n: 16 }, 0).unwrap();
        let mut net = fresh(&g);
        let instance = RoutingInstance {
            sources: vec![4],
            targets: vec![5],
            scenario: Scenario::RandSrcRandTgt,
            payloads: vec![vec![4242]],
            origin_ids: vec![g.node_id(4)],
        };
        let run = kl_route(&mut net, &instance).unwrap();
        assert_eq!(run.delivered[0], vec![(g.node_id(4), 4242)]);
    }

    #[test]
    fn case1_path256_all_delivered() {
        let g = generate(&GraphKind::Path { n: 256 }, 0).unwrap();
        let instance = RoutingInstance::generate(&g, Scenario::ArbSrcRandTgt, 64, 4, 11);
        assert!(instance.constraint_ok(&g)); // ℓ=4 ≤ NQ_64(path 256)=8
        let mut net = fresh(&g);
        let run = kl_route(&mut net, &instance).unwrap();
        assert!(run.helpers_used_targets);
        for tj in 0..4 {
            assert_eq!(run.delivered[tj], demand(&instance, tj));
        }
        assert!(net.transcript().violations.is_empty());
    }

    #[test]
    fn case2_role_reversed_delivery() {
        let g = generate(&GraphKind::Path { n: 256 }, 0).unwrap();
        // k=4 ≤ NQ_ℓ with ℓ=64; sources random, targets arbitrary.
        let instance = RoutingInstance::generate(&g, Scenario::RandSrcArbTgt, 4, 64, 13);
        assert!(instance.constraint_ok(&g));
        let mut net = fresh(&g);
        let run = kl_route(&mut net, &instance).unwrap();
        assert!(run.helpers_used_sources);
        for tj in 0..64 {
            assert_eq!(run.delivered[tj], demand(&instance, tj));
        }
        assert!(net.transcript().violations.is_empty());
    }

    #[test]
    fn case3_grid_both_random() {
        let g = generate(&GraphKind::Grid { d: 2, m: 16 }, 0).unwrap();
        let instance = RoutingInstance::generate(&g, Scenario::RandSrcRandTgt, 16, 16, 17);
        assert!(instance.constraint_ok(&g)); // 256 ≤ NQ·256
        let mut net = fresh(&g);
        let run = kl_route(&mut net, &instance).unwrap();
        for tj in 0..16 {
            assert_eq!(run.delivered[tj], demand(&instance, tj));
        }
        assert!(net.transcript().violations.is_empty());
    }

    #[test]
    fn consolidation_identity_below_bound() {
        let g = generate(&GraphKind::Path { n: 64 }, 0).unwrap();
        let instance = RoutingInstance::generate(&g, Scenario::RandSrcRandTgt, 4, 2, 3);
        let mut net = fresh(&g);
        let plan = consolidate_sources(&mut net, &instance).unwrap();
        assert!(plan.identity);
        assert_eq!(plan.sub_instances.len(), 1);
    }

    #[test]
    fn consolidation_path1024_bounds_and_conservation() {
        let g = generate(&GraphKind::Path { n: 1024 }, 0).unwrap();
        let instance = RoutingInstance::generate(&g, Scenario::RandSrcRandTgt, 512, 2, 5);
        let mut net = fresh(&g);
        let plan = consolidate_sources(&mut net, &instance).unwrap();
        assert!(!plan.identity);
        assert!(plan.precondition_ok);
        assert!(plan.all_clusters_covered);
        for sub in &plan.sub_instances {
            assert!(sub.k() <= plan.bound && sub.l() <= plan.bound);
        }
        // Conservation: the union of sub-instance demands equals the
        // original demand per target node.
        let mut union: HashMap<usize, Vec<(u64, u64)>> = HashMap::new();
        for sub in &plan.sub_instances {
            for (tj, &t) in sub.targets.iter().enumerate() {
                for si in 0..sub.k() {
                    union.entry(t).or_default().push((sub.origin_ids[si], sub.payloads[si][tj]));
                }
            }
        }
        for (tj, &t) in instance.targets.iter().enumerate() {
            let mut got = union.remove(&t).unwrap();
            got.sort_unstable();
            assert_eq!(got, demand(&instance, tj));
        }
        assert!(net.transcript().violations.is_empty());
    }

    #[test]
    fn consolidation_then_routing_composes() {
        let g = generate(&GraphKind::Grid { d: 2, m: 16 }, 0).unwrap();
        let instance = RoutingInstance::generate(&g, Scenario::RandSrcRandTgt, 64, 2, 21);
        let mut net = fresh(&g);
        let plan = consolidate_sources(&mut net, &instance).unwrap();
        let mut got: HashMap<usize, Vec<(u64, u64)>> = HashMap::new();
        for sub in &plan.sub_instances {
            let run = kl_route(&mut net, sub).unwrap();
            for (tj, &t) in sub.targets.iter().enumerate() {
                got.entry(t).or_default().extend(run.delivered[tj].iter().copied());
            }
        }
        for (tj, &t) in instance.targets.iter().enumerate() {
            let mut d = got.remove(&t).unwrap();
            d.sort_unstable();
            assert_eq!(d, demand(&instance, tj));
        }
    }

    #[test]
    fn instance_roundtrips_as_json() {
        let g = generate(&GraphKind::Path { n: 32 }, 0).unwrap();
        let instance = RoutingInstance::generate(&g, Scenario::ArbSrcRandTgt, 8, 2, 1);
        let json = serde_json::to_string(&instance).unwrap();
        let back: RoutingInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(back.sources, instance.sources);
        assert_eq!(back.payloads, instance.payloads);
    }
}

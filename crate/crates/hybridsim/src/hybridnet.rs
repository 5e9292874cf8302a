//! Round-synchronous execution engine for the hybrid network model:
//! unlimited-bandwidth messages along graph edges ("local") plus a global
//! any-to-any network where every node may send and receive only a capped
//! number of small messages per round.
//!
//! The engine offers two usage styles:
//! * [`execute`] runs a lock-step [`NodeProgram`] per node until all halt.
//! * The imperative API ([`HybridNetwork::send_local`],
//!   [`HybridNetwork::send_global`], [`HybridNetwork::end_round`]) lets
//!   algorithm drivers advance the network round by round while keeping all
//!   accounting and cap enforcement in one place.
//!
//! Phases that use only the local network at full bandwidth (flooding a
//! neighborhood, intra-cluster exchange) may be bulk-accounted with
//! [`HybridNetwork::charge_flood_rounds`]: the rounds and nominal local
//! traffic are recorded without materializing per-edge payloads. Global
//! traffic — the capacity-constrained resource — is always simulated message
//! by message.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphcore::Graph;

/// A message payload measured in logical words of ⌈log2 n⌉ bits each.
/// Implementations must account identifier fields at their true width (an
/// identifier from a polynomially larger space counts as multiple words).
pub trait Payload: Clone + std::fmt::Debug {
    fn words(&self) -> usize;
    /// Node identifiers carried inside the payload; receivers of a global
    /// message learn these (relevant when only learned identifiers are
    /// addressable).
    fn carried_ids(&self) -> Vec<u64> {
        Vec::new()
    }
}

impl Payload for Vec<u64> {
    fn words(&self) -> usize {
        self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalLimit {
    Unlimited,
    /// Bits per local edge (per direction) per round.
    Bits(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdMode {
    /// Identifiers are exactly 0..n and globally known; any node may address
    /// any other.
    Hybrid,
    /// Identifiers are drawn from [n^c]; a node may only address identifiers
    /// it held initially (its own, its neighbors') or has since received.
    Hybrid0 { id_exponent: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverflowPolicy {
    /// A cap violation aborts the execution (default: surfaces bugs).
    Fail,
    /// Excess messages are dropped deterministically (lowest (sender id, seq)
    /// kept) and logged.
    DropArbitrary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub local_limit: LocalLimit,
    /// Global message size in bits; default 4·⌈log2 n⌉.
    pub global_msg_bits: u32,
    /// Max global messages a node may send per round; default ⌈log2 n⌉.
    pub global_send_cap: u32,
    /// Max global messages a node may receive per round; default ⌈log2 n⌉.
    pub global_recv_cap: u32,
    pub id_mode: IdMode,
    pub overflow_policy: OverflowPolicy,
}

/// ⌈log2 n⌉, at least 1.
pub fn log2_ceil(n: usize) -> u32 {
    (usize::BITS - n.max(2).saturating_sub(1).leading_zeros()).max(1)
}

impl ModelConfig {
    pub fn defaults_for(n: usize) -> ModelConfig {
        let log_n = log2_ceil(n);
        ModelConfig {
            local_limit: LocalLimit::Unlimited,
            global_msg_bits: 4 * log_n,
            global_send_cap: log_n,
            global_recv_cap: log_n,
            id_mode: IdMode::Hybrid,
            overflow_policy: OverflowPolicy::Fail,
        }
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        if self.global_send_cap < 1 || self.global_recv_cap < 1 {
            return Err(HybridError::BadConfig("caps must be ≥ 1".into()));
        }
        if let IdMode::Hybrid0 { id_exponent } = self.id_mode {
            if id_exponent < 1 {
                return Err(HybridError::BadConfig("id exponent must be ≥ 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    SendCap,
    RecvCap,
    MsgSize,
    NonNeighbor,
    UnknownId,
    LocalBandwidth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub round: u64,
    pub node: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("round {round}, node {node}: {kind:?} violation: {detail}")]
    CapViolation { round: u64, node: usize, kind: ViolationKind, detail: String },
    #[error("local send from {from} to non-neighbor {to}")]
    NonNeighbor { from: usize, to: usize },
    #[error("global payload of {bits} bits exceeds limit {limit}")]
    MsgTooLarge { bits: u64, limit: u32 },
    #[error("node {from} does not know target identifier {id}")]
    UnknownTargetId { from: usize, id: u64 },
    #[error("unknown node {0}")]
    UnknownNode(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub local_msgs: u64,
    pub local_bits: u64,
    pub global_msgs: u64,
    pub global_bits: u64,
}

impl RoundStats {
    fn add(&mut self, other: &RoundStats) {
        self.local_msgs += other.local_msgs;
        self.local_bits += other.local_bits;
        self.global_msgs += other.global_msgs;
        self.global_bits += other.global_bits;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecOutcome {
    Running,
    AllHalted,
    BudgetExhausted,
    Violated,
}

/// Execution record: rounds elapsed, per-round traffic, observed extremes,
/// violations, and per-node declared outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub rounds: u64,
    pub per_round: Vec<RoundStats>,
    pub totals: RoundStats,
    pub max_global_sent: u32,
    pub max_global_recv: u32,
    pub violations: Vec<Violation>,
    pub outputs: Vec<Option<String>>,
    pub outcome: ExecOutcome,
}

impl Transcript {
    fn new(n: usize) -> Transcript {
        Transcript {
            rounds: 0,
            per_round: Vec::new(),
            totals: RoundStats::default(),
            max_global_sent: 0,
            max_global_recv: 0,
            violations: Vec::new(),
            outputs: vec![None; n],
            outcome: ExecOutcome::Running,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    /// One-line-per-round CSV summary.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,local_msgs,local_bits,global_msgs,global_bits\n");
        for (i, r) in self.per_round.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                r.local_msgs,
                r.local_bits,
                r.global_msgs,
                r.global_bits
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Envelope<P> {
    from: usize,
    to: usize,
    seq: u64,
    payload: P,
}

/// The round engine. Messages staged during a round are delivered at the
/// start of the next round, ordered by (sender identifier, send sequence).
pub struct HybridNetwork<'g, P: Payload> {
    g: &'g Graph,
    pub cfg: ModelConfig,
    word_bits: u32,
    round: u64,
    seq: u64,
    staged_local: Vec<Envelope<P>>,
    staged_global: Vec<Envelope<P>>,
    sent_global: Vec<u32>,
    local_bits_used: HashMap<(usize, usize), u64>,
    inbox_local: Vec<Vec<(usize, P)>>,
    inbox_global: Vec<Vec<(u64, P)>>,
    known_ids: Option<Vec<HashSet<u64>>>,
    rngs: Vec<ChaCha12Rng>,
    transcript: Transcript,
    pending_round: RoundStats,
    id_to_index: HashMap<u64, usize>,
}

impl<'g, P: Payload> HybridNetwork<'g, P> {
    pub fn new(g: &'g Graph, cfg: ModelConfig, seed: u64) -> Result<Self, HybridError> {
        cfg.validate()?;
        let n = g.n();
        let known_ids = match cfg.id_mode {
            IdMode::Hybrid => None,
            IdMode::Hybrid0 { .. } => Some(
                (0..n)
                    .map(|v| {
                        let mut s: HashSet<u64> =
                            g.neighbors(v).iter().map(|&(u, _)| g.node_id(u)).collect();
                        s.insert(g.node_id(v));
                        s
                    })
                    .collect(),
            ),
        };
        // Counter-style per-node PRNG: each node's stream depends only on
        // (seed, node identifier).
        let rngs = (0..n)
            .map(|v| ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ g.node_id(v)))
            .collect();
        Ok(HybridNetwork {
            g,
            word_bits: log2_ceil(n),
            cfg,
            round: 1,
            seq: 0,
            staged_local: Vec::new(),
            staged_global: Vec::new(),
            sent_global: vec![0; n],
            local_bits_used: HashMap::new(),
            inbox_local: vec![Vec::new(); n],
            inbox_global: vec![Vec::new(); n],
            known_ids,
            rngs,
            transcript: Transcript::new(n),
            pending_round: RoundStats::default(),
            id_to_index: (0..n).map(|v| (g.node_id(v), v)).collect(),
        })
    }

    pub fn graph(&self) -> &'g Graph {
        self.g
    }

    /// Current round number (1-based; sends staged now are delivered in
    /// round `round() + 1`).
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn rng(&mut self, v: usize) -> &mut ChaCha12Rng {
        &mut self.rngs[v]
    }

    /// Marks `id` as known to `v` (initial-knowledge injection before the
    /// algorithm starts, e.g. input assignments).
    pub fn introduce(&mut self, v: usize, id: u64) {
        if let Some(known) = &mut self.known_ids {
            known[v].insert(id);
        }
    }

    pub fn knows_id(&self, v: usize, id: u64) -> bool {
        match &self.known_ids {
            None => true,
            Some(known) => known[v].contains(&id),
        }
    }

    pub fn send_local(&mut self, from: usize, to: usize, payload: P) -> Result<(), HybridError> {
        if from >= self.g.n() {
            return Err(HybridError::UnknownNode(from));
        }
        if !self.g.neighbors(from).iter().any(|&(u, _)| u == to) {
            self.log_violation(from, ViolationKind::NonNeighbor, format!("target {to}"));
            return Err(HybridError::NonNeighbor { from, to });
        }
        let bits = payload.words() as u64 * self.word_bits as u64;
        if let LocalLimit::Bits(limit) = self.cfg.local_limit {
            let used = self.local_bits_used.entry((from, to)).or_insert(0);
            if *used + bits > limit {
                self.log_violation(
                    from,
                    ViolationKind::LocalBandwidth,
                    format!("edge ({from},{to}) over {limit} bits"),
                );
                if matches!(self.cfg.overflow_policy, OverflowPolicy::Fail) {
                    return Err(HybridError::CapViolation {
                        round: self.round,
                        node: from,
                        kind: ViolationKind::LocalBandwidth,
                        detail: format!("edge ({from},{to})"),
                    });
                }
                return Ok(()); // dropped
            }
            *used += bits;
        }
        self.pending_round.local_msgs += 1;
        self.pending_round.local_bits += bits;
        self.seq += 1;
        self.staged_local.push(Envelope { from, to, seq: self.seq, payload });
        Ok(())
    }

    pub fn send_global(&mut self, from: usize, to_id: u64, payload: P) -> Result<(), HybridError> {
        if from >= self.g.n() {
            return Err(HybridError::UnknownNode(from));
        }
        let bits = payload.words() as u64 * self.word_bits as u64;
        if bits > self.cfg.global_msg_bits as u64 {
            self.log_violation(from, ViolationKind::MsgSize, format!("{bits} bits"));
            return Err(HybridError::MsgTooLarge { bits, limit: self.cfg.global_msg_bits });
        }
        if !self.knows_id(from, to_id) {
            self.log_violation(from, ViolationKind::UnknownId, format!("target id {to_id}"));
            return Err(HybridError::UnknownTargetId { from, id: to_id });
        }
        let to = *self
            .id_to_index
            .get(&to_id)
            .ok_or(HybridError::UnknownNode(usize::MAX))?;
        if self.sent_global[from] >= self.cfg.global_send_cap {
            self.log_violation(
                from,
                ViolationKind::SendCap,
                format!("over {} sends", self.cfg.global_send_cap),
            );
            if matches!(self.cfg.overflow_policy, OverflowPolicy::Fail) {
                return Err(HybridError::CapViolation {
                    round: self.round,
                    node: from,
                    kind: ViolationKind::SendCap,
                    detail: format!("cap {}", self.cfg.global_send_cap),
                });
            }
            return Ok(()); // dropped
        }
        self.sent_global[from] += 1;
        self.pending_round.global_msgs += 1;
        self.pending_round.global_bits += bits;
        self.seq += 1;
        self.staged_global.push(Envelope { from, to, seq: self.seq, payload });
        Ok(())
    }

    /// Closes the current round: delivers staged messages (sorted by sender
    /// identifier, then send order), enforces receive caps, and advances the
    /// round counter.
    pub fn end_round(&mut self) -> Result<(), HybridError> {
        let n = self.g.n();
        for inbox in self.inbox_local.iter_mut() {
            inbox.clear();
        }
        for inbox in self.inbox_global.iter_mut() {
            inbox.clear();
        }
        let max_sent = *self.sent_global.iter().max().unwrap_or(&0);
        self.transcript.max_global_sent = self.transcript.max_global_sent.max(max_sent);

        let mut local = std::mem::take(&mut self.staged_local);
        local.sort_by_key(|e| (self.g.node_id(e.from), e.seq));
        for env in local {
            self.inbox_local[env.to].push((env.from, env.payload));
        }

        let mut global = std::mem::take(&mut self.staged_global);
        global.sort_by_key(|e| (self.g.node_id(e.from), e.seq));
        let mut recv_count = vec![0u32; n];
        let mut failure: Option<HybridError> = None;
        for env in global {
            if recv_count[env.to] >= self.cfg.global_recv_cap {
                self.log_violation(
                    env.to,
                    ViolationKind::RecvCap,
                    format!("over {} receives", self.cfg.global_recv_cap),
                );
                if matches!(self.cfg.overflow_policy, OverflowPolicy::Fail) && failure.is_none() {
                    failure = Some(HybridError::CapViolation {
                        round: self.round,
                        node: env.to,
                        kind: ViolationKind::RecvCap,
                        detail: format!("cap {}", self.cfg.global_recv_cap),
                    });
                }
                continue; // dropped (logged above)
            }
            recv_count[env.to] += 1;
            if let Some(known) = &mut self.known_ids {
                known[env.to].insert(self.g.node_id(env.from));
                for id in env.payload.carried_ids() {
                    known[env.to].insert(id);
                }
            }
            self.inbox_global[env.to].push((self.g.node_id(env.from), env.payload));
        }
        let max_recv = *recv_count.iter().max().unwrap_or(&0);
        self.transcript.max_global_recv = self.transcript.max_global_recv.max(max_recv);

        let stats = std::mem::take(&mut self.pending_round);
        self.transcript.totals.add(&stats);
        self.transcript.per_round.push(stats);
        self.transcript.rounds += 1;
        self.round += 1;
        self.sent_global.iter_mut().for_each(|c| *c = 0);
        self.local_bits_used.clear();
        if let Some(err) = failure {
            self.transcript.outcome = ExecOutcome::Violated;
            return Err(err);
        }
        Ok(())
    }

    /// Bulk-accounts `rounds` rounds of full local flooding: every node
    /// forwards on every incident edge each round. No global traffic.
    pub fn charge_flood_rounds(&mut self, rounds: u64) {
        let per_round = RoundStats {
            local_msgs: 2 * self.g.m() as u64,
            local_bits: 2 * self.g.m() as u64 * self.word_bits as u64,
            global_msgs: 0,
            global_bits: 0,
        };
        for _ in 0..rounds {
            self.transcript.totals.add(&per_round);
            self.transcript.per_round.push(per_round);
        }
        self.transcript.rounds += rounds;
        self.round += rounds;
    }

    /// Bulk-accounts `rounds` rounds with no traffic at all (waiting).
    pub fn charge_idle_rounds(&mut self, rounds: u64) {
        for _ in 0..rounds {
            self.transcript.per_round.push(RoundStats::default());
        }
        self.transcript.rounds += rounds;
        self.round += rounds;
    }

    /// Removes and returns node `v`'s local inbox for this round.
    pub fn take_local_inbox(&mut self, v: usize) -> Vec<(usize, P)> {
        std::mem::take(&mut self.inbox_local[v])
    }

    /// Removes and returns node `v`'s global inbox for this round; senders
    /// are reported by identifier.
    pub fn take_global_inbox(&mut self, v: usize) -> Vec<(u64, P)> {
        std::mem::take(&mut self.inbox_global[v])
    }

    pub fn set_output(&mut self, v: usize, out: String) {
        self.transcript.outputs[v] = Some(out);
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn finish(mut self, outcome: ExecOutcome) -> Transcript {
        // A run always consumes at least one round by convention.
        if self.transcript.rounds == 0 {
            self.charge_idle_rounds(1);
        }
        self.transcript.outcome = outcome;
        self.transcript
    }

    fn log_violation(&mut self, node: usize, kind: ViolationKind, detail: String) {
        self.transcript.violations.push(Violation { round: self.round, node, kind, detail });
    }
}

/// The message type shared by the algorithm modules: a short vector of
/// words.
pub type Net<'g> = HybridNetwork<'g, Vec<u64>>;

/// Delivers a batch of global sends over as many rounds as the caps require.
/// Each round, every pending send whose sender still has send budget and
/// whose receiver still has receive budget goes out; the rest wait. Returns
/// the deliveries in arrival order as (receiver, sender id, payload).
///
/// The scheduler is deterministic and never triggers a cap violation.
pub fn run_sends_capped(
    net: &mut Net,
    mut sends: Vec<(usize, u64, Vec<u64>)>,
) -> Result<Vec<(usize, u64, Vec<u64>)>, HybridError> {
    let mut delivered = Vec::with_capacity(sends.len());
    while !sends.is_empty() {
        let mut sent_count: HashMap<usize, u32> = HashMap::new();
        let mut recv_count: HashMap<u64, u32> = HashMap::new();
        let mut deferred = Vec::new();
        let mut receivers: Vec<usize> = Vec::new();
        for (from, to_id, payload) in sends {
            let s = sent_count.entry(from).or_insert(0);
            let r = recv_count.entry(to_id).or_insert(0);
            if *s < net.cfg.global_send_cap && *r < net.cfg.global_recv_cap {
                *s += 1;
                *r += 1;
                let to = *net.id_to_index.get(&to_id).expect("known receiver id");
                receivers.push(to);
                net.send_global(from, to_id, payload)?;
            } else {
                deferred.push((from, to_id, payload));
            }
        }
        net.end_round()?;
        receivers.sort_unstable();
        receivers.dedup();
        for to in receivers {
            for (from_id, payload) in net.take_global_inbox(to) {
                delivered.push((to, from_id, payload));
            }
        }
        sends = deferred;
    }
    Ok(delivered)
}

/// Per-round decision of a node program.
#[derive(Debug, Clone, Copy, Default)]
pub struct Action {
    pub halt: bool,
}

/// View and send-buffer handed to a node each round.
pub struct NodeCtx<'a, P: Payload> {
    pub node: usize,
    pub id: u64,
    pub round: u64,
    /// (neighbor index, neighbor identifier) pairs.
    pub neighbors: &'a [(usize, u64)],
    pub local_in: &'a [(usize, P)],
    pub global_in: &'a [(u64, P)],
    pub rng: &'a mut ChaCha12Rng,
    out_local: Vec<(usize, P)>,
    out_global: Vec<(u64, P)>,
    output: Option<String>,
}

impl<'a, P: Payload> NodeCtx<'a, P> {
    pub fn send_local(&mut self, to: usize, payload: P) {
        self.out_local.push((to, payload));
    }

    pub fn send_global(&mut self, to_id: u64, payload: P) {
        self.out_global.push((to_id, payload));
    }

    pub fn set_output(&mut self, out: String) {
        self.output = Some(out);
    }
}

/// A lock-step per-node program: invoked once per round with the messages
/// delivered at the start of that round.
pub trait NodeProgram<P: Payload> {
    fn on_round(&mut self, ctx: &mut NodeCtx<P>) -> Action;
}

/// Runs one program instance per node until all halt or the budget is
/// exhausted. Deterministic for a fixed (graph, cfg, programs, seed).
pub fn execute<P: Payload, Prog: NodeProgram<P>>(
    g: &Graph,
    cfg: ModelConfig,
    mut programs: Vec<Prog>,
    round_budget: u64,
    seed: u64,
) -> Result<Transcript, HybridError> {
    assert_eq!(programs.len(), g.n(), "one program per node");
    assert!(round_budget >= 1, "round budget must be ≥ 1");
    let mut net: HybridNetwork<P> = HybridNetwork::new(g, cfg, seed)?;
    let mut halted = vec![false; g.n()];
    let neighbor_ids: Vec<Vec<(usize, u64)>> = (0..g.n())
        .map(|v| g.neighbors(v).iter().map(|&(u, _)| (u, g.node_id(u))).collect())
        .collect();
    for _ in 0..round_budget {
        let mut sends: Vec<(usize, Vec<(usize, P)>, Vec<(u64, P)>)> = Vec::new();
        for v in 0..g.n() {
            if halted[v] {
                net.take_local_inbox(v);
                net.take_global_inbox(v);
                continue;
            }
            let local_in = net.take_local_inbox(v);
            let global_in = net.take_global_inbox(v);
            let round = net.round();
            let mut ctx = NodeCtx {
                node: v,
                id: g.node_id(v),
                round,
                neighbors: &neighbor_ids[v],
                local_in: &local_in,
                global_in: &global_in,
                rng: &mut net.rngs[v],
                out_local: Vec::new(),
                out_global: Vec::new(),
                output: None,
            };
            let action = programs[v].on_round(&mut ctx);
            let NodeCtx { out_local, out_global, output, .. } = ctx;
            if let Some(out) = output {
                net.set_output(v, out);
            }
            halted[v] = action.halt;
            sends.push((v, out_local, out_global));
        }
        for (v, out_local, out_global) in sends {
            for (to, payload) in out_local {
                net.send_local(v, to, payload)?;
            }
            for (to_id, payload) in out_global {
                net.send_global(v, to_id, payload)?;
            }
        }
        net.end_round()?;
        if halted.iter().all(|&h| h) {
            return Ok(net.finish(ExecOutcome::AllHalted));
        }
    }
    Ok(net.finish(ExecOutcome::BudgetExhausted))
}

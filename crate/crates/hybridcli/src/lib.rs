//! Experiment plumbing for the hybrid-model simulator: spec parsing, sweep
//! execution with oracle-checked correctness flags, CSV emission, and
//! least-squares scaling fits.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use hybridsim::dissemination::{disseminate_via_aggregate, flood_disseminate, k_disseminate, TokenSet};
use hybridsim::graphcore::{generate, Graph, GraphKind};
use hybridsim::hybridnet::{log2_ceil, HybridNetwork, IdMode, ModelConfig, Net};
use hybridsim::nq::nq_graph;
use hybridsim::routing::{kl_route, RoutingInstance, Scenario};
use hybridsim::shortestpaths::{
    apsp_unweighted, apsp_weighted_skeleton, apsp_weighted_spanner, k_ssp, sssp, DistanceEstimate,
    SourceMode, SsspMode,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

impl CliError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub const ALGORITHMS: &[&str] = &[
    "k_disseminate",
    "flood_disseminate",
    "disseminate_via_aggregate",
    "kl_route",
    "sssp",
    "k_ssp_random",
    "k_ssp_arbitrary",
    "apsp_unweighted",
    "apsp_weighted_spanner",
    "apsp_weighted_skeleton",
];

/// Parses a graph description such as `path:256`, `cycle:100`, `grid2:16`,
/// `grid:3,8`, `er:128,0.1`, or `tree:200`.
pub fn parse_graph_kind(s: &str) -> Result<GraphKind, CliError> {
    let bad = || CliError::Validation(format!("unrecognized graph spec '{s}'"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let int = |t: &str| t.parse::<usize>().map_err(|_| bad());
    match kind {
        "path" => Ok(GraphKind::Path { n: int(rest)? }),
        "cycle" => Ok(GraphKind::Cycle { n: int(rest)? }),
        "grid2" => Ok(GraphKind::Grid { d: 2, m: int(rest)? }),
        "grid3" => Ok(GraphKind::Grid { d: 3, m: int(rest)? }),
        "grid" => {
            let (d, m) = rest.split_once(',').ok_or_else(bad)?;
            Ok(GraphKind::Grid { d: int(d)? as u32, m: int(m)? })
        }
        "er" => {
            let (n, p) = rest.split_once(',').ok_or_else(bad)?;
            let p: f64 = p.parse().map_err(|_| bad())?;
            Ok(GraphKind::ErdosRenyi { n: int(n)?, p })
        }
        "tree" => Ok(GraphKind::RandomTree { n: int(rest)? }),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Graph descriptions, one sweep point each.
    pub graphs: Vec<String>,
    pub algo: String,
    /// Absolute k; overrides `k_over_n` when set.
    #[serde(default)]
    pub k: Option<usize>,
    /// k as a fraction of n (default 0.25 when neither is given).
    #[serde(default)]
    pub k_over_n: Option<f64>,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub alpha: Option<u32>,
    /// Routing scenario: arb_rand | rand_arb | rand_rand.
    #[serde(default)]
    pub scenario: Option<String>,
    pub seeds: Vec<u64>,
    /// Round budget per run; exceeding it is recorded as a row failure.
    #[serde(default)]
    pub budget: Option<u64>,
    /// hybrid | hybrid0.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub out: Option<String>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if !ALGORITHMS.contains(&self.algo.as_str()) {
            return Err(CliError::Validation(format!(
                "unknown algorithm '{}'; supported: {}",
                self.algo,
                ALGORITHMS.join(", ")
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Validation("seed list is empty".into()));
        }
        if self.graphs.is_empty() {
            return Err(CliError::Validation("no graphs given".into()));
        }
        for g in &self.graphs {
            parse_graph_kind(g)?;
        }
        match self.mode.as_deref() {
            None | Some("hybrid") | Some("hybrid0") => {}
            Some(other) => {
                return Err(CliError::Validation(format!(
                    "mode must be hybrid or hybrid0, got '{other}'"
                )))
            }
        }
        if let Some(s) = self.scenario.as_deref() {
            parse_scenario(s)?;
        }
        Ok(())
    }
}

fn parse_scenario(s: &str) -> Result<Scenario, CliError> {
    match s {
        "arb_rand" => Ok(Scenario::ArbSrcRandTgt),
        "rand_arb" => Ok(Scenario::RandSrcArbTgt),
        "rand_rand" => Ok(Scenario::RandSrcRandTgt),
        other => Err(CliError::Validation(format!(
            "scenario must be arb_rand, rand_arb, or rand_rand, got '{other}'"
        ))),
    }
}

/// One finished sweep point.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub graph: String,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub nq: u32,
    pub rounds: u64,
    pub global_msgs: u64,
    pub local_msgs: u64,
    /// Oracle-checked; never self-reported by the algorithm.
    pub correct: bool,
    pub max_stretch: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub csv: String,
    pub any_error: bool,
    pub any_incorrect: bool,
}

impl RunOutput {
    /// 0 clean, 2 if any row failed at runtime, 3 if any correctness flag
    /// is false. Correctness dominates.
    pub fn exit_code(&self) -> i32 {
        if self.any_incorrect {
            3
        } else if self.any_error {
            2
        } else {
            0
        }
    }
}

fn fresh_net<'g>(g: &'g Graph, mode: Option<&str>, seed: u64) -> Result<Net<'g>, CliError> {
    let mut cfg = ModelConfig::defaults_for(g.n());
    if mode == Some("hybrid0") {
        cfg.id_mode = IdMode::Hybrid0 { id_exponent: 3 };
    }
    HybridNetwork::new(g, cfg, seed).map_err(|e| CliError::Runtime(e.to_string()))
}

fn estimate_row(
    est: &DistanceEstimate,
    g: &Graph,
) -> (bool, Option<f64>) {
    let report = est.check_against_oracle(g);
    let ok = report.underestimates == 0 && report.max_ratio <= est.alpha + 1e-9;
    (ok, Some(report.max_ratio))
}

fn run_point(
    spec: &ExperimentSpec,
    graph_spec: &str,
    seed: u64,
) -> Result<RunRow, CliError> {
    let kind = parse_graph_kind(graph_spec)?;
    let mut g = generate(&kind, seed).map_err(|e| CliError::Validation(e.to_string()))?;
    let n = g.n();
    let k = spec
        .k
        .unwrap_or_else(|| ((n as f64) * spec.k_over_n.unwrap_or(0.25)).round() as usize)
        .clamp(1, n);
    let l = spec.l.unwrap_or(k).clamp(1, n);
    let eps = spec.eps.unwrap_or(0.25);
    let alpha = spec.alpha.unwrap_or(2);
    if matches!(
        spec.algo.as_str(),
        "sssp" | "apsp_weighted_spanner" | "apsp_weighted_skeleton"
    ) {
        g.randomize_weights(1, seed);
    }
    if spec.mode.as_deref() == Some("hybrid0") {
        g.assign_random_ids(3, seed)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let nq = nq_graph(&g, k).nq_graph;
    let mut net = fresh_net(&g, spec.mode.as_deref(), seed)?;

    let mut correct = false;
    let mut max_stretch = None;
    let mut error = None;
    let outcome: Result<(), String> = (|| {
        match spec.algo.as_str() {
            "k_disseminate" | "flood_disseminate" | "disseminate_via_aggregate" => {
                let tokens = TokenSet::spread(&g, k);
                let run = match spec.algo.as_str() {
                    "k_disseminate" => k_disseminate(&mut net, &tokens).map_err(|e| e.to_string())?,
                    "disseminate_via_aggregate" => {
                        disseminate_via_aggregate(&mut net, &tokens).map_err(|e| e.to_string())?
                    }
                    _ => flood_disseminate(&mut net, &tokens),
                };
                correct = run.holdings.complete();
            }
            "kl_route" => {
                let scenario = spec
                    .scenario
                    .as_deref()
                    .map(parse_scenario)
                    .transpose()
                    .map_err(|e| e.to_string())?
                    .unwrap_or(Scenario::RandSrcRandTgt);
                let instance = RoutingInstance::generate(&g, scenario, k, l, seed);
                let run = kl_route(&mut net, &instance).map_err(|e| e.to_string())?;
                correct = (0..l).all(|tj| {
                    let mut expected: Vec<(u64, u64)> = (0..k)
                        .map(|si| (instance.origin_ids[si], instance.payloads[si][tj]))
                        .collect();
                    expected.sort_unstable();
                    run.delivered[tj] == expected
                });
            }
            "sssp" => {
                let est = sssp(&mut net, 0, eps, SsspMode::InModel).map_err(|e| e.to_string())?;
                (correct, max_stretch) = estimate_row(&est, &g);
            }
            "k_ssp_random" | "k_ssp_arbitrary" => {
                let (mode, sources) = if spec.algo == "k_ssp_random" {
                    use rand::seq::SliceRandom;
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x5eed);
                    let mut all: Vec<usize> = (0..n).collect();
                    all.shuffle(&mut rng);
                    let mut s: Vec<usize> = all.into_iter().take(k).collect();
                    s.sort_unstable();
                    (SourceMode::Random, s)
                } else {
                    (SourceMode::Arbitrary, (0..k).collect())
                };
                let est = k_ssp(&mut net, &sources, eps, mode).map_err(|e| e.to_string())?;
                (correct, max_stretch) = estimate_row(&est, &g);
            }
            "apsp_unweighted" => {
                let est = apsp_unweighted(&mut net, eps).map_err(|e| e.to_string())?;
                (correct, max_stretch) = estimate_row(&est, &g);
            }
            "apsp_weighted_spanner" => {
                let est = apsp_weighted_spanner(&mut net, eps).map_err(|e| e.to_string())?;
                (correct, max_stretch) = estimate_row(&est, &g);
            }
            "apsp_weighted_skeleton" => {
                let est = apsp_weighted_skeleton(&mut net, alpha).map_err(|e| e.to_string())?;
                (correct, max_stretch) = estimate_row(&est, &g);
            }
            other => return Err(format!("unknown algorithm '{other}'")),
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        error = Some(e);
        correct = false;
    }
    if !net.transcript().violations.is_empty() {
        correct = false;
        error.get_or_insert_with(|| "capacity violation recorded".to_string());
    }
    let rounds = net.round();
    if let Some(budget) = spec.budget {
        if rounds > budget {
            error.get_or_insert_with(|| format!("round budget exceeded: {rounds} > {budget}"));
        }
    }
    let totals = &net.transcript().totals;
    Ok(RunRow {
        graph: graph_spec.to_string(),
        n,
        k,
        l,
        seed,
        nq,
        rounds,
        global_msgs: totals.global_msgs,
        local_msgs: totals.local_msgs,
        correct,
        max_stretch,
        error,
    })
}

pub const CSV_HEADER: &str =
    "algo,graph,n,k,l,seed,nq,rounds,global_msgs,local_msgs,correct,max_stretch,error";

/// Runs every (graph, seed) sweep point; algorithm failures are recorded in
/// their row and the sweep continues. Output bytes are a pure function of
/// the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for graph_spec in &spec.graphs {
        for &seed in &spec.seeds {
            rows.push(run_point(spec, graph_spec, seed)?);
        }
    }
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let stretch = r
            .max_stretch
            .map(|s| format!("{s:.6}"))
            .unwrap_or_default();
        let error = r.error.as_deref().unwrap_or("").replace(',', ";");
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            spec.algo,
            r.graph,
            r.n,
            r.k,
            r.l,
            r.seed,
            r.nq,
            r.rounds,
            r.global_msgs,
            r.local_msgs,
            r.correct,
            stretch,
            error
        );
    }
    let any_error = rows.iter().any(|r| r.error.is_some());
    let any_incorrect = rows.iter().any(|r| !r.correct);
    Ok(RunOutput { rows, csv, any_error, any_incorrect })
}

// ---------------------------------------------------------------------------
// Scaling fits

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    NqK,
    SqrtK,
}

impl Predictor {
    pub fn parse(s: &str) -> Result<Predictor, CliError> {
        match s {
            "nq" | "nq_k" => Ok(Predictor::NqK),
            "sqrt_k" => Ok(Predictor::SqrtK),
            other => Err(CliError::Validation(format!(
                "predictor must be nq or sqrt_k, got '{other}'"
            ))),
        }
    }

    fn value(self, p: &FitPoint) -> f64 {
        match self {
            Predictor::NqK => p.nq as f64,
            Predictor::SqrtK => (p.k as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitPoint {
    pub n: usize,
    pub k: usize,
    pub nq: u32,
    pub rounds: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub predictor: String,
    pub points: usize,
    /// Fitted C in rounds ≈ C · predictor · log2(n)^exponent.
    pub constant: f64,
    pub exponent: f64,
    /// Root-mean-square residual in log space.
    pub rms_residual: f64,
}

/// Least-squares fit of rounds against predictor·log^e n: linear regression
/// of ln(rounds/predictor) on ln(log2 n) yields the exponent (slope) and
/// the constant (exp of the intercept).
pub fn fit_scaling(points: &[FitPoint], predictor: Predictor) -> Result<FitReport, CliError> {
    if points.len() < 5 {
        return Err(CliError::Validation(format!(
            "need at least 5 data points, got {}",
            points.len()
        )));
    }
    let samples: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let pv = predictor.value(p).max(1.0);
            let t = (log2_ceil(p.n) as f64).ln();
            let y = ((p.rounds as f64).max(1.0) / pv).ln();
            (t, y)
        })
        .collect();
    let distinct_t = {
        let mut ts: Vec<u64> = samples.iter().map(|&(t, _)| t.to_bits()).collect();
        ts.sort_unstable();
        ts.dedup();
        ts.len()
    };
    if distinct_t < 2 {
        return Err(CliError::Validation(
            "need at least two distinct graph sizes to fit an exponent".into(),
        ));
    }
    let m = samples.len() as f64;
    let (st, sy): (f64, f64) = samples.iter().fold((0.0, 0.0), |(a, b), &(t, y)| (a + t, b + y));
    let (tbar, ybar) = (st / m, sy / m);
    let (mut num, mut den) = (0.0, 0.0);
    for &(t, y) in &samples {
        num += (t - tbar) * (y - ybar);
        den += (t - tbar) * (t - tbar);
    }
    let exponent = num / den;
    let intercept = ybar - exponent * tbar;
    let rms = (samples
        .iter()
        .map(|&(t, y)| {
            let r = y - (intercept + exponent * t);
            r * r
        })
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(FitReport {
        predictor: format!("{predictor:?}"),
        points: points.len(),
        constant: intercept.exp(),
        exponent,
        rms_residual: rms,
    })
}

/// Reads fit points from experiment CSV output (needs n, k, nq, rounds
/// columns).
pub fn parse_fit_csv(text: &str) -> Result<Vec<FitPoint>, CliError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("bad CSV header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("CSV is missing column '{name}'")))
    };
    let (cn, ck, cnq, cr) = (col("n")?, col("k")?, col("nq")?, col("rounds")?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Validation(format!("bad CSV row: {e}")))?;
        let field = |i: usize| -> Result<u64, CliError> {
            record
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| CliError::Validation(format!("unparseable field {i}")))
        };
        out.push(FitPoint {
            n: field(cn)? as usize,
            k: field(ck)? as usize,
            nq: field(cnq)? as u32,
            rounds: field(cr)?,
        });
    }
    Ok(out)
}

//! Command-line experiment runner. Exit codes: 0 success, 1 validation
//! error, 2 runtime failure, 3 correctness failure detected.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybridcli::{
    fit_scaling, parse_fit_csv, parse_graph_kind, run_experiment, CliError, ExperimentSpec,
    Predictor,
};
use hybridsim::graphcore::generate;
use hybridsim::nq::nq_graph;

#[derive(Parser)]
#[command(name = "hybridcli", about = "Hybrid-model experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Graph spec, e.g. path:256, cycle:100, grid2:16, er:128,0.1, tree:200.
    #[arg(long)]
    graph: Option<String>,
    /// Algorithm identifier.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    alpha: Option<u32>,
    /// Comma-separated seed list, e.g. 1,2,3.
    #[arg(long)]
    seeds: Option<String>,
    /// Round budget per run.
    #[arg(long)]
    budget: Option<u64>,
    /// Output path (CSV); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// hybrid or hybrid0.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph and write it as a text edge list.
    Gen {
        #[arg(long)]
        graph: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the neighborhood-quality report of a graph.
    Nq {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment from a JSON spec file and/or flag overrides.
    Run {
        /// JSON ExperimentSpec file; flags override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the canonical path and 2-D grid sweeps for an algorithm
    /// (requires --algo).
    Bench {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit rounds against predictor·log^e n from experiment CSV output.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        /// nq or sqrt_k.
        #[arg(long, default_value = "nq")]
        predictor: String,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("bad seed '{t}'")))
        })
        .collect()
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn apply_overrides(spec: &mut ExperimentSpec, ov: &Overrides) {
    if let Some(g) = &ov.graph {
        spec.graphs = vec![g.clone()];
    }
    if let Some(a) = &ov.algo {
        spec.algo = a.clone();
    }
    if ov.k.is_some() {
        spec.k = ov.k;
    }
    if ov.l.is_some() {
        spec.l = ov.l;
    }
    if ov.eps.is_some() {
        spec.eps = ov.eps;
    }
    if ov.alpha.is_some() {
        spec.alpha = ov.alpha;
    }
    if ov.budget.is_some() {
        spec.budget = ov.budget;
    }
    if let Some(m) = &ov.mode {
        spec.mode = Some(m.clone());
    }
    if let Some(out) = &ov.out {
        spec.out = Some(out.display().to_string());
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Gen { graph, seed, out } => {
            let kind = parse_graph_kind(&graph)?;
            let g = generate(&kind, seed).map_err(|e| CliError::Validation(e.to_string()))?;
            emit(&out, &g.to_text())?;
            Ok(0)
        }
        Command::Nq { graph, k, seed, out } => {
            let kind = parse_graph_kind(&graph)?;
            let g = generate(&kind, seed).map_err(|e| CliError::Validation(e.to_string()))?;
            if k < 1 || k > g.n() {
                return Err(CliError::Validation(format!("need 1 ≤ k ≤ n, got k={k}")));
            }
            let report = nq_graph(&g, k);
            eprintln!("nq_graph({k}) = {}", report.nq_graph);
            emit(&out, &report.to_csv())?;
            Ok(0)
        }
        Command::Run { spec, overrides } => {
            let mut spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        CliError::Validation(format!("reading {}: {e}", path.display()))
                    })?;
                    serde_json::from_str(&text).map_err(|e| {
                        CliError::Validation(format!("{}: {e}", path.display()))
                    })?
                }
                None => ExperimentSpec {
                    graphs: Vec::new(),
                    algo: String::new(),
                    k: None,
                    k_over_n: None,
                    l: None,
                    eps: None,
                    alpha: None,
                    scenario: None,
                    seeds: vec![1, 2, 3],
                    budget: None,
                    mode: None,
                    out: None,
                },
            };
            apply_overrides(&mut spec, &overrides);
            if let Some(s) = &overrides.seeds {
                spec.seeds = parse_seeds(s)?;
            }
            let output = run_experiment(&spec)?;
            let out_path = spec.out.as_ref().map(PathBuf::from);
            emit(&out_path, &output.csv)?;
            Ok(output.exit_code())
        }
        Command::Bench { overrides } => {
            let algo = overrides
                .algo
                .clone()
                .ok_or_else(|| CliError::Validation("bench requires --algo".into()))?;
            let mut spec = ExperimentSpec {
                graphs: [
                    "path:64",
                    "path:128",
                    "path:256",
                    "path:512",
                    "path:1024",
                    "grid2:8",
                    "grid2:11",
                    "grid2:16",
                    "grid2:23",
                    "grid2:32",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                algo,
                k: None,
                k_over_n: Some(0.25),
                l: None,
                eps: None,
                alpha: None,
                scenario: None,
                seeds: (1..=5).collect(),
                budget: None,
                mode: None,
                out: None,
            };
            let mut ov = overrides.clone();
            ov.graph = None; // bench always sweeps the canonical graphs
            ov.algo = None;
            apply_overrides(&mut spec, &ov);
            if let Some(s) = &ov.seeds {
                spec.seeds = parse_seeds(s)?;
            }
            let output = run_experiment(&spec)?;
            let out_path = spec.out.as_ref().map(PathBuf::from);
            emit(&out_path, &output.csv)?;
            Ok(output.exit_code())
        }
        Command::Fit { csv, predictor } => {
            let predictor = Predictor::parse(&predictor)?;
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| CliError::Validation(format!("reading {}: {e}", csv.display())))?;
            let points = parse_fit_csv(&text)?;
            let report = fit_scaling(&points, predictor)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

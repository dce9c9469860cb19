use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lookdown_core::dual::{duality_grid, simulate_k, simulate_r, DualityCell, DualitySpec};
use lookdown_core::error::HarnessError;
use lookdown_core::harness::{
    convergence_experiment, exchangeability_test, extinction_threshold_experiment, fixation_experiment,
    run_replicas, simulate_outcomes, ExperimentResult, Verdict,
};
use lookdown_core::kernel::{conv_identity_check, kernel_identity_grid, ConvCheck, KernelReport};
use lookdown_core::measure::LambdaMeasure;
use lookdown_core::parallel::threads_from_env;
use lookdown_core::path::{write_csv, Path};
use lookdown_core::rates::{capital_phi, cdi_classify, mu_threshold, phi, CdiVerdict, RateTable};
use lookdown_core::rng::substream;
use lookdown_core::scenario::{DualProcess, Engine, RatesBlock, ScenarioConfig};
use lookdown_core::stats::SummaryStats;

#[derive(Parser)]
#[command(name = "lambda-lookdown", version, about = "Lambda-lookdown simulations and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Replica count; overrides the scenario's.
    #[arg(long, global = true)]
    replicas: Option<u64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Merger rates, φ, Φ and μ.
    Rates,
    /// Coming-down-from-infinity classification.
    Cdi,
    /// Paths of the lookdown particle system.
    Lookdown,
    /// Paths of the jump SDE.
    Sde,
    /// Paths of the dual chain (`R` or `K`).
    Dual,
    /// Moment duality between the SDE and the block-counting chain.
    Duality,
    Fixation,
    Extinction,
    Converge,
    Exchangeability,
    /// Exact identities of the finite-N kernel.
    KernelCheck,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RateRow {
    n: u64,
    total: f64,
    phi: f64,
    /// Absent when infinite.
    capital_phi: Option<f64>,
    /// `λ_{n,ℓ}` for `ℓ = 2..=n`.
    lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RatesReport {
    /// Absent when infinite or undefined.
    mu: Option<f64>,
    rows: Vec<RateRow>,
    cdi: CdiVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridPoint {
    t: f64,
    value: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PathSummary {
    process: String,
    seed: u64,
    replicas: u64,
    points: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DualityReport {
    seed: u64,
    replicas: u64,
    pass: bool,
    cells: Vec<DualityCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvRow {
    n: u64,
    r: f64,
    check: ConvCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KernelCheckReport {
    identities: KernelReport,
    conv: Vec<ConvRow>,
    conv_tolerance: f64,
    pass: bool,
}

/// Quadrature-limited tolerance for the convolution identity.
const CONV_TOL: f64 = 1e-6;

enum Failure {
    Config(String),
    Run(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(m) => Failure::Config(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

struct Emitted {
    text: String,
    pass: bool,
}

fn json<T: Serialize>(value: &T, pass: bool) -> Emitted {
    let mut text = serde_json::to_string_pretty(value).expect("results serialize");
    text.push('\n');
    Emitted { text, pass }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let written = match &cli.out {
                Some(p) => std::fs::write(p, &out.text).map_err(|e| format!("{}: {e}", p.display())),
                None => {
                    print!("{}", out.text);
                    Ok(())
                }
            };
            match written {
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
                Ok(()) if out.pass => ExitCode::SUCCESS,
                Ok(()) => ExitCode::from(1),
            }
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("this subcommand needs --config <path>".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(r) = cli.replicas {
        if r == 0 {
            return Err(Failure::Config("--replicas must be at least 1".into()));
        }
        cfg.replicas = r;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Emitted, Failure> {
    let threads = threads_from_env();
    let format = cli.format;
    if cli.command == Command::KernelCheck {
        let measure = match &cli.config {
            Some(_) => load(cli)?.lambda,
            None => LambdaMeasure::uniform(1.0),
        };
        return kernel_check(&measure, format);
    }
    let cfg = load(cli)?;
    match cli.command {
        Command::Rates => Ok(rates(&cfg, format)),
        Command::Cdi => {
            let b = cfg.rates.unwrap_or_else(default_rates);
            let v = cdi_classify(&cfg.lambda, b.cdi_n_max, b.analytic_hints);
            Ok(match format {
                Some(Format::Csv) => Emitted {
                    text: format!("verdict,rationale,growth_exponent\n{:?},{:?},{}\n", v.verdict, v.rationale, v.growth_exponent),
                    pass: true,
                },
                _ => json(&v, true),
            })
        }
        Command::Lookdown | Command::Sde => {
            let engine = if cli.command == Command::Lookdown { Engine::Lookdown } else { Engine::Sde };
            let seed = cfg.resolve_seed(cli.seed)?;
            let grid = cfg.grid();
            let outcomes = simulate_outcomes(&cfg, engine, cfg.n, seed, 0..cfg.replicas, &grid, threads)?;
            let paths: Vec<Path> = outcomes.into_iter().map(|o| o.path).collect();
            let name = if engine == Engine::Lookdown { "lookdown" } else { "sde" };
            Ok(emit_paths(name, seed, &grid, &paths, format))
        }
        Command::Dual => {
            let block = cfg.dual.ok_or_else(|| Failure::Config("`dual`: block required".into()))?;
            let seed = cfg.resolve_seed(cli.seed)?;
            let grid = cfg.grid();
            let t_end = cfg.t_end.max(grid.last().copied().unwrap_or(0.0));
            let paths = run_replicas(0..cfg.replicas, threads, |r| {
                let rng = &mut substream(seed, r);
                match block.process {
                    DualProcess::R => simulate_r(&cfg.lambda, cfg.alpha, block.n0, t_end, &grid, rng),
                    DualProcess::K => simulate_k(&cfg.lambda, cfg.alpha, block.n0, t_end, &grid, block.variant, rng),
                }
            })?;
            let name = match block.process {
                DualProcess::R => "R",
                DualProcess::K => "K",
            };
            Ok(emit_paths(name, seed, &grid, &paths, format))
        }
        Command::Duality => {
            let block = cfg.duality.clone().ok_or_else(|| Failure::Config("`duality`: block required".into()))?;
            let seed = cfg.resolve_seed(cli.seed)?;
            let spec = DualitySpec {
                alphas: block.alphas,
                xs: block.xs,
                ns: block.ns,
                ts: block.ts,
                replicas: cfg.replicas,
                seed,
                sde: cfg.sde,
            };
            let cells = duality_grid(&cfg.lambda, &spec, threads).map_err(|e| Failure::Run(e.to_string()))?;
            let pass = cells.iter().all(|c| c.pass);
            Ok(match format {
                Some(Format::Csv) => {
                    let mut text = String::from("alpha,x,n,t,lhs,rhs,gap,se,pass\n");
                    for c in &cells {
                        let _ = writeln!(text, "{},{},{},{},{},{},{},{},{}", c.alpha, c.x, c.n, c.t, c.lhs, c.rhs, c.gap, c.se, c.pass);
                    }
                    Emitted { text, pass }
                }
                _ => json(&DualityReport { seed, replicas: cfg.replicas, pass, cells }, pass),
            })
        }
        Command::Fixation | Command::Extinction | Command::Converge | Command::Exchangeability => {
            let seed = cfg.resolve_seed(cli.seed)?;
            let res = match cli.command {
                Command::Fixation => fixation_experiment(&cfg, seed, threads),
                Command::Extinction => extinction_threshold_experiment(&cfg, seed, threads),
                Command::Converge => convergence_experiment(&cfg, seed, threads),
                _ => exchangeability_test(&cfg, seed, threads),
            }?;
            Ok(emit_experiment(&res, format))
        }
        Command::KernelCheck => unreachable!("handled above"),
    }
}

fn default_rates() -> RatesBlock {
    serde_json::from_str("{}").expect("defaults are valid")
}

fn rates(cfg: &ScenarioConfig, format: Option<Format>) -> Emitted {
    let b = cfg.rates.unwrap_or_else(default_rates);
    let table = RateTable::new(&cfg.lambda, b.n_max);
    let rows: Vec<RateRow> = (2..=b.n_max)
        .map(|n| RateRow {
            n,
            total: table.total(n),
            phi: phi(&cfg.lambda, n),
            capital_phi: Some(capital_phi(&cfg.lambda, n)).filter(|v| v.is_finite()),
            lambda: (2..=n).map(|l| table.lambda(n, l)).collect(),
        })
        .collect();
    match format {
        Some(Format::Csv) => {
            let mut text = String::from("n,total,phi,capital_phi\n");
            for r in &rows {
                let _ = writeln!(text, "{},{},{},{}", r.n, r.total, r.phi, r.capital_phi.unwrap_or(f64::INFINITY));
            }
            Emitted { text, pass: true }
        }
        _ => {
            let report = RatesReport {
                mu: mu_threshold(&cfg.lambda).ok().filter(|v| v.is_finite()),
                rows,
                cdi: cdi_classify(&cfg.lambda, b.cdi_n_max, b.analytic_hints),
            };
            json(&report, true)
        }
    }
}

fn emit_paths(process: &str, seed: u64, grid: &[f64], paths: &[Path], format: Option<Format>) -> Emitted {
    match format {
        Some(Format::Json) => {
            let points = grid
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let vals: Vec<f64> = paths.iter().filter_map(|p| p.points.get(i).map(|q| q.1)).collect();
                    GridPoint { t, value: SummaryStats::from_values(&vals) }
                })
                .collect();
            let summary = PathSummary {
                process: process.into(),
                seed,
                replicas: paths.len() as u64,
                points,
            };
            json(&summary, true)
        }
        _ => {
            let mut out = Vec::new();
            write_csv(&mut out, paths, 0).expect("writing to memory");
            Emitted {
                text: String::from_utf8(out).expect("ascii output"),
                pass: true,
            }
        }
    }
}

fn emit_experiment(res: &ExperimentResult, format: Option<Format>) -> Emitted {
    let pass = res.verdict != Verdict::Fail;
    match format {
        Some(Format::Csv) => {
            let mut text = String::from("metric,mean,se,replicas\n");
            for (k, s) in &res.metrics {
                let _ = writeln!(text, "{k},{},{},{}", s.mean, s.se, s.replicas);
            }
            Emitted { text, pass }
        }
        _ => json(res, pass),
    }
}

fn kernel_check(measure: &LambdaMeasure, format: Option<Format>) -> Result<Emitted, Failure> {
    let kerr = |e: lookdown_core::error::KernelError| Failure::Run(e.to_string());
    let identities = kernel_identity_grid(&[2, 4, 6, 8], &[0.1, 0.5, 0.9], &[0.05, 0.25, 0.5, 0.75, 0.95]).map_err(kerr)?;
    let mut conv = Vec::new();
    if measure.atom0() == 0.0 {
        for n in [4u64, 8, 16] {
            for r in [0.25, 0.5] {
                conv.push(ConvRow { n, r, check: conv_identity_check(n, r, measure).map_err(kerr)? });
            }
        }
    }
    let pass = identities.pass && conv.iter().all(|c| c.check.residual <= CONV_TOL);
    Ok(match format {
        Some(Format::Csv) => Emitted {
            text: format!(
                "max_mean_zero_residual,max_second_moment_error,cells,pass\n{},{},{},{}\n",
                identities.max_mean_zero_residual, identities.max_second_moment_error, identities.cells, pass
            ),
            pass,
        },
        _ => json(
            &KernelCheckReport {
                identities,
                conv,
                conv_tolerance: CONV_TOL,
                pass,
            },
            pass,
        ),
    })
}

//! Command-line front end. `run` never panics on bad input and never calls
//! `process::exit`; it returns the exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dist::{FusionSpec, ValueDistribution, DEFAULT_MPC_TOL};
use crate::equilibrium::{check_symmetric_equilibrium, DeviationClass, SearchOptions};
use crate::error::Error;
use crate::market::{simulate_market, FirmCount, FirmStrategy, MarketConfig, MarketOutcome, OffPathBelief};
use crate::persuade::{concave_envelope, example2_curve, splitting_from, uniform_grid, PayoffCurve, DEFAULT_GRID_STEP};
use crate::repro::{run_case, CaseName, FigureData, ReproOptions};
use crate::search::{solve_reservation, Regime, ReservationProblem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_REPRO_FAILED: i32 = 2;

const CSV_HELP: &str = "\
JSON arguments are inline JSON or a path to a JSON file.

CSV side files (--csv PATH):
  envelope   x, payoff, envelope
  fuse       x, cdf_before, cdf_after
  simulate   row, profit, profit_se, profit_per_visit, profit_per_visit_se,
             visit_rate, purchase_given_visit; the last row is 'consumer' with
             surplus, its standard error and mean visits in the first columns
  repro      example1: x, conjectured_cdf, deviation_cdf
             example2: x, payoff, envelope

Exit codes: 0 success, 1 input error, 2 a reproduced value missed its target.";

#[derive(Debug, Parser)]
#[command(name = "psearch", version, about = "Sequential search with information design", after_help = CSV_HELP)]
struct Cli {
    /// Master seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials (screening trials for `check`)
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Numerical tolerance (contraction checks, exact deviation gains)
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Grid spacing for payoff curves and plot data
    #[arg(long = "grid-step", global = true)]
    grid_step: Option<f64>,
    /// Write the JSON report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write plot-ready CSV here
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reservation value z solving c = E[max(X - p - z, 0)]
    Reserve {
        /// Value distribution
        dist: String,
        #[arg(long)]
        price: f64,
        #[arg(long)]
        cost: f64,
    },
    /// Concave envelope of a payoff curve and the splitting at a mean
    Envelope {
        /// Curve {"grid": [...], "values": [...]} or the builtin `example2`
        curve: String,
        /// Prior mean to split (default 0.5)
        #[arg(long)]
        mean: Option<f64>,
    },
    /// Apply a fusion spec to a distribution
    Fuse {
        dist: String,
        /// {"regions": [[lo, hi, fraction], ...]}
        spec: String,
    },
    /// Simulate a market
    Simulate {
        /// Market spec with `conjecture` and optional per-firm `strategies`
        market: String,
    },
    /// Search for profitable deviations from the spec's conjecture
    Check {
        market: String,
        /// Classes to run: fusion, price, no_info_price, concavification
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        /// Only deviate at conjectured components with these prices
        #[arg(long = "price")]
        prices: Vec<f64>,
    },
    /// Re-run a bundled case: example1, example2, theorem1, theorem2 or all
    Repro { case: String },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Market file accepted by `simulate` and `check`. Without `strategies`
/// every firm plays the conjecture.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub n: FirmCount,
    pub prior: ValueDistribution,
    pub cost: f64,
    pub regime: Regime,
    #[serde(default)]
    pub off_path_belief: OffPathBelief,
    #[serde(default)]
    pub strategies: Option<Vec<FirmStrategy>>,
    pub conjecture: FirmStrategy,
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub search: Option<SearchOptions>,
}

impl MarketSpec {
    /// Overrides win over the file; 100000 trials and seed 0 otherwise.
    pub fn config(&self, trials: Option<u64>, seed: Option<u64>) -> MarketConfig {
        MarketConfig {
            n: self.n,
            prior: self.prior.clone(),
            cost: self.cost,
            regime: self.regime,
            off_path_belief: self.off_path_belief,
            trials: trials.or(self.trials).unwrap_or(100_000),
            seed: seed.or(self.seed).unwrap_or(0),
        }
    }

    pub fn strategies(&self) -> Vec<FirmStrategy> {
        match (&self.strategies, self.n) {
            (Some(s), _) => s.clone(),
            (None, FirmCount::Finite(n)) => vec![self.conjecture.clone(); n],
            (None, FirmCount::Infinite) => vec![self.conjecture.clone()],
        }
    }
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: &'a MarketConfig,
    strategies: &'a [FirmStrategy],
    conjecture: &'a FirmStrategy,
    outcome: MarketOutcome,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Reports go to `out` unless `--out` is given.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == EXIT_OK { out } else { err };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    match execute(&cli) {
        Ok((report, code)) => match emit(&cli, &report, out) {
            Ok(()) => code,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_INPUT
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn emit(cli: &Cli, report: &serde_json::Value, out: &mut dyn Write) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).expect("report serialises");
    match &cli.out {
        Some(path) => write_file(path, format!("{text}\n").as_bytes()),
        None => writeln!(out, "{text}").map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Inline JSON or a file holding it, decoded with the failing field named.
fn load<T: DeserializeOwned>(arg: &str, what: &str) -> CliResult<T> {
    let trimmed = arg.trim_start();
    let text = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|source| CliError::Io {
            path: arg.into(),
            source,
        })?
    };
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { String::new() } else { format!(" at `{path}`") };
        CliError::Input(format!("invalid {what}{at}: {}", e.inner()))
    })
}

fn write_csv(path: &Path, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let io = |source: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(columns).map_err(|e| io(e.into()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn figure_csv(path: &Path, fig: &FigureData) -> CliResult<()> {
    let cols: Vec<&str> = fig.columns.iter().map(String::as_str).collect();
    write_csv(path, &cols, fig.rows.iter().map(|r| r.iter().map(f64::to_string).collect()))
}

fn execute(cli: &Cli) -> CliResult<(serde_json::Value, i32)> {
    match &cli.command {
        Command::Reserve { dist, price, cost } => {
            let dist: ValueDistribution = load(dist, "distribution")?;
            let r = solve_reservation(&ReservationProblem {
                dist,
                price: *price,
                cost: *cost,
            })?;
            Ok((json!({"price": price, "cost": cost, "reservation": r}), EXIT_OK))
        }
        Command::Envelope { curve, mean } => {
            let step = cli.grid_step.unwrap_or(DEFAULT_GRID_STEP);
            let curve: PayoffCurve = if curve.trim() == "example2" {
                example2_curve(step)?
            } else {
                load(curve, "payoff curve")?
            };
            let mean = mean.unwrap_or(0.5);
            let env = concave_envelope(&curve);
            let split = splitting_from(&env, mean)?;
            if let Some(path) = &cli.csv {
                let rows = curve
                    .grid()
                    .iter()
                    .zip(curve.values())
                    .zip(env.curve.values())
                    .map(|((x, v), e)| vec![x.to_string(), v.to_string(), e.to_string()]);
                write_csv(path, &["x", "payoff", "envelope"], rows)?;
            }
            Ok((
                json!({
                    "mean": mean,
                    "grid_points": curve.grid().len(),
                    "payoff_at_mean": curve.value_at(mean),
                    "envelope_at_mean": env.value_at(mean),
                    "vertices": env.vertex_points(),
                    "splitting": split,
                }),
                EXIT_OK,
            ))
        }
        Command::Fuse { dist, spec } => {
            let dist: ValueDistribution = load(dist, "distribution")?;
            let spec: FusionSpec = load(spec, "fusion spec")?;
            let fused = dist.fuse(&spec)?;
            let tol = cli.tol.unwrap_or(DEFAULT_MPC_TOL);
            if let Some(path) = &cli.csv {
                let (lo, hi) = dist.support();
                let rows = uniform_grid(cli.grid_step.unwrap_or(1e-3))?.into_iter().map(|u| {
                    let x = lo + u * (hi - lo);
                    vec![x.to_string(), dist.cdf_at(x).to_string(), fused.cdf_at(x).to_string()]
                });
                write_csv(path, &["x", "cdf_before", "cdf_after"], rows)?;
            }
            Ok((
                json!({
                    "fused": fused,
                    "mean_before": dist.mean(),
                    "mean_after": fused.mean(),
                    "is_contraction": fused.is_mpc(&dist, tol)?,
                }),
                EXIT_OK,
            ))
        }
        Command::Simulate { market } => {
            let spec: MarketSpec = load(market, "market spec")?;
            let config = spec.config(cli.trials, cli.seed);
            let strategies = spec.strategies();
            let outcome = simulate_market(&config, &strategies, &spec.conjecture)?;
            if let Some(path) = &cli.csv {
                let mut rows: Vec<Vec<String>> = outcome
                    .firms
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        vec![
                            format!("firm_{i}"),
                            f.profit.mean.to_string(),
                            f.profit.std_error.to_string(),
                            f.profit_per_visit.mean.to_string(),
                            f.profit_per_visit.std_error.to_string(),
                            f.visit_rate.to_string(),
                            f.purchase_given_visit.to_string(),
                        ]
                    })
                    .collect();
                rows.push(vec![
                    "consumer".into(),
                    outcome.consumer_surplus.mean.to_string(),
                    outcome.consumer_surplus.std_error.to_string(),
                    outcome.mean_visits.to_string(),
                    String::new(),
                    String::new(),
                    outcome.purchase_rate.to_string(),
                ]);
                write_csv(
                    path,
                    &[
                        "row",
                        "profit",
                        "profit_se",
                        "profit_per_visit",
                        "profit_per_visit_se",
                        "visit_rate",
                        "purchase_given_visit",
                    ],
                    rows,
                )?;
            }
            let report = SimulateReport {
                config: &config,
                strategies: &strategies,
                conjecture: &spec.conjecture,
                outcome,
            };
            Ok((serde_json::to_value(report).expect("report serialises"), EXIT_OK))
        }
        Command::Check {
            market,
            classes,
            prices,
        } => {
            let spec: MarketSpec = load(market, "market spec")?;
            let config = spec.config(cli.trials, cli.seed);
            let mut options = spec.search.clone().unwrap_or_default();
            if !classes.is_empty() {
                options.classes = classes
                    .iter()
                    .map(|c| {
                        serde_json::from_value::<DeviationClass>(json!(c))
                            .map_err(|_| CliError::Input(format!("unknown deviation class {c:?}")))
                    })
                    .collect::<CliResult<_>>()?;
            }
            if !prices.is_empty() {
                options.prices = Some(prices.clone());
            }
            if let Some(t) = cli.trials {
                options.screen_trials = t;
            }
            if let Some(t) = cli.tol {
                options.tol = t;
            }
            if let Some(s) = cli.grid_step {
                options.curve_step = s;
            }
            let report = check_symmetric_equilibrium(&spec.conjecture, &config, &options)?;
            Ok((serde_json::to_value(report).expect("report serialises"), EXIT_OK))
        }
        Command::Repro { case } => {
            let cases: Vec<CaseName> = if case == "all" {
                CaseName::ALL.to_vec()
            } else {
                vec![case.parse()?]
            };
            let defaults = ReproOptions::default();
            let options = ReproOptions {
                trials: cli.trials.unwrap_or(defaults.trials),
                seed: cli.seed.unwrap_or(defaults.seed),
                grid_step: cli.grid_step.unwrap_or(defaults.grid_step),
            };
            let mut reports = Vec::with_capacity(cases.len());
            for c in &cases {
                let r = run_case(*c, &options)?;
                if let (Some(path), Some(fig)) = (&cli.csv, &r.figure) {
                    if cases.len() == 1 {
                        figure_csv(path, fig)?;
                    } else {
                        figure_csv(&suffixed(path, c.as_str()), fig)?;
                    }
                }
                reports.push(r);
            }
            let code = if reports.iter().all(|r| r.pass) { EXIT_OK } else { EXIT_REPRO_FAILED };
            let value = if reports.len() == 1 {
                serde_json::to_value(&reports[0])
            } else {
                serde_json::to_value(&reports)
            };
            Ok((value.expect("report serialises"), code))
        }
    }
}

/// `dir/name.csv` -> `dir/name_<tag>.csv`
fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "figure".into(), |s| s.to_string_lossy().into_owned());
    let ext = path.extension().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_{tag}.{ext}"))
}

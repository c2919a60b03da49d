//! Re-runs the worked examples and the two characterisation results from
//! scratch and compares against the bundled manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dist::{ValueDistribution, DEFAULT_MPC_TOL};
use crate::equilibrium::{
    check_symmetric_equilibrium, fusion_deviation_search, simulate_deviation, CertificationReport,
    DeviationClass, DeviationWitness, ProfitBasis, SearchOptions,
};
use crate::error::{Error, Result};
use crate::market::{
    analytic_first_visit_profit, simulate_market, FirmCount, FirmStrategy, MarketConfig, OffPathBelief,
};
use crate::persuade::{
    concave_envelope, estimate_payoff_curve, example2_curve, example2_payoff, splitting_from, DEFAULT_GRID_STEP,
};
use crate::rng::StreamSeed;
use crate::search::{reservation_value, Regime};

const MANIFEST: &str = include_str!("repro_manifest.json");

/// Price-law components used to discretise the `example2` reservation law.
pub const EXAMPLE2_COMPONENTS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseName {
    Example1,
    Example2,
    Theorem1,
    Theorem2,
}

impl CaseName {
    pub const ALL: [CaseName; 4] = [CaseName::Example1, CaseName::Example2, CaseName::Theorem1, CaseName::Theorem2];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::Example1 => "example1",
            CaseName::Example2 => "example2",
            CaseName::Theorem1 => "theorem1",
            CaseName::Theorem2 => "theorem2",
        }
    }
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CaseName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCase(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Stated in the source text.
    Published,
    /// Worked out independently and checked by an oracle.
    Derived,
}

/// One manifest entry: passes when
/// `|observed - value| <= tolerance + sigmas * std_error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub quantity: String,
    pub value: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub sigmas: f64,
    pub source: Source,
}

pub fn manifest() -> BTreeMap<CaseName, Vec<Expected>> {
    serde_json::from_str(MANIFEST).expect("bundled manifest is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub expected: f64,
    pub observed: f64,
    pub std_error: f64,
    pub tolerance: f64,
    pub sigmas: f64,
    pub source: Source,
    pub pass: bool,
}

/// Plot data: one row per sample, columns named in `columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproOptions {
    pub trials: u64,
    pub seed: u64,
    /// Grid spacing for analytic curves and figure data.
    pub grid_step: f64,
}

impl Default for ReproOptions {
    fn default() -> Self {
        ReproOptions {
            trials: 100_000,
            seed: 0,
            grid_step: DEFAULT_GRID_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub case: CaseName,
    pub options: ReproOptions,
    pub parameters: serde_json::Value,
    pub checks: Vec<Check>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<DeviationWitness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertificationReport>,
    #[serde(skip)]
    pub figure: Option<FigureData>,
}

/// `(observed, std_error)` per quantity.
type Observed = BTreeMap<&'static str, (f64, f64)>;

fn exact(v: f64) -> (f64, f64) {
    (v, 0.0)
}

fn flag(b: bool) -> (f64, f64) {
    (if b { 1.0 } else { 0.0 }, 0.0)
}

pub fn example1_market() -> MarketConfig {
    MarketConfig {
        n: FirmCount::Infinite,
        prior: ValueDistribution::uniform(0.0, 1.0).expect("valid"),
        cost: 1.0 / 32.0,
        regime: Regime::Hidden,
        off_path_belief: OffPathBelief::Uninformative,
        trials: 100_000,
        seed: 0,
    }
}

pub fn example1_conjecture() -> FirmStrategy {
    FirmStrategy::pure(0.25, ValueDistribution::uniform(0.0, 1.0).expect("valid")).expect("valid")
}

/// Uniform density on `[0, 1/2]` plus an atom of 1/2 at 3/4.
pub fn example1_improved() -> ValueDistribution {
    ValueDistribution::new((0.0, 1.0), [(0.75, 0.5)], [(0.0, 0.5, 0.5)]).expect("valid")
}

pub fn example2_market() -> MarketConfig {
    MarketConfig {
        n: FirmCount::Finite(2),
        prior: ValueDistribution::bernoulli(0.5).expect("valid"),
        cost: 1.0 / 16.0,
        regime: Regime::Posted,
        off_path_belief: OffPathBelief::Uninformative,
        trials: 100_000,
        seed: 0,
    }
}

/// Full information with prices drawn so that reservation values follow
/// `7 / (7 - 8z) - 1` on `[0, 7/16]`. The law is discretised at `k`
/// quantile midpoints; the end prices 7/16 and 7/8 are listed with zero
/// weight so that they count as on path.
pub fn example2_profile(k: usize) -> FirmStrategy {
    let full = ValueDistribution::bernoulli(0.5).expect("valid");
    let price_for = |u: f64| 7.0 / 8.0 - (7.0 - 7.0 / (1.0 + u)) / 8.0;
    let mut parts = vec![(0.0, 7.0 / 16.0, full.clone())];
    parts.extend((0..k).map(|i| (1.0 / k as f64, price_for((i as f64 + 0.5) / k as f64), full.clone())));
    parts.push((0.0, 7.0 / 8.0, full));
    FirmStrategy::new(parts).expect("valid")
}

/// Two firms, uniform values, hidden prices.
pub fn theorem1_market() -> MarketConfig {
    MarketConfig {
        n: FirmCount::Finite(2),
        prior: ValueDistribution::uniform(0.0, 1.0).expect("valid"),
        cost: 0.05,
        regime: Regime::Hidden,
        off_path_belief: OffPathBelief::Uninformative,
        trials: 100_000,
        seed: 0,
    }
}

/// Monopoly price, no information.
pub fn theorem1_candidate(config: &MarketConfig) -> FirmStrategy {
    let mu = config.prior.mean();
    FirmStrategy::pure(mu, ValueDistribution::degenerate_on(config.prior.support(), mu).expect("valid"))
        .expect("valid")
}

pub fn theorem2_market() -> MarketConfig {
    MarketConfig {
        regime: Regime::Posted,
        ..theorem1_market()
    }
}

/// Free product, no information: the lowest reservation value `mu - c`.
pub fn theorem2_candidate(config: &MarketConfig) -> FirmStrategy {
    let mu = config.prior.mean();
    FirmStrategy::pure(0.0, ValueDistribution::degenerate_on(config.prior.support(), mu).expect("valid"))
        .expect("valid")
}

pub fn run_case(case: CaseName, options: &ReproOptions) -> Result<ReproReport> {
    let mut report = match case {
        CaseName::Example1 => example1(options)?,
        CaseName::Example2 => example2(options)?,
        CaseName::Theorem1 => theorem(options, true)?,
        CaseName::Theorem2 => theorem(options, false)?,
    };
    report.pass = report.checks.iter().all(|c| c.pass);
    Ok(report)
}

fn grade(case: CaseName, observed: &Observed) -> Vec<Check> {
    manifest()
        .remove(&case)
        .unwrap_or_default()
        .into_iter()
        .map(|e| {
            let (obs, se) = observed.get(e.quantity.as_str()).copied().unwrap_or((f64::NAN, 0.0));
            let pass = (obs - e.value).abs() <= e.tolerance + e.sigmas * se;
            Check {
                quantity: e.quantity,
                expected: e.value,
                observed: obs,
                std_error: se,
                tolerance: e.tolerance,
                sigmas: e.sigmas,
                source: e.source,
                pass,
            }
        })
        .collect()
}

fn figure_grid(step: f64) -> Result<Vec<f64>> {
    crate::persuade::uniform_grid(step)
}

fn example1(options: &ReproOptions) -> Result<ReproReport> {
    let config = example1_market().with_trials(options.trials).with_seed(options.seed);
    let conj = example1_conjecture();
    let improved = FirmStrategy::pure(0.25, example1_improved())?;
    let mut obs = Observed::new();

    obs.insert("reservation_value", exact(reservation_value(&config.prior, 0.25, config.cost)?));
    obs.insert("baseline_profit", exact(analytic_first_visit_profit(&conj, &conj, config.cost)?));
    obs.insert("improved_profit", exact(analytic_first_visit_profit(&conj, &improved, config.cost)?));
    obs.insert("improved_is_contraction", flag(example1_improved().is_mpc(&config.prior, DEFAULT_MPC_TOL)?));
    let witness = fusion_deviation_search(&conj, &config, &SearchOptions::default())?;
    obs.insert("fusion_gain", exact(witness.as_ref().map_or(0.0, |w| w.gain)));
    let sim = simulate_deviation(&config, &conj, &improved, ProfitBasis::PerVisit, options.trials, StreamSeed::new(options.seed))?;
    obs.insert("simulated_improved_profit", (sim.deviation.mean, sim.deviation.std_error));

    let f_hat = example1_improved();
    let rows = figure_grid(options.grid_step.max(1e-3))?
        .into_iter()
        .map(|x| vec![x, config.prior.cdf_at(x), f_hat.cdf_at(x)])
        .collect();
    Ok(ReproReport {
        case: CaseName::Example1,
        options: *options,
        parameters: json!({"n": "infinite", "prior": config.prior, "cost": config.cost, "price": 0.25}),
        checks: grade(CaseName::Example1, &obs),
        pass: false,
        witness,
        certification: None,
        figure: Some(FigureData {
            columns: vec!["x".into(), "conjectured_cdf".into(), "deviation_cdf".into()],
            rows,
        }),
    })
}

fn example2(options: &ReproOptions) -> Result<ReproReport> {
    let config = example2_market().with_trials(options.trials).with_seed(options.seed);
    let profile = example2_profile(EXAMPLE2_COMPONENTS);
    let p = 7.0 / 16.0;
    let mut obs = Observed::new();

    obs.insert("payoff_at_0.3", exact(example2_payoff(0.3)));
    obs.insert("payoff_at_7/16", exact(example2_payoff(p)));
    obs.insert("payoff_at_7/8", exact(example2_payoff(7.0 / 8.0)));
    obs.insert("full_information_value", exact(0.5 * (example2_payoff(0.0) + example2_payoff(1.0))));

    let curve = example2_curve(options.grid_step)?;
    let env = concave_envelope(&curve);
    let split = splitting_from(&env, 0.5)?;
    obs.insert("envelope_at_mean", exact(split.value));
    let first = split.posteriors[0];
    let last = split.posteriors[split.posteriors.len() - 1];
    obs.insert("splitting_low", exact(first.location));
    obs.insert("splitting_high", exact(last.location));
    obs.insert("splitting_low_weight", exact(first.weight));

    let sim = estimate_payoff_curve(&config, &profile, p, &[0.0, 1.0], options.trials, StreamSeed::new(options.seed))?;
    obs.insert("simulated_payoff_at_1", (sim.values()[1], sim.std_errors().map_or(0.0, |s| s[1])));

    let search = SearchOptions {
        classes: vec![DeviationClass::Fusion],
        prices: Some(vec![p]),
        screen_trials: (options.trials / 4).max(1),
        ..SearchOptions::default()
    };
    let witness = fusion_deviation_search(&profile, &config, &search)?;
    obs.insert("fusion_gain_at_7/16", witness.as_ref().map_or((0.0, 0.0), |w| (w.gain, w.gain_std_error)));

    let rows = curve
        .grid()
        .iter()
        .zip(curve.values())
        .zip(env.curve.values())
        .map(|((&x, &v), &vh)| vec![x, v, vh])
        .collect();
    Ok(ReproReport {
        case: CaseName::Example2,
        options: *options,
        parameters: json!({
            "n": 2, "prior": config.prior, "cost": config.cost, "price": p,
            "price_law_components": EXAMPLE2_COMPONENTS, "grid_step": options.grid_step,
        }),
        checks: grade(CaseName::Example2, &obs),
        pass: false,
        witness,
        certification: None,
        figure: Some(FigureData {
            columns: vec!["x".into(), "payoff".into(), "envelope".into()],
            rows,
        }),
    })
}

fn theorem(options: &ReproOptions, hidden: bool) -> Result<ReproReport> {
    let (case, config, candidate) = if hidden {
        let c = theorem1_market();
        let s = theorem1_candidate(&c);
        (CaseName::Theorem1, c, s)
    } else {
        let c = theorem2_market();
        let s = theorem2_candidate(&c);
        (CaseName::Theorem2, c, s)
    };
    let config = config.with_trials(options.trials).with_seed(options.seed);
    let n = 2;
    let outcome = simulate_market(&config, &vec![candidate.clone(); n], &candidate)?;
    let cert = check_symmetric_equilibrium(&candidate, &config, &SearchOptions::default())?;
    let mut obs = Observed::new();
    let firm = &outcome.firms[0];
    obs.insert("profit_per_visit", (firm.profit_per_visit.mean, firm.profit_per_visit.std_error));
    obs.insert("firm_profit", (firm.profit.mean, firm.profit.std_error));
    obs.insert("consumer_surplus", (outcome.consumer_surplus.mean, outcome.consumer_surplus.std_error));
    obs.insert("mean_visits", exact(outcome.mean_visits));
    obs.insert("certified", flag(cert.certified));
    let c0 = &candidate.components()[0];
    obs.insert("reservation_value", exact(reservation_value(&c0.dist, c0.price, config.cost)?));
    Ok(ReproReport {
        case,
        options: *options,
        parameters: json!({
            "n": n, "prior": config.prior, "cost": config.cost, "regime": config.regime,
            "candidate": candidate,
        }),
        checks: grade(case, &obs),
        pass: false,
        witness: None,
        certification: Some(cert),
        figure: None,
    })
}

//! Monte Carlo market: firms commit to (price, posterior-mean law) mixtures,
//! consumers search, and outcomes aggregate into profits, consumer surplus
//! and visit statistics.
//!
//! Every trial owns a counter-based stream indexed by its trial number and
//! trials are reduced in fixed-size chunks in index order, so an outcome is
//! a pure function of `(config, strategies)` whatever the thread count.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::dist::{net_value_mixture, ValueDistribution, DEFAULT_MPC_TOL};
use crate::error::{Error, Result};
use crate::rng::{Stream, StreamSeed};
use crate::search::{
    first_visit_values, order_firms, order_with_values, reservation_value, run_plan, should_stop, Regime,
    SearchOutcome,
};
use crate::stats::{Estimate, Moments};

/// Trials per reduction chunk.
pub(crate) const CHUNK: u64 = 2048;
/// Visit cap for a consumer in the infinite market.
pub const MAX_INFINITE_VISITS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirmCount {
    Finite(usize),
    Infinite,
}

impl Serialize for FirmCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FirmCount::Finite(n) => s.serialize_u64(*n as u64),
            FirmCount::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for FirmCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = FirmCount;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive integer or \"infinite\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<FirmCount, E> {
                if v == 0 {
                    return Err(E::custom("n must be at least 1"));
                }
                Ok(FirmCount::Finite(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<FirmCount, E> {
                if v <= 0 {
                    return Err(E::custom("n must be at least 1"));
                }
                Ok(FirmCount::Finite(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<FirmCount, E> {
                if v == "infinite" {
                    Ok(FirmCount::Infinite)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// What consumers believe about a firm that posts a price no firm uses on
/// path. Both rules resolve to the no-information law at the prior mean:
/// among same-mean conjectures it induces the lowest reservation value, so
/// it is also the most pessimistic belief the solver can express.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffPathBelief {
    #[default]
    Uninformative,
    MostPessimistic,
}

impl OffPathBelief {
    pub fn belief(self, prior: &ValueDistribution) -> Result<ValueDistribution> {
        match self {
            OffPathBelief::Uninformative | OffPathBelief::MostPessimistic => {
                ValueDistribution::degenerate_on(prior.support(), prior.mean())
            }
        }
    }
}

fn default_trials() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub n: FirmCount,
    pub prior: ValueDistribution,
    pub cost: f64,
    pub regime: Regime,
    #[serde(default)]
    pub off_path_belief: OffPathBelief,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cost > 0.0) || !self.cost.is_finite() {
            return Err(Error::NonPositiveCost(self.cost));
        }
        if self.prior.support() != (0.0, 1.0) {
            let (lo, hi) = self.prior.support();
            return Err(Error::InvalidMarket(format!(
                "prior must live on [0, 1], got [{lo}, {hi}]"
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidMarket("trials must be at least 1".into()));
        }
        if let FirmCount::Finite(0) = self.n {
            return Err(Error::InvalidMarket("n must be at least 1".into()));
        }
        if self.n == FirmCount::Infinite && self.regime == Regime::Posted {
            return Err(Error::InvalidMarket(
                "posted prices need a finite number of firms".into(),
            ));
        }
        Ok(())
    }

    pub fn with_trials(&self, trials: u64) -> Self {
        MarketConfig {
            trials,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        MarketConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyComponent {
    pub weight: f64,
    pub price: f64,
    pub dist: ValueDistribution,
}

/// A finite mixture over (price, posterior-mean law). Zero-weight components
/// are allowed; they mark prices that are in the support of a continuous
/// price law without carrying mass of their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrategyRepr", into = "StrategyRepr")]
pub struct FirmStrategy {
    mixture: Vec<StrategyComponent>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyRepr {
    mixture: Vec<StrategyComponent>,
}

impl TryFrom<StrategyRepr> for FirmStrategy {
    type Error = Error;
    fn try_from(r: StrategyRepr) -> Result<Self> {
        FirmStrategy::from_components(r.mixture)
    }
}

impl From<FirmStrategy> for StrategyRepr {
    fn from(s: FirmStrategy) -> Self {
        StrategyRepr { mixture: s.mixture }
    }
}

impl FirmStrategy {
    /// `(weight, price, dist)` triples.
    pub fn new(parts: Vec<(f64, f64, ValueDistribution)>) -> Result<Self> {
        Self::from_components(
            parts
                .into_iter()
                .map(|(weight, price, dist)| StrategyComponent { weight, price, dist })
                .collect(),
        )
    }

    pub fn pure(price: f64, dist: ValueDistribution) -> Result<Self> {
        Self::new(vec![(1.0, price, dist)])
    }

    pub fn from_components(mixture: Vec<StrategyComponent>) -> Result<Self> {
        if mixture.is_empty() {
            return Err(Error::InvalidStrategy("empty mixture".into()));
        }
        let support = mixture[0].dist.support();
        let mut total = 0.0;
        for (i, c) in mixture.iter().enumerate() {
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidStrategy(format!(
                    "component {i}: weight {} is not a probability",
                    c.weight
                )));
            }
            if !(c.price >= 0.0) || !c.price.is_finite() {
                return Err(Error::InvalidStrategy(format!(
                    "component {i}: price {} must be non-negative",
                    c.price
                )));
            }
            if c.dist.support() != support {
                return Err(Error::InvalidStrategy(format!(
                    "component {i}: support differs from component 0"
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidStrategy(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(FirmStrategy { mixture })
    }

    pub fn components(&self) -> &[StrategyComponent] {
        &self.mixture
    }

    /// Copy with component `k`'s law replaced.
    pub fn with_dist(&self, k: usize, dist: ValueDistribution) -> Result<Self> {
        let mut mixture = self.mixture.clone();
        mixture
            .get_mut(k)
            .ok_or_else(|| Error::InvalidStrategy(format!("no component {k}")))?
            .dist = dist;
        Self::from_components(mixture)
    }

    /// Same laws, every component posted at `price`.
    pub fn reprice(&self, price: f64) -> Result<Self> {
        let mixture = self
            .mixture
            .iter()
            .map(|c| StrategyComponent {
                price,
                ..c.clone()
            })
            .collect();
        Self::from_components(mixture)
    }

    /// Errors unless every law is a mean-preserving contraction of `prior`.
    pub fn check_feasible(&self, prior: &ValueDistribution) -> Result<()> {
        for (i, c) in self.mixture.iter().enumerate() {
            if !c.dist.is_mpc(prior, DEFAULT_MPC_TOL)? {
                return Err(Error::Infeasible { component: i });
            }
        }
        Ok(())
    }

    /// Conjectured law of a firm observed posting `price`: the mixture of
    /// components listed at exactly that price, or `None` off path.
    pub fn belief_at(&self, price: f64) -> Option<ValueDistribution> {
        let at: Vec<&StrategyComponent> = self.mixture.iter().filter(|c| c.price == price).collect();
        if at.is_empty() {
            return None;
        }
        if at.len() == 1 {
            return Some(at[0].dist.clone());
        }
        let total: f64 = at.iter().map(|c| c.weight).sum();
        let parts: Vec<(f64, &ValueDistribution)> = if total > 0.0 {
            at.iter().map(|c| (c.weight / total, &c.dist)).collect()
        } else {
            at.iter().map(|c| (1.0 / at.len() as f64, &c.dist)).collect()
        };
        ValueDistribution::mixture(at[0].dist.support(), &parts).ok()
    }

    /// Distinct prices, ascending.
    pub fn prices(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.mixture.iter().map(|c| c.price).collect();
        p.sort_by(f64::total_cmp);
        p.dedup();
        p
    }

    pub fn support(&self) -> (f64, f64) {
        self.mixture[0].dist.support()
    }
}

/// One firm's row in a [`MarketOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmOutcome {
    /// Expected profit per consumer.
    pub profit: Estimate,
    /// Expected profit per consumer who visits the firm.
    pub profit_per_visit: Estimate,
    pub visit_rate: f64,
    pub purchase_given_visit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub n: FirmCount,
    pub regime: Regime,
    pub trials: u64,
    pub seed: u64,
    /// Reservation value in the hidden regime.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reservation: Option<f64>,
    pub firms: Vec<FirmOutcome>,
    /// `E[1{buy} (x - p) - c * (visits - 1)]`.
    pub consumer_surplus: Estimate,
    pub mean_visits: f64,
    pub purchase_rate: f64,
    pub search_cost: Estimate,
    /// `E[1{buy} x]`; equals surplus + profits + search costs.
    pub purchased_value: Estimate,
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedComponent {
    pub price: f64,
    pub dist: ValueDistribution,
    /// Reservation value consumers attach to this component's posted price.
    pub z: f64,
    /// Conjectured net-value law at this component's posted price.
    pub belief: Option<ValueDistribution>,
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedFirm {
    cumulative: Vec<f64>,
    last_live: usize,
    pub components: Vec<PreparedComponent>,
}

impl PreparedFirm {
    fn pick_index(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.last_live)
    }

    fn pick(&self, u: f64) -> &PreparedComponent {
        &self.components[self.pick_index(u)]
    }
}

/// A market ready to simulate: beliefs resolved into reservation values.
#[derive(Debug, Clone)]
pub(crate) struct PreparedMarket {
    pub regime: Regime,
    pub cost: f64,
    pub hidden_z: f64,
    pub firms: Vec<PreparedFirm>,
    /// Infinite market: firms after the first visit all play this.
    pub tail: Option<PreparedFirm>,
    /// Posted regime: first-visit values for every combination of drawn
    /// components (mixed-radix index), when there are few combinations.
    first_values: Option<Vec<Vec<f64>>>,
}

/// Most component combinations whose first-visit values are tabulated.
const FIRST_VALUE_TABLE: usize = 4096;

#[derive(Debug, Clone)]
pub(crate) struct Trial {
    pub outcome: SearchOutcome,
    /// Price of each visited firm's drawn component, by firm index.
    pub prices: Vec<f64>,
    /// Value realised at the chosen firm.
    pub chosen_value: f64,
}

impl Trial {
    pub fn revenue(&self, firm: usize) -> f64 {
        if self.outcome.chosen == Some(firm) {
            self.prices[firm]
        } else {
            0.0
        }
    }

    pub fn visited(&self, firm: usize) -> bool {
        self.outcome.visited.contains(&firm)
    }
}

fn shifted_belief(belief: &ValueDistribution, price: f64) -> Result<ValueDistribution> {
    let (lo, hi) = belief.support();
    belief.shift(-price, (lo - price.max(hi), hi))
}

impl PreparedMarket {
    pub fn new(
        config: &MarketConfig,
        actual: &[FirmStrategy],
        conjecture: &FirmStrategy,
    ) -> Result<Self> {
        config.validate()?;
        let support = config.prior.support();
        for s in actual.iter().chain(std::iter::once(conjecture)) {
            if s.support() != support {
                return Err(Error::InvalidMarket(
                    "strategy support does not match the prior".into(),
                ));
            }
        }
        match config.n {
            FirmCount::Finite(n) if actual.len() != n => {
                return Err(Error::InvalidMarket(format!(
                    "{} strategies for {n} firms",
                    actual.len()
                )))
            }
            FirmCount::Infinite if actual.is_empty() || actual.len() > 2 => {
                return Err(Error::InvalidMarket(
                    "infinite market takes one strategy (all firms) or two (first visit, rest)".into(),
                ))
            }
            _ => {}
        }

        let hidden_z = match config.regime {
            Regime::Hidden => reservation_value(&net_value_mixture(conjecture)?, 0.0, config.cost)?,
            Regime::Posted => f64::NAN,
        };
        let off_path = config.off_path_belief.belief(&config.prior)?;
        let prepare = |s: &FirmStrategy| -> Result<PreparedFirm> {
            let mut components = Vec::with_capacity(s.components().len());
            let mut cumulative = Vec::with_capacity(s.components().len());
            let mut acc = 0.0;
            let mut last_live = 0;
            for (i, c) in s.components().iter().enumerate() {
                acc += c.weight;
                cumulative.push(acc);
                if c.weight > 0.0 {
                    last_live = i;
                }
                let (z, belief) = match config.regime {
                    Regime::Hidden => (hidden_z, None),
                    Regime::Posted => {
                        let b = conjecture.belief_at(c.price).unwrap_or_else(|| off_path.clone());
                        let z = reservation_value(&b, c.price, config.cost)?;
                        (z, Some(shifted_belief(&b, c.price)?))
                    }
                };
                components.push(PreparedComponent {
                    price: c.price,
                    dist: c.dist.clone(),
                    z,
                    belief,
                });
            }
            Ok(PreparedFirm {
                cumulative,
                last_live,
                components,
            })
        };

        let (firms, tail) = match config.n {
            FirmCount::Finite(_) => (actual.iter().map(prepare).collect::<Result<Vec<_>>>()?, None),
            FirmCount::Infinite => {
                let first = prepare(&actual[0])?;
                let rest = prepare(actual.get(1).unwrap_or(&actual[0]))?;
                (vec![first], Some(rest))
            }
        };
        let mut market = PreparedMarket {
            regime: config.regime,
            cost: config.cost,
            hidden_z,
            firms,
            tail,
            first_values: None,
        };
        market.tabulate_first_values();
        Ok(market)
    }

    fn tabulate_first_values(&mut self) {
        self.first_values = None;
        if self.regime != Regime::Posted || self.firms.len() < 2 {
            return;
        }
        let mut combos = 1usize;
        for f in &self.firms {
            combos = match combos.checked_mul(f.components.len()) {
                Some(c) if c <= FIRST_VALUE_TABLE => c,
                _ => return,
            };
        }
        let table = (0..combos)
            .map(|mut idx| {
                let mut beliefs = Vec::with_capacity(self.firms.len());
                let mut z = Vec::with_capacity(self.firms.len());
                for f in &self.firms {
                    let c = &f.components[idx % f.components.len()];
                    idx /= f.components.len();
                    beliefs.push(c.belief.as_ref().expect("posted belief"));
                    z.push(c.z);
                }
                first_visit_values(&beliefs, &z)
            })
            .collect();
        self.first_values = Some(table);
    }

    /// Replaces firm `i`'s strategy, keeping everyone's beliefs.
    pub fn with_firm(&self, config: &MarketConfig, i: usize, strategy: &FirmStrategy, conjecture: &FirmStrategy) -> Result<Self> {
        let single = PreparedMarket::new(
            &MarketConfig {
                n: FirmCount::Finite(1),
                ..config.clone()
            },
            std::slice::from_ref(strategy),
            conjecture,
        )?;
        let mut out = self.clone();
        let mut firm = single.firms.into_iter().next().expect("one firm");
        if self.regime == Regime::Hidden {
            for c in &mut firm.components {
                c.z = self.hidden_z;
            }
        }
        out.firms[i] = firm;
        out.tabulate_first_values();
        Ok(out)
    }

    /// Runs one consumer. Draw layout is fixed per firm, so two markets
    /// that differ only in firms' laws see common random numbers.
    pub fn run(&self, rng: &mut Stream) -> Trial {
        if let Some(tail) = &self.tail {
            return self.run_infinite(tail, rng);
        }
        let n = self.firms.len();
        let mut comps = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        let (mut combo, mut radix) = (0usize, 1usize);
        for f in &self.firms {
            let k = f.pick_index(rng.random());
            combo += k * radix;
            radix = radix.saturating_mul(f.components.len());
            let c = &f.components[k];
            comps.push(c);
            values.push(c.dist.quantile(1.0 - rng.random::<f64>()));
            keys.push(rng.random::<f64>());
        }
        let z: Vec<f64> = comps.iter().map(|c| c.z).collect();
        let order = match (self.regime, &self.first_values) {
            (Regime::Hidden, _) => order_with_values(Regime::Hidden, &z, None, &keys),
            (Regime::Posted, Some(table)) => order_with_values(Regime::Posted, &z, Some(&table[combo]), &keys),
            (Regime::Posted, None) => {
                let beliefs: Vec<&ValueDistribution> =
                    comps.iter().map(|c| c.belief.as_ref().expect("posted belief")).collect();
                order_firms(Regime::Posted, &z, Some(&beliefs), &keys, true)
            }
        };
        let prices: Vec<f64> = comps.iter().map(|c| c.price).collect();
        let outcome = run_plan(&order, &z, 0.0, true, self.cost, &keys, |i| values[i] - prices[i]);
        let chosen_value = outcome.chosen.map_or(0.0, |i| values[i]);
        Trial {
            outcome,
            prices,
            chosen_value,
        }
    }

    /// Stationary market: firm 0 is visited first, then an endless stream
    /// of firms playing the tail strategy. Only firm 0 is tracked.
    fn run_infinite(&self, tail: &PreparedFirm, rng: &mut Stream) -> Trial {
        let z = self.hidden_z;
        let first = self.firms[0].pick(rng.random());
        let x0 = first.dist.quantile(1.0 - rng.random::<f64>());
        // (index in visit order, surplus, value)
        let mut best = (0usize, x0 - first.price, x0);
        let mut visits = 1;
        let mut search_cost = 0.0;
        while !should_stop(Some(best.1), 0.0, z) && visits < MAX_INFINITE_VISITS {
            let c = tail.pick(rng.random());
            let x = c.dist.quantile(1.0 - rng.random::<f64>());
            search_cost += self.cost;
            if x - c.price > best.1 {
                best = (visits, x - c.price, x);
            }
            visits += 1;
        }
        let bought = best.1 >= 0.0;
        // firm 0 is tracked; every later firm is reported as firm 1
        let mut visited = vec![0];
        visited.resize(visits, 1);
        Trial {
            outcome: SearchOutcome {
                visited,
                chosen: bought.then_some(usize::from(best.0 != 0)),
                surplus: if bought { best.1 } else { 0.0 },
                search_cost,
            },
            prices: vec![first.price, f64::NAN],
            chosen_value: if bought { best.2 } else { 0.0 },
        }
    }
}

/// Per-chunk accumulator for [`simulate_market`].
#[derive(Debug, Clone, Default)]
struct Tally {
    profit: Vec<Moments>,
    per_visit: Vec<Moments>,
    visits: Vec<u64>,
    sales: Vec<u64>,
    utility: Moments,
    search_cost: Moments,
    purchased_value: Moments,
    total_visits: u64,
    purchases: u64,
}

impl Tally {
    fn new(firms: usize) -> Self {
        Tally {
            profit: vec![Moments::default(); firms],
            per_visit: vec![Moments::default(); firms],
            visits: vec![0; firms],
            sales: vec![0; firms],
            ..Default::default()
        }
    }

    fn record(&mut self, t: &Trial) {
        let firms = self.profit.len();
        for i in 0..firms {
            let r = t.revenue(i);
            self.profit[i].push(r);
            if t.visited(i) {
                self.visits[i] += 1;
                self.per_visit[i].push(r);
                if t.outcome.chosen == Some(i) {
                    self.sales[i] += 1;
                }
            }
        }
        self.utility.push(t.outcome.utility());
        self.search_cost.push(t.outcome.search_cost);
        self.purchased_value.push(t.chosen_value);
        self.total_visits += t.outcome.visits() as u64;
        if t.outcome.chosen.is_some() {
            self.purchases += 1;
        }
    }

    fn merge(&mut self, o: &Tally) {
        for i in 0..self.profit.len() {
            self.profit[i].merge(&o.profit[i]);
            self.per_visit[i].merge(&o.per_visit[i]);
            self.visits[i] += o.visits[i];
            self.sales[i] += o.sales[i];
        }
        self.utility.merge(&o.utility);
        self.search_cost.merge(&o.search_cost);
        self.purchased_value.merge(&o.purchased_value);
        self.total_visits += o.total_visits;
        self.purchases += o.purchases;
    }
}

/// Runs `trials` trials in fixed chunks, in parallel, and returns the
/// per-chunk results in chunk order.
pub(crate) fn chunked<T: Send>(trials: u64, f: impl Fn(std::ops::Range<u64>) -> T + Sync) -> Vec<T> {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(trials)))
        .collect()
}

/// Simulates the market. `actual` holds each firm's strategy (for an
/// infinite market: one strategy for everyone, or two for the first-visited
/// firm and the rest); consumers' beliefs come only from `conjectured`.
pub fn simulate_market(
    config: &MarketConfig,
    actual: &[FirmStrategy],
    conjectured: &FirmStrategy,
) -> Result<MarketOutcome> {
    let market = PreparedMarket::new(config, actual, conjectured)?;
    let firms = market.firms.len();
    let seed = StreamSeed::new(config.seed);
    let parts = chunked(config.trials, |range| {
        let mut tally = Tally::new(firms);
        for t in range {
            tally.record(&market.run(&mut seed.stream(t)));
        }
        tally
    });
    let mut tally = Tally::new(firms);
    parts.iter().for_each(|p| tally.merge(p));

    let trials = config.trials as f64;
    let firm_rows = (0..firms)
        .map(|i| FirmOutcome {
            profit: tally.profit[i].estimate(),
            profit_per_visit: tally.per_visit[i].estimate(),
            visit_rate: tally.visits[i] as f64 / trials,
            purchase_given_visit: if tally.visits[i] == 0 {
                0.0
            } else {
                tally.sales[i] as f64 / tally.visits[i] as f64
            },
        })
        .collect();
    Ok(MarketOutcome {
        n: config.n,
        regime: config.regime,
        trials: config.trials,
        seed: config.seed,
        reservation: (config.regime == Regime::Hidden).then_some(market.hidden_z),
        firms: firm_rows,
        consumer_surplus: tally.utility.estimate(),
        mean_visits: tally.total_visits as f64 / trials,
        purchase_rate: tally.purchases as f64 / trials,
        search_cost: tally.search_cost.estimate(),
        purchased_value: tally.purchased_value.estimate(),
    })
}

/// Paired estimate of firm `focal`'s revenue under two markets driven by the
/// same random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimate {
    pub baseline: Estimate,
    pub deviation: Estimate,
    pub difference: Estimate,
}

/// `conditional_on_visit` keeps only trials where the focal firm is visited
/// under the baseline (the markets must share visiting behaviour for that to
/// be meaningful, as they do when only the focal firm's law changes).
pub(crate) fn paired_revenue(
    baseline: &PreparedMarket,
    deviation: &PreparedMarket,
    focal: usize,
    trials: u64,
    seed: StreamSeed,
    conditional_on_visit: bool,
) -> PairedEstimate {
    let parts = chunked(trials, |range| {
        let mut m = [Moments::default(); 3];
        for t in range {
            let mut r1 = seed.stream(t);
            let mut r2 = r1.clone();
            let a = baseline.run(&mut r1);
            if conditional_on_visit && !a.visited(focal) {
                continue;
            }
            let b = deviation.run(&mut r2);
            let (ra, rb) = (a.revenue(focal), b.revenue(focal));
            m[0].push(ra);
            m[1].push(rb);
            m[2].push(rb - ra);
        }
        m
    });
    let mut total = [Moments::default(); 3];
    for p in &parts {
        for k in 0..3 {
            total[k].merge(&p[k]);
        }
    }
    PairedEstimate {
        baseline: total[0].estimate(),
        deviation: total[1].estimate(),
        difference: total[2].estimate(),
    }
}

/// Revenue of firm `focal` conditional on being visited.
pub(crate) fn revenue_given_visit(market: &PreparedMarket, focal: usize, trials: u64, seed: StreamSeed) -> Estimate {
    let parts = chunked(trials, |range| {
        let mut m = Moments::default();
        for t in range {
            let trial = market.run(&mut seed.stream(t));
            if trial.visited(focal) {
                m.push(trial.revenue(focal));
            }
        }
        m
    });
    let mut total = Moments::default();
    parts.iter().for_each(|p| total.merge(p));
    total.estimate()
}

/// Profit per visit of a deviant firm in the stationary infinite market:
/// the consumer never comes back, so the firm sells exactly when the
/// realised surplus clears the larger of the reservation value and the
/// outside option.
pub fn analytic_first_visit_profit(conjectured: &FirmStrategy, deviant: &FirmStrategy, cost: f64) -> Result<f64> {
    let z = reservation_value(&net_value_mixture(conjectured)?, 0.0, cost)?;
    Ok(deviant
        .components()
        .iter()
        .map(|c| c.weight * c.price * c.dist.prob_at_least(z.max(0.0) + c.price))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{FusionRegion, FusionSpec};

    fn uniform() -> ValueDistribution {
        ValueDistribution::uniform(0.0, 1.0).unwrap()
    }

    fn config(n: FirmCount, regime: Regime, prior: ValueDistribution, cost: f64) -> MarketConfig {
        MarketConfig {
            n,
            prior,
            cost,
            regime,
            off_path_belief: OffPathBelief::Uninformative,
            trials: 40_000,
            seed: 11,
        }
    }

    #[test]
    fn example1_analytic_profits() {
        let conj = FirmStrategy::pure(0.25, uniform()).unwrap();
        assert_eq!(analytic_first_visit_profit(&conj, &conj, 1.0 / 32.0).unwrap(), 1.0 / 16.0);
        let fused = uniform()
            .fuse(&FusionSpec::new(vec![FusionRegion::new(0.5, 1.0, 1.0)]))
            .unwrap();
        let dev = FirmStrategy::pure(0.25, fused).unwrap();
        assert_eq!(analytic_first_visit_profit(&conj, &dev, 1.0 / 32.0).unwrap(), 1.0 / 8.0);
        let pooled = FirmStrategy::pure(0.25, ValueDistribution::degenerate(0.5).unwrap()).unwrap();
        assert_eq!(analytic_first_visit_profit(&conj, &pooled, 1.0 / 32.0).unwrap(), 0.0);
    }

    #[test]
    fn monopoly_profile_hidden() {
        for n in [1, 2, 5] {
            let mu = 0.5;
            let s = FirmStrategy::pure(mu, ValueDistribution::degenerate(mu).unwrap()).unwrap();
            let cfg = config(FirmCount::Finite(n), Regime::Hidden, uniform(), 0.05);
            let out = simulate_market(&cfg, &vec![s.clone(); n], &s).unwrap();
            assert_eq!(out.mean_visits, 1.0);
            for f in &out.firms {
                assert!(f.profit.within(mu / n as f64, 3.0, 1e-12), "{:?}", f.profit);
                assert!((f.profit_per_visit.mean - mu).abs() < 1e-12);
            }
            assert!(out.consumer_surplus.within(0.0, 3.0, 1e-12));
        }
    }

    #[test]
    fn marginal_cost_profile_posted() {
        let prior = uniform();
        let s = FirmStrategy::pure(0.0, ValueDistribution::degenerate(0.5).unwrap()).unwrap();
        let cfg = config(FirmCount::Finite(2), Regime::Posted, prior, 1.0 / 32.0);
        let out = simulate_market(&cfg, &[s.clone(), s.clone()], &s).unwrap();
        for f in &out.firms {
            assert_eq!(f.profit.mean, 0.0);
        }
        assert!(out.consumer_surplus.within(0.5, 3.0, 1e-12));
    }

    #[test]
    fn accounting_identity() {
        let prior = uniform();
        let conj = FirmStrategy::pure(0.2, prior.clone()).unwrap();
        let cfg = config(FirmCount::Finite(3), Regime::Hidden, prior, 0.02);
        let out = simulate_market(&cfg, &[conj.clone(), conj.clone(), conj.clone()], &conj).unwrap();
        let profits: f64 = out.firms.iter().map(|f| f.profit.mean).sum();
        let lhs = out.consumer_surplus.mean + profits + out.search_cost.mean;
        assert!((lhs - out.purchased_value.mean).abs() < 1e-12);
        assert!(out.mean_visits > 1.0);
    }

    #[test]
    fn hidden_order_ignores_actual_strategies() {
        let prior = uniform();
        let conj = FirmStrategy::pure(0.2, prior.clone()).unwrap();
        let other = FirmStrategy::pure(0.7, ValueDistribution::degenerate(0.5).unwrap()).unwrap();
        let cfg = config(FirmCount::Finite(3), Regime::Hidden, prior, 0.02);
        let a = PreparedMarket::new(&cfg, &[conj.clone(), conj.clone(), conj.clone()], &conj).unwrap();
        let b = PreparedMarket::new(&cfg, &[other, conj.clone(), conj.clone()], &conj).unwrap();
        let seed = StreamSeed::new(5);
        for t in 0..2000 {
            let ta = a.run(&mut seed.stream(t));
            let tb = b.run(&mut seed.stream(t));
            let k = ta.outcome.visits().min(tb.outcome.visits());
            assert_eq!(ta.outcome.visited[..k], tb.outcome.visited[..k]);
            assert_eq!(ta.outcome.visited[0], tb.outcome.visited[0]);
        }
    }

    #[test]
    fn infinite_market_matches_analytic() {
        let conj = FirmStrategy::pure(0.25, uniform()).unwrap();
        let cfg = config(FirmCount::Infinite, Regime::Hidden, uniform(), 1.0 / 32.0);
        let out = simulate_market(&cfg, std::slice::from_ref(&conj), &conj).unwrap();
        assert!(out.firms[0].profit.within(1.0 / 16.0, 3.0, 0.0), "{:?}", out.firms[0].profit);
        assert_eq!(out.reservation, Some(0.5));
        // consumer value in the stationary market with a free first look is z + c
        assert!(out.consumer_surplus.within(0.5 + 1.0 / 32.0, 3.0, 0.0), "{:?}", out.consumer_surplus);
    }

    #[test]
    fn config_validation() {
        let mut cfg = config(FirmCount::Finite(2), Regime::Hidden, uniform(), 0.0);
        assert!(cfg.validate().is_err());
        cfg.cost = 0.1;
        cfg.n = FirmCount::Infinite;
        cfg.regime = Regime::Posted;
        assert!(cfg.validate().is_err());
        let s = FirmStrategy::pure(0.1, uniform()).unwrap();
        let cfg = config(FirmCount::Finite(2), Regime::Hidden, uniform(), 0.1);
        assert!(simulate_market(&cfg, std::slice::from_ref(&s), &s).is_err());
    }

    #[test]
    fn strategy_validation_and_beliefs() {
        let u = uniform();
        assert!(FirmStrategy::new(vec![(0.5, 0.1, u.clone())]).is_err());
        assert!(FirmStrategy::new(vec![(1.0, -0.1, u.clone())]).is_err());
        let d = ValueDistribution::degenerate(0.5).unwrap();
        let s = FirmStrategy::new(vec![(0.5, 0.1, u.clone()), (0.25, 0.1, d.clone()), (0.25, 0.3, d.clone())]).unwrap();
        assert_eq!(s.prices(), vec![0.1, 0.3]);
        let b = s.belief_at(0.1).unwrap();
        assert!((b.mean() - 0.5).abs() < 1e-15);
        assert_eq!(b.atoms()[0].mass, 1.0 / 3.0);
        assert!(s.belief_at(0.2).is_none());
        assert!(s.check_feasible(&u).is_ok());
        let bad = FirmStrategy::pure(0.1, ValueDistribution::degenerate(0.3).unwrap()).unwrap();
        assert_eq!(bad.check_feasible(&u), Err(Error::Infeasible { component: 0 }));
    }

    #[test]
    fn firm_count_json() {
        assert_eq!(serde_json::from_str::<FirmCount>("3").unwrap(), FirmCount::Finite(3));
        assert_eq!(serde_json::from_str::<FirmCount>("\"infinite\"").unwrap(), FirmCount::Infinite);
        assert!(serde_json::from_str::<FirmCount>("0").is_err());
        assert!(serde_json::from_str::<FirmCount>("\"many\"").is_err());
    }
}

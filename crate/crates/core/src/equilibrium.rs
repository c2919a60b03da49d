//! Deviation search against a conjectured symmetric profile.
//!
//! Each class proposes deviations for firm 0 while consumers keep believing
//! the conjecture. In the stationary infinite market profits are exact; in
//! finite markets a paired simulation (common random numbers) screens the
//! candidates and the best few are re-run on fresh streams with more trials
//! before they count as witnesses. A report with no witness only says that
//! nothing was found in the searched classes at the given resolution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{FusionRegion, FusionSpec, ValueDistribution, DEFAULT_MPC_TOL};
use crate::error::{Error, Result};
use crate::market::{
    analytic_first_visit_profit, paired_revenue, simulate_market, FirmCount, FirmStrategy, MarketConfig,
    PairedEstimate, PreparedMarket,
};
use crate::persuade::{
    concave_envelope, estimate_curve_on, rival_market, splitting_from, uniform_grid, Posterior, Splitting,
};
use crate::rng::StreamSeed;
use crate::search::Regime;
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationClass {
    /// Pool mass from below the stopping threshold with mass above it.
    Fusion,
    /// Keep the conjectured laws, change the price.
    Price,
    /// Reveal nothing, change the price.
    NoInfoPrice,
    /// Best splitting of the payoff-of-posterior curve.
    Concavification,
}

impl DeviationClass {
    pub const ALL: [DeviationClass; 4] = [
        DeviationClass::Fusion,
        DeviationClass::Price,
        DeviationClass::NoInfoPrice,
        DeviationClass::Concavification,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfitBasis {
    /// Exact first-visit profit in the stationary infinite market.
    Analytic,
    /// Simulated revenue per consumer who visits the firm.
    PerVisit,
    /// Simulated revenue per consumer in the market.
    PerConsumer,
}

/// Parameters a witness was built from, enough to replay it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<FusionSpec>,
    /// Mass pooled from below the threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_below: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_above: Option<f64>,
    /// Share of the below-threshold mass that was pooled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barycenter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posteriors: Option<Vec<Posterior>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A strategy for firm 0 that beats the conjecture.
///
/// With `conditional_on_price` set (posted prices), profits are those of a
/// firm that posts that price, and `strategy` swaps the law of that price's
/// component. Otherwise they are the profits of `strategy` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationWitness {
    pub strategy: FirmStrategy,
    pub class: DeviationClass,
    pub baseline_profit: f64,
    pub deviation_profit: f64,
    pub gain: f64,
    pub gain_std_error: f64,
    pub basis: ProfitBasis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_on_price: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub classes: Vec<DeviationClass>,
    /// Smallest exact gain that counts.
    pub tol: f64,
    /// Distance the pooled atom keeps above the stopping threshold.
    pub margin: f64,
    /// Offset used for the salient deviation prices.
    pub epsilon: f64,
    /// Uniform price grid size on `[0, 1]`.
    pub price_grid_points: usize,
    pub extra_prices: Vec<f64>,
    /// Only consider conjectured components posted at these prices.
    pub prices: Option<Vec<f64>>,
    pub screen_trials: u64,
    pub verify_factor: u64,
    pub verify_top: usize,
    /// Simulated gains must exceed `sigmas * se + min_gain`.
    pub sigmas: f64,
    pub min_gain: f64,
    pub max_components: usize,
    pub curve_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            classes: DeviationClass::ALL.to_vec(),
            tol: 1e-9,
            margin: 1e-9,
            epsilon: 1e-3,
            price_grid_points: 512,
            extra_prices: Vec::new(),
            prices: None,
            screen_trials: 4096,
            verify_factor: 4,
            verify_top: 3,
            sigmas: 3.0,
            min_gain: 1e-4,
            max_components: 8,
            curve_step: 1.0 / 64.0,
        }
    }
}

impl SearchOptions {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidMarket(m.into()));
        if self.screen_trials == 0 || self.verify_factor == 0 {
            return bad("trial counts must be positive");
        }
        if !(self.margin >= 0.0) || !(self.epsilon > 0.0) || !(self.tol >= 0.0) {
            return bad("margin and tol must be non-negative, epsilon positive");
        }
        if self.max_components == 0 || self.verify_top == 0 {
            return bad("max_components and verify_top must be positive");
        }
        Ok(())
    }
}

/// A fusion that pools everything above `threshold + margin` with as much
/// mass from just below `threshold` as keeps the pooled atom at or above
/// `threshold + margin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFusion {
    pub spec: FusionSpec,
    pub fused: ValueDistribution,
    pub threshold: f64,
    pub margin: f64,
    pub pooled_below: f64,
    pub pooled_above: f64,
    pub barycenter: f64,
}

enum Piece {
    Atom(f64, f64),
    Span(f64, f64, f64),
}

impl Piece {
    fn top(&self) -> f64 {
        match *self {
            Piece::Atom(x, _) => x,
            Piece::Span(_, hi, _) => hi,
        }
    }
}

/// `None` unless the law has mass strictly below `threshold` and strictly
/// above `threshold + margin`.
pub fn threshold_fusion(dist: &ValueDistribution, threshold: f64, margin: f64) -> Result<Option<ThresholdFusion>> {
    let (t, tau) = (threshold, threshold + margin);
    let (lo, hi) = dist.support();
    if !(tau < hi) || !(t > lo) {
        return Ok(None);
    }
    let pieces = dist.density_pieces();

    let (mut budget, mut above) = (0.0, 0.0);
    for a in dist.atoms().iter().filter(|a| a.location > tau) {
        budget += a.mass * (a.location - tau);
        above += a.mass;
    }
    for &(a, b, d) in pieces.iter().filter(|p| p.1 > tau) {
        let a = a.max(tau);
        let m = d * (b - a);
        budget += m * (0.5 * (a + b) - tau);
        above += m;
    }
    if !(budget > 0.0) {
        return Ok(None);
    }

    // mass below t, walked downward from t
    let mut below: Vec<Piece> = dist
        .atoms()
        .iter()
        .filter(|a| a.location < t)
        .map(|a| Piece::Atom(a.location, a.mass))
        .collect();
    for &(a, b, d) in pieces.iter().filter(|p| p.0 < t) {
        let b = b.min(t);
        let mut cuts: Vec<f64> = dist
            .atoms()
            .iter()
            .map(|x| x.location)
            .filter(|&x| x > a && x < b)
            .collect();
        cuts.push(a);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            below.push(Piece::Span(w[0], w[1], d));
        }
    }
    below.sort_by(|p, q| {
        q.top()
            .total_cmp(&p.top())
            .then_with(|| matches!(q, Piece::Atom(..)).cmp(&matches!(p, Piece::Atom(..))))
    });

    let mut left = budget;
    let mut pooled = 0.0;
    let mut bottom = t;
    let mut partial_atom = None;
    for p in &below {
        match *p {
            Piece::Atom(x, m) => {
                let cost = m * (tau - x);
                bottom = x;
                if cost <= left {
                    left -= cost;
                    pooled += m;
                } else {
                    let f = left / cost;
                    pooled += f * m;
                    partial_atom = Some((x, f));
                    break;
                }
            }
            Piece::Span(a, b, d) => {
                let cost = d * (b - a) * (tau - 0.5 * (a + b));
                if cost <= left {
                    left -= cost;
                    pooled += d * (b - a);
                    bottom = a;
                } else {
                    let s = (tau - ((tau - b).powi(2) + 2.0 * left / d).sqrt()).clamp(a, b);
                    pooled += d * (b - s);
                    bottom = s;
                    break;
                }
            }
        }
    }
    if !(pooled > 0.0) {
        return Ok(None);
    }

    let mut regions = Vec::with_capacity(4);
    if dist.atoms().iter().any(|a| a.location == t) {
        regions.push(FusionRegion::new(t, t, 0.0));
    }
    if let Some((x, f)) = partial_atom {
        regions.push(FusionRegion::new(x, x, f));
    }
    if bottom < t {
        regions.push(FusionRegion::new(bottom, t, 1.0));
    }
    regions.push(FusionRegion::new(tau, hi, 1.0));
    let spec = FusionSpec::new(regions);
    let fused = dist.fuse(&spec)?;
    let barycenter = fused
        .atoms()
        .iter()
        .filter(|a| a.location >= t)
        .max_by(|a, b| a.mass.total_cmp(&b.mass))
        .map_or(f64::NAN, |a| a.location);
    if !(fused.prob_at_least(t) > dist.prob_at_least(t)) {
        return Ok(None);
    }
    Ok(Some(ThresholdFusion {
        spec,
        fused,
        threshold: t,
        margin,
        pooled_below: pooled,
        pooled_above: above,
        barycenter,
    }))
}

/// One deviation to evaluate: firm 0 plays `deviation` instead of
/// `baseline`; `witness` is what gets reported.
struct Candidate {
    baseline: FirmStrategy,
    deviation: FirmStrategy,
    witness: FirmStrategy,
    conditional_on_price: Option<f64>,
    basis: ProfitBasis,
    provenance: Provenance,
}

struct Context<'a> {
    config: &'a MarketConfig,
    conjecture: &'a FirmStrategy,
    options: &'a SearchOptions,
    base: PreparedMarket,
}

impl<'a> Context<'a> {
    fn new(config: &'a MarketConfig, conjecture: &'a FirmStrategy, options: &'a SearchOptions) -> Result<Self> {
        options.validate()?;
        let base = rival_market(config, conjecture)?;
        Ok(Context {
            config,
            conjecture,
            options,
            base,
        })
    }

    fn analytic(&self) -> bool {
        self.config.n == FirmCount::Infinite
    }

    fn mean(&self) -> f64 {
        self.config.prior.mean()
    }

    /// Reservation value consumers attach to component `k`.
    fn reservation(&self, k: usize) -> f64 {
        self.base.firms[0].components[k].z
    }

    /// Components worth deviating from, most promising first.
    fn component_order(&self) -> Vec<usize> {
        let comps = self.conjecture.components();
        let mut idx: Vec<usize> = (0..comps.len())
            .filter(|&k| match &self.options.prices {
                Some(ps) => ps.iter().any(|&p| (p - comps[k].price).abs() <= 1e-12),
                None => true,
            })
            .filter(|&k| self.config.regime == Regime::Posted || comps[k].weight > 0.0)
            .collect();
        match self.config.regime {
            Regime::Hidden => idx.sort_by(|&a, &b| comps[b].weight.total_cmp(&comps[a].weight)),
            Regime::Posted => idx.sort_by(|&a, &b| {
                self.reservation(b)
                    .total_cmp(&self.reservation(a))
                    .then(comps[b].weight.total_cmp(&comps[a].weight))
            }),
        }
        idx
    }

    /// A change of component `k`'s law. In the hidden regime the whole
    /// mixture is compared; with posted prices, the firm posting `k`'s price.
    fn component_candidate(&self, k: usize, dist: ValueDistribution, provenance: Provenance) -> Result<Candidate> {
        let c = &self.conjecture.components()[k];
        let witness = self.conjecture.with_dist(k, dist.clone())?;
        let basis = if self.analytic() { ProfitBasis::Analytic } else { ProfitBasis::PerVisit };
        Ok(match self.config.regime {
            Regime::Hidden => Candidate {
                baseline: self.conjecture.clone(),
                deviation: witness.clone(),
                witness,
                conditional_on_price: None,
                basis,
                provenance,
            },
            Regime::Posted => Candidate {
                baseline: FirmStrategy::pure(c.price, c.dist.clone())?,
                deviation: FirmStrategy::pure(c.price, dist)?,
                witness,
                conditional_on_price: Some(c.price),
                basis,
                provenance,
            },
        })
    }

    fn compare(&self, c: &Candidate, trials: u64, seed: StreamSeed) -> Result<PairedEstimate> {
        if self.analytic() {
            let a = analytic_first_visit_profit(self.conjecture, &c.baseline, self.config.cost)?;
            let b = analytic_first_visit_profit(self.conjecture, &c.deviation, self.config.cost)?;
            return Ok(PairedEstimate {
                baseline: Estimate::exact(a),
                deviation: Estimate::exact(b),
                difference: Estimate::exact(b - a),
            });
        }
        let base = self.base.with_firm(self.config, 0, &c.baseline, self.conjecture)?;
        let dev = self.base.with_firm(self.config, 0, &c.deviation, self.conjecture)?;
        Ok(paired_revenue(&base, &dev, 0, trials, seed, c.basis == ProfitBasis::PerVisit))
    }

    fn significant(&self, e: &Estimate) -> bool {
        if self.analytic() {
            e.mean > self.options.tol
        } else {
            e.mean > self.options.sigmas * e.std_error + self.options.min_gain
        }
    }

    /// Screens candidates, re-runs the best on fresh streams, and returns the
    /// strongest surviving witness.
    fn select(&self, class: DeviationClass, candidates: Vec<Candidate>, seed: StreamSeed) -> Result<Option<DeviationWitness>> {
        let prior = &self.config.prior;
        let feasible: Vec<Candidate> = candidates
            .into_iter()
            .filter(|c| c.witness.check_feasible(prior).is_ok())
            .collect();
        let screen = self.options.screen_trials;
        let screened = feasible
            .par_iter()
            .enumerate()
            .map(|(i, c)| self.compare(c, screen, seed.derive(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..feasible.len())
            .filter(|&i| self.significant(&screened[i].difference))
            .collect();
        order.sort_by(|&a, &b| screened[b].difference.mean.total_cmp(&screened[a].difference.mean));

        let (chosen, trials, verify_seed) = if self.analytic() {
            (order.first().map(|&i| (i, screened[i])), None, None)
        } else {
            order.truncate(self.options.verify_top);
            let trials = screen * self.options.verify_factor;
            let vseed = seed.derive(u64::MAX);
            let verified = order
                .par_iter()
                .map(|&i| Ok((i, self.compare(&feasible[i], trials, vseed.derive(i as u64))?)))
                .collect::<Result<Vec<_>>>()?;
            let best = verified
                .into_iter()
                .filter(|(_, e)| self.significant(&e.difference))
                .fold(None, |acc: Option<(usize, PairedEstimate)>, (i, e)| match acc {
                    Some((_, b)) if b.difference.mean >= e.difference.mean => acc,
                    _ => Some((i, e)),
                });
            (best, Some(trials), Some(vseed))
        };
        Ok(chosen.map(|(i, e)| {
            let c = &feasible[i];
            let mut provenance = c.provenance.clone();
            provenance.trials = trials;
            provenance.seed = verify_seed.map(|s| s.derive(i as u64).value());
            DeviationWitness {
                strategy: c.witness.clone(),
                class,
                baseline_profit: e.baseline.mean,
                deviation_profit: e.deviation.mean,
                gain: e.difference.mean,
                gain_std_error: e.difference.std_error,
                basis: c.basis,
                conditional_on_price: c.conditional_on_price,
                provenance,
            }
        }))
    }

    fn fusion_candidates(&self) -> Result<Vec<Candidate>> {
        let comps = self.conjecture.components();
        let mut out = Vec::new();
        for k in self.component_order() {
            if out.len() >= self.options.max_components {
                break;
            }
            let c = &comps[k];
            let threshold = self.reservation(k).max(0.0) + c.price;
            let Some(f) = threshold_fusion(&c.dist, threshold, self.options.margin)? else {
                continue;
            };
            let below_total = 1.0 - c.dist.prob_at_least(threshold);
            let provenance = Provenance {
                component: Some(k),
                price: Some(c.price),
                threshold: Some(threshold),
                margin: Some(self.options.margin),
                regions: Some(f.spec.clone()),
                pooled_below: Some(f.pooled_below),
                pooled_above: Some(f.pooled_above),
                epsilon: Some(f.pooled_below / below_total),
                barycenter: Some(f.barycenter),
                ..Provenance::default()
            };
            out.push(self.component_candidate(k, f.fused, provenance)?);
        }
        Ok(out)
    }

    fn price_grid(&self) -> Vec<f64> {
        let (mu, c, e) = (self.mean(), self.config.cost, self.options.epsilon);
        let n = self.options.price_grid_points;
        let mut grid: Vec<f64> = match n {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        };
        grid.extend([mu, mu - e, mu - c, mu - c - e]);
        for p in self.conjecture.prices().into_iter().take(self.options.max_components) {
            grid.extend([p + c, p - c, p + c - e, p + e, p - e]);
        }
        grid.extend(self.options.extra_prices.iter().copied());
        grid.retain(|p| p.is_finite() && *p >= 0.0);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    fn price_candidates(&self, class: DeviationClass, grid: &[f64]) -> Result<Vec<Candidate>> {
        let basis = if self.analytic() { ProfitBasis::Analytic } else { ProfitBasis::PerConsumer };
        let no_info = ValueDistribution::degenerate_on(self.config.prior.support(), self.mean())?;
        grid.iter()
            .map(|&q| {
                let deviation = match class {
                    DeviationClass::NoInfoPrice => FirmStrategy::pure(q, no_info.clone())?,
                    _ => self.conjecture.reprice(q)?,
                };
                Ok(Candidate {
                    baseline: self.conjecture.clone(),
                    witness: deviation.clone(),
                    deviation,
                    conditional_on_price: None,
                    basis,
                    provenance: Provenance {
                        price: Some(q),
                        ..Provenance::default()
                    },
                })
            })
            .collect()
    }

    fn concavification_candidates(&self, seed: StreamSeed) -> Result<(Vec<Candidate>, Option<String>)> {
        let mu = self.mean();
        let mut grid = uniform_grid(self.options.curve_step)?;
        if !grid.contains(&mu) {
            grid.push(mu);
            grid.sort_by(f64::total_cmp);
        }
        let comps = self.conjecture.components();
        let support = self.config.prior.support();
        let trials = if self.analytic() { 1 } else { self.options.screen_trials };
        let order: Vec<usize> = self.component_order().into_iter().take(self.options.max_components).collect();
        let curves = order
            .par_iter()
            .map(|&k| {
                estimate_curve_on(&self.base, self.config, self.conjecture, comps[k].price, &grid, trials, seed.derive(k as u64))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut out = Vec::new();
        let mut skipped = 0;
        for (&k, curve) in order.iter().zip(&curves) {
            let env = concave_envelope(curve);
            let mut split = splitting_from(&env, mu)?;
            // a flat stretch of hull through the mean gains nothing over no information
            let here = curve.value_at(mu);
            if here >= split.value - 1e-12 * (1.0 + here.abs()) {
                split = Splitting {
                    posteriors: vec![Posterior {
                        location: mu,
                        weight: 1.0,
                    }],
                    value: here,
                };
            }
            let dist = split.to_distribution(support)?;
            if !dist.is_mpc(&self.config.prior, DEFAULT_MPC_TOL)? {
                skipped += 1;
                continue;
            }
            let provenance = Provenance {
                component: Some(k),
                price: Some(comps[k].price),
                posteriors: Some(split.posteriors.clone()),
                envelope_value: Some(split.value),
                ..Provenance::default()
            };
            out.push(self.component_candidate(k, dist, provenance)?);
        }
        let note = (skipped > 0).then(|| {
            format!("{skipped} optimal splitting(s) are not contractions of the prior and were not tested")
        });
        Ok((out, note))
    }

    fn run_class(&self, class: DeviationClass, seed: StreamSeed) -> Result<ClassVerdict> {
        let (candidates, note) = match class {
            DeviationClass::Fusion => (self.fusion_candidates()?, None),
            DeviationClass::Price | DeviationClass::NoInfoPrice => {
                (self.price_candidates(class, &self.price_grid())?, None)
            }
            DeviationClass::Concavification => self.concavification_candidates(seed.derive(7))?,
        };
        let count = candidates.len();
        let witness = self.select(class, candidates, seed)?;
        Ok(ClassVerdict {
            class,
            witness,
            candidates: count,
            note,
        })
    }
}

/// Looks for a profitable fusion of a conjectured law around the consumers'
/// stopping threshold.
pub fn fusion_deviation_search(
    conjecture: &FirmStrategy,
    config: &MarketConfig,
    options: &SearchOptions,
) -> Result<Option<DeviationWitness>> {
    let ctx = Context::new(config, conjecture, options)?;
    Ok(ctx.run_class(DeviationClass::Fusion, class_seed(config, DeviationClass::Fusion))?.witness)
}

/// Best price deviation over `price_grid` (or the default grid when empty),
/// keeping either the conjectured laws or no information.
pub fn price_menu_deviation_search(
    conjecture: &FirmStrategy,
    config: &MarketConfig,
    price_grid: &[f64],
    options: &SearchOptions,
) -> Result<Option<DeviationWitness>> {
    let ctx = Context::new(config, conjecture, options)?;
    let grid = if price_grid.is_empty() { ctx.price_grid() } else { price_grid.to_vec() };
    let mut best: Option<DeviationWitness> = None;
    for class in [DeviationClass::Price, DeviationClass::NoInfoPrice] {
        let found = ctx.select(class, ctx.price_candidates(class, &grid)?, class_seed(config, class))?;
        if let Some(w) = found {
            if best.as_ref().is_none_or(|b| w.gain > b.gain) {
                best = Some(w);
            }
        }
    }
    Ok(best)
}

/// Best two-point splitting at the prior mean of firm 0's estimated
/// payoff curve, for each conjectured price.
pub fn concavification_deviation_search(
    conjecture: &FirmStrategy,
    config: &MarketConfig,
    options: &SearchOptions,
) -> Result<Option<DeviationWitness>> {
    let ctx = Context::new(config, conjecture, options)?;
    let class = DeviationClass::Concavification;
    Ok(ctx.run_class(class, class_seed(config, class))?.witness)
}

/// Profit change of firm 0 switching from the conjecture to `deviant`,
/// simulated even where an exact formula exists.
pub fn simulate_deviation(
    config: &MarketConfig,
    conjecture: &FirmStrategy,
    deviant: &FirmStrategy,
    basis: ProfitBasis,
    trials: u64,
    seed: StreamSeed,
) -> Result<PairedEstimate> {
    let base = rival_market(config, conjecture)?;
    let dev = base.with_firm(config, 0, deviant, conjecture)?;
    Ok(paired_revenue(&base, &dev, 0, trials, seed, basis != ProfitBasis::PerConsumer))
}

fn class_seed(config: &MarketConfig, class: DeviationClass) -> StreamSeed {
    StreamSeed::new(config.seed).derive(class as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub class: DeviationClass,
    pub witness: Option<DeviationWitness>,
    /// Deviations evaluated.
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    /// True when no class produced a witness.
    pub certified: bool,
    pub scope: String,
    pub candidate: FirmStrategy,
    pub config: MarketConfig,
    pub options: SearchOptions,
    /// Firm 0's profit per visit when everyone plays the candidate.
    pub candidate_profit: Estimate,
    pub verdicts: Vec<ClassVerdict>,
    pub strongest: Option<DeviationWitness>,
}

const SCOPE: &str = "no profitable deviation was found within the listed classes at the recorded \
                     grids, trial counts and tolerances; this is not a proof of equilibrium";

/// Runs the requested deviation classes against a symmetric candidate.
pub fn check_symmetric_equilibrium(
    candidate: &FirmStrategy,
    config: &MarketConfig,
    options: &SearchOptions,
) -> Result<CertificationReport> {
    config.validate()?;
    candidate.check_feasible(&config.prior)?;
    let ctx = Context::new(config, candidate, options)?;

    let candidate_profit = if ctx.analytic() {
        Estimate::exact(analytic_first_visit_profit(candidate, candidate, config.cost)?)
    } else {
        let n = match config.n {
            FirmCount::Finite(n) => n,
            FirmCount::Infinite => 1,
        };
        let sim = config.with_trials(options.screen_trials * options.verify_factor);
        simulate_market(&sim, &vec![candidate.clone(); n], candidate)?.firms[0].profit_per_visit
    };

    let mut classes = options.classes.clone();
    classes.sort();
    classes.dedup();
    let verdicts = classes
        .par_iter()
        .map(|&class| ctx.run_class(class, class_seed(config, class)))
        .collect::<Result<Vec<_>>>()?;
    let strongest = verdicts
        .iter()
        .filter_map(|v| v.witness.as_ref())
        .fold(None, |acc: Option<&DeviationWitness>, w| match acc {
            Some(b) if b.gain >= w.gain => acc,
            _ => Some(w),
        })
        .cloned();
    Ok(CertificationReport {
        certified: strongest.is_none(),
        scope: SCOPE.into(),
        candidate: candidate.clone(),
        config: config.clone(),
        options: options.clone(),
        candidate_profit,
        verdicts,
        strongest,
    })
}

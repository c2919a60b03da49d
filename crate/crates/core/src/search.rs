//! Consumer side: reservation values, search plans with recall, and an
//! exhaustive backward-induction oracle for small instances.

use std::borrow::Borrow;
use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ValueDistribution;
use crate::error::{Error, Result};
use crate::rng::StreamSeed;
use crate::stats::{Estimate, Moments};

/// Residual target for the reservation equation.
pub const RESERVATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Hidden,
    Posted,
}

/// Inputs of the reservation equation `c = E[max(X - price - z, 0)]`.
///
/// For a net-value law (already net of price) use `price = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservationProblem {
    pub dist: ValueDistribution,
    pub price: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub value: f64,
    pub residual: f64,
    pub iterations: u32,
}

pub fn reservation_value(dist: &ValueDistribution, price: f64, cost: f64) -> Result<f64> {
    solve_reservation(&ReservationProblem {
        dist: dist.clone(),
        price,
        cost,
    })
    .map(|r| r.value)
}

/// Solves for the reservation value.
///
/// Bisection on `z` brackets the root (expanding downward, where the
/// expected excess grows with slope one), then the root is recomputed in
/// closed form on the quadratic piece that contains it. The closed form is
/// kept only when its residual is no worse.
pub fn solve_reservation(problem: &ReservationProblem) -> Result<Reservation> {
    let ReservationProblem { dist, price, cost } = problem;
    let (price, cost) = (*price, *cost);
    if !(cost > 0.0) || !cost.is_finite() {
        return Err(Error::NonPositiveCost(cost));
    }
    if !(price >= 0.0) || !price.is_finite() {
        return Err(Error::InvalidPrice(price));
    }
    let residual = |z: f64| dist.expected_excess(price + z) - cost;

    let mut hi = dist.support().1 - price;
    let mut step = 1.0;
    let mut lo = hi - step;
    let mut iterations = 0u32;
    while residual(lo) < 0.0 {
        step *= 2.0;
        lo = hi - step;
        iterations += 1;
    }
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = residual(mid);
        if r == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bisected = if residual(lo).abs() <= residual(hi).abs() { lo } else { hi };
    let mut value = bisected;
    let mut best = residual(bisected).abs();
    if let Some(t) = solve_on_piece(dist, cost, price + bisected) {
        let z = t - price;
        let r = residual(z).abs();
        if r <= best {
            value = z;
            best = r;
        }
    }
    if best > RESERVATION_TOL {
        return Err(Error::NoConvergence(best));
    }
    Ok(Reservation {
        value,
        residual: best,
        iterations,
    })
}

/// Closed-form root of `E[max(X - t, 0)] = cost` on the piece containing `guess`.
fn solve_on_piece(dist: &ValueDistribution, cost: f64, guess: f64) -> Option<f64> {
    let pts = dist.breakpoints();
    let idx = pts.partition_point(|&p| p <= guess);
    let left = if idx == 0 { f64::NEG_INFINITY } else { pts[idx - 1] };
    let right = pts.get(idx).copied().unwrap_or(f64::INFINITY);
    let probe = match (left.is_finite(), right.is_finite()) {
        (true, true) => 0.5 * (left + right),
        (true, false) => left + 1.0,
        (false, true) => right - 1.0,
        (false, false) => return None,
    };

    // E[(X - t)+] = a t^2 + b t + k on the piece
    let (mut a, mut b, mut k) = (0.0, 0.0, 0.0);
    for atom in dist.atoms() {
        if atom.location > probe {
            b -= atom.mass;
            k += atom.mass * atom.location;
        }
    }
    for s in dist.segments() {
        if s.lo >= probe {
            b -= s.mass;
            k += s.mass * s.mean();
        } else if s.hi > probe {
            let half = 0.5 * s.density();
            a += half;
            b -= 2.0 * half * s.hi;
            k += half * s.hi * s.hi;
        }
    }
    let c = k - cost;
    let roots: Vec<f64> = if a == 0.0 {
        if b == 0.0 {
            return None;
        }
        vec![-c / b]
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut r = vec![q / a];
        if q != 0.0 {
            r.push(c / q);
        }
        r
    };
    let slack = 1e-12 * (1.0 + guess.abs());
    roots
        .into_iter()
        .filter(|t| t.is_finite() && *t >= left - slack && *t <= right + slack)
        .min_by(|x, y| (x - guess).abs().total_cmp(&(y - guess).abs()))
}

/// A consumer's search policy.
///
/// `reservation[i]` is firm `i`'s reservation value. In the posted regime
/// `beliefs[i]`, when present, is the conjectured net-value law of firm `i`;
/// it decides which firm gets the free first visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerPolicy {
    pub regime: Regime,
    pub reservation: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<Vec<ValueDistribution>>,
    #[serde(default)]
    pub outside_option: f64,
    #[serde(default = "default_true")]
    pub first_visit_free: bool,
}

fn default_true() -> bool {
    true
}

impl ConsumerPolicy {
    /// Symmetric hidden-price policy over `n` firms.
    pub fn hidden(n: usize, z: f64) -> Self {
        ConsumerPolicy {
            regime: Regime::Hidden,
            reservation: vec![z; n],
            beliefs: None,
            outside_option: 0.0,
            first_visit_free: true,
        }
    }

    /// Posted-price policy built from conjectured net-value laws.
    pub fn posted(beliefs: Vec<ValueDistribution>, cost: f64) -> Result<Self> {
        let reservation = beliefs
            .iter()
            .map(|b| reservation_value(b, 0.0, cost))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConsumerPolicy {
            regime: Regime::Posted,
            reservation,
            beliefs: Some(beliefs),
            outside_option: 0.0,
            first_visit_free: true,
        })
    }
}

/// A visit order plus the thresholds that stop it.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchPlan {
    pub order: Vec<usize>,
    reservation: Vec<f64>,
    outside_option: f64,
    first_visit_free: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Firms in the order they were visited.
    pub visited: Vec<usize>,
    /// Firm bought from, if any.
    pub chosen: Option<usize>,
    /// Net surplus of the purchase, or the outside option.
    pub surplus: f64,
    pub search_cost: f64,
}

impl SearchOutcome {
    pub fn visits(&self) -> usize {
        self.visited.len()
    }

    pub fn utility(&self) -> f64 {
        self.surplus - self.search_cost
    }
}

/// Orders the firms. `keys[i]` is firm `i`'s uniform tie-break key.
///
/// Hidden prices: uniformly random order. Posted prices: the free first
/// visit goes to the firm maximising `E[max(0, Y_j, max_{i != j} min(Y_i, z_i))]`
/// (falling back to the highest reservation value without beliefs), and the
/// rest follow in descending reservation value. Ties go to the smaller key.
pub fn plan_search(policy: &ConsumerPolicy, keys: &[f64]) -> Result<SearchPlan> {
    let n = policy.reservation.len();
    if n == 0 {
        return Err(Error::EmptyFirmSet);
    }
    if keys.len() != n {
        return Err(Error::InvalidMarket(format!(
            "{} tie-break keys for {n} firms",
            keys.len()
        )));
    }
    let order = order_firms(
        policy.regime,
        &policy.reservation,
        policy.beliefs.as_deref(),
        keys,
        policy.first_visit_free,
    );
    Ok(SearchPlan {
        order,
        reservation: policy.reservation.clone(),
        outside_option: policy.outside_option,
        first_visit_free: policy.first_visit_free,
    })
}

/// Draws tie-break keys from `rng` and plans.
pub fn plan_search_random<R: Rng + ?Sized>(policy: &ConsumerPolicy, rng: &mut R) -> Result<SearchPlan> {
    let keys: Vec<f64> = (0..policy.reservation.len()).map(|_| rng.random()).collect();
    plan_search(policy, &keys)
}

impl SearchPlan {
    /// Runs the plan. `surplus(i)` reveals firm `i`'s net surplus on visit.
    /// Stops once the best offer in hand reaches the next firm's reservation
    /// value, or the outside option strictly beats it. An indifferent
    /// consumer holding an offer stops; one holding nothing searches on.
    pub fn execute(&self, cost: f64, keys: &[f64], surplus: impl FnMut(usize) -> f64) -> SearchOutcome {
        run_plan(
            &self.order,
            &self.reservation,
            self.outside_option,
            self.first_visit_free,
            cost,
            keys,
            surplus,
        )
    }
}

pub(crate) fn order_firms<B: Borrow<ValueDistribution>>(
    regime: Regime,
    z: &[f64],
    beliefs: Option<&[B]>,
    keys: &[f64],
    first_visit_free: bool,
) -> Vec<usize> {
    let values = match (regime, beliefs) {
        (Regime::Posted, Some(b)) if first_visit_free && z.len() > 1 => Some(first_visit_values(b, z)),
        _ => None,
    };
    order_with_values(regime, z, values.as_deref(), keys)
}

/// `free_first_value` for every candidate first firm.
pub(crate) fn first_visit_values<B: Borrow<ValueDistribution>>(beliefs: &[B], z: &[f64]) -> Vec<f64> {
    (0..z.len()).map(|j| free_first_value(beliefs, z, j)).collect()
}

/// Visit order given precomputed first-visit values (posted regime only).
pub(crate) fn order_with_values(regime: Regime, z: &[f64], values: Option<&[f64]>, keys: &[f64]) -> Vec<usize> {
    let n = z.len();
    let mut order: Vec<usize> = (0..n).collect();
    match regime {
        Regime::Hidden => order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b])),
        Regime::Posted => {
            order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(keys[a].total_cmp(&keys[b])));
            if let Some(values) = values {
                let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-12 * (1.0 + best.abs());
                // `order` is sorted by (z desc, key), so the first firm
                // within slack of the best value wins the tie.
                let pos = order.iter().position(|&j| values[j] >= best - slack).unwrap_or(0);
                let first = order.remove(pos);
                order.insert(0, first);
            }
        }
    }
    order
}

pub(crate) fn run_plan(
    order: &[usize],
    reservation: &[f64],
    outside_option: f64,
    first_visit_free: bool,
    cost: f64,
    keys: &[f64],
    mut surplus: impl FnMut(usize) -> f64,
) -> SearchOutcome {
    let mut visited = Vec::with_capacity(order.len());
    let mut best: Option<(usize, f64)> = None;
    let mut search_cost = 0.0;
    for (step, &firm) in order.iter().enumerate() {
        let free = step == 0 && first_visit_free;
        if !free && should_stop(best.map(|(_, s)| s), outside_option, reservation[firm]) {
            break;
        }
        if !free {
            search_cost += cost;
        }
        let s = surplus(firm);
        visited.push(firm);
        best = match best {
            None => Some((firm, s)),
            Some((b, bs)) if s > bs || (s == bs && keys[firm] < keys[b]) => Some((firm, s)),
            keep => keep,
        };
    }
    match best {
        Some((firm, s)) if s >= outside_option => SearchOutcome {
            visited,
            chosen: Some(firm),
            surplus: s,
            search_cost,
        },
        _ => SearchOutcome {
            visited,
            chosen: None,
            surplus: outside_option,
            search_cost,
        },
    }
}

/// Stop rule shared by every consumer in the crate.
pub(crate) fn should_stop(best_offer: Option<f64>, outside_option: f64, next_reservation: f64) -> bool {
    match best_offer {
        Some(s) if s >= outside_option => s >= next_reservation,
        _ => outside_option > next_reservation,
    }
}

/// `E[max(0, Y_j, max_{i != j} min(Y_i, z_i))]`: the consumer's value from
/// opening firm `j` for free and then following the reservation-value rule.
pub fn free_first_value<B: Borrow<ValueDistribution>>(beliefs: &[B], z: &[f64], j: usize) -> f64 {
    let mut cuts: Vec<f64> = vec![0.0];
    let mut top = 0.0f64;
    for (i, b) in beliefs.iter().enumerate() {
        let b = b.borrow();
        top = top.max(b.support().1);
        cuts.extend(b.breakpoints().into_iter().filter(|&x| x > 0.0));
        if i != j && z[i] > 0.0 {
            cuts.push(z[i]);
        }
    }
    cuts.retain(|&x| x <= top);
    cuts.push(top);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let (s1, s2) = (a + len / 3.0, a + 2.0 * len / 3.0);
        // product of linear CDF factors as a polynomial in u = s - a
        let mut poly = vec![1.0];
        for (i, belief) in beliefs.iter().enumerate() {
            if i != j && mid >= z[i] {
                continue;
            }
            let belief = belief.borrow();
            let (f1, f2) = (belief.cdf_at(s1), belief.cdf_at(s2));
            let slope = (f2 - f1) / (s2 - s1);
            let intercept = f1 - slope * (s1 - a);
            let mut next = vec![0.0; poly.len() + 1];
            for (d, &c) in poly.iter().enumerate() {
                next[d] += c * intercept;
                next[d + 1] += c * slope;
            }
            poly = next;
        }
        let integral: f64 = poly
            .iter()
            .enumerate()
            .map(|(d, &c)| c * len.powi(d as i32 + 1) / (d as f64 + 1.0))
            .sum();
        total += len - integral;
    }
    total
}

/// One firm as the brute-force oracle sees it: price and atom-only law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownFirm {
    pub price: f64,
    pub dist: ValueDistribution,
}

pub const BRUTE_FORCE_MAX_FIRMS: usize = 3;
pub const BRUTE_FORCE_MAX_ATOMS: usize = 6;

/// Exact value of the optimal search plan with recall and a free first
/// visit, by backward induction over (visited set, best surplus in hand).
pub fn brute_force_policy_value(firms: &[KnownFirm], cost: f64) -> Result<f64> {
    if firms.is_empty() {
        return Err(Error::EmptyFirmSet);
    }
    if !(cost > 0.0) {
        return Err(Error::NonPositiveCost(cost));
    }
    if firms.len() > BRUTE_FORCE_MAX_FIRMS {
        return Err(Error::InstanceTooLarge(format!(
            "{} firms (limit {BRUTE_FORCE_MAX_FIRMS})",
            firms.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(firms.len());
    for f in firms {
        if !f.dist.is_atomic() {
            return Err(Error::NonAtomic);
        }
        if f.dist.atoms().len() > BRUTE_FORCE_MAX_ATOMS {
            return Err(Error::InstanceTooLarge(format!(
                "{} atoms (limit {BRUTE_FORCE_MAX_ATOMS})",
                f.dist.atoms().len()
            )));
        }
        outcomes.push(
            f.dist
                .atoms()
                .iter()
                .map(|a| (a.location - f.price, a.mass))
                .collect::<Vec<_>>(),
        );
    }

    struct Solver<'a> {
        outcomes: &'a [Vec<(f64, f64)>],
        cost: f64,
        memo: HashMap<(u32, u64), f64>,
    }
    impl Solver<'_> {
        fn value(&mut self, visited: u32, best: Option<f64>) -> f64 {
            let key = (visited, best.map_or(u64::MAX, f64::to_bits));
            if let Some(&v) = self.memo.get(&key) {
                return v;
            }
            let mut v = best.map_or(0.0, |b| b.max(0.0));
            for j in 0..self.outcomes.len() {
                if visited & (1 << j) != 0 {
                    continue;
                }
                let fee = if visited == 0 { 0.0 } else { self.cost };
                let mut cont = -fee;
                for &(y, m) in &self.outcomes[j] {
                    let nb = best.map_or(y, |b| b.max(y));
                    cont += m * self.value(visited | (1 << j), Some(nb));
                }
                v = v.max(cont);
            }
            self.memo.insert(key, v);
            v
        }
    }
    let mut solver = Solver {
        outcomes: &outcomes,
        cost,
        memo: HashMap::new(),
    };
    Ok(solver.value(0, None))
}

/// Monte Carlo value of [`plan_search`] when the consumer knows each firm's
/// price and law (posted-regime policy built from the true laws).
pub fn simulate_policy_value(firms: &[KnownFirm], cost: f64, trials: u64, seed: u64) -> Result<Estimate> {
    if firms.is_empty() {
        return Err(Error::EmptyFirmSet);
    }
    let beliefs = firms
        .iter()
        .map(|f| {
            let (lo, hi) = f.dist.support();
            f.dist.shift(-f.price, (lo - f.price.max(hi), hi))
        })
        .collect::<Result<Vec<_>>>()?;
    let policy = ConsumerPolicy::posted(beliefs, cost)?;
    let seed = StreamSeed::new(seed);
    const CHUNK: u64 = 4096;
    let chunks = trials.div_ceil(CHUNK);
    let n = firms.len();
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::default();
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = seed.stream(t);
                let keys: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                let draws: Vec<f64> = firms.iter().map(|f| f.dist.sample(&mut rng) - f.price).collect();
                let plan = plan_search(&policy, &keys).expect("non-empty");
                m.push(plan.execute(cost, &keys, |i| draws[i]).utility());
            }
            m
        })
        .collect();
    let mut total = Moments::default();
    parts.iter().for_each(|p| total.merge(p));
    Ok(total.estimate())
}

//! Information design on the firm side: payoff-of-posterior curves, their
//! least concave majorants, and the two-point splittings that attain them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ValueDistribution;
use crate::error::{Error, Result};
use crate::market::{revenue_given_visit, FirmCount, FirmStrategy, MarketConfig, PreparedMarket};
use crate::rng::StreamSeed;

/// Default spacing of analytic curve grids.
pub const DEFAULT_GRID_STEP: f64 = 1e-4;

/// Slack when deciding whether a hull point lies on or under a chord.
const HULL_EPS: f64 = 1e-14;

/// A firm's payoff `V(x)` sampled on a grid of posterior means in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveRepr", into = "CurveRepr")]
pub struct PayoffCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
    std_errors: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveRepr {
    grid: Vec<f64>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    std_errors: Option<Vec<f64>>,
}

impl TryFrom<CurveRepr> for PayoffCurve {
    type Error = Error;
    fn try_from(r: CurveRepr) -> Result<Self> {
        let curve = PayoffCurve::new(r.grid, r.values)?;
        match r.std_errors {
            Some(se) => curve.with_std_errors(se),
            None => Ok(curve),
        }
    }
}

impl From<PayoffCurve> for CurveRepr {
    fn from(c: PayoffCurve) -> Self {
        CurveRepr {
            grid: c.grid,
            values: c.values,
            std_errors: c.std_errors,
        }
    }
}

impl PayoffCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::InvalidCurve("need at least two grid points".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::InvalidCurve(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidCurve("grid must be strictly increasing".into()));
        }
        if grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 {
            return Err(Error::InvalidCurve("grid must span [0, 1]".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCurve(format!("value {i} is not finite")));
        }
        Ok(PayoffCurve {
            grid,
            values,
            std_errors: None,
        })
    }

    pub fn with_std_errors(mut self, std_errors: Vec<f64>) -> Result<Self> {
        if std_errors.len() != self.grid.len() {
            return Err(Error::InvalidCurve("one standard error per grid point".into()));
        }
        self.std_errors = Some(std_errors);
        Ok(self)
    }

    /// Samples `f` on `{0, step, 2 step, ..., 1}`; `1 / step` is rounded to
    /// the nearest integer so that the end points are exact.
    pub fn from_fn(step: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = uniform_grid(step)?;
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn std_errors(&self) -> Option<&[f64]> {
        self.std_errors.as_deref()
    }

    /// Linear interpolation between grid points.
    pub fn value_at(&self, x: f64) -> f64 {
        interpolate(&self.grid, &self.values, x)
    }
}

/// `{0, 1/k, ..., 1}` with `k = round(1 / step)`.
pub fn uniform_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidCurve(format!("grid step {step} outside (0, 1]")));
    }
    let k = (1.0 / step).round().max(1.0) as usize;
    Ok((0..=k).map(|i| i as f64 / k as f64).collect())
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&g| g < x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    if xs[i] == x {
        return ys[i];
    }
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

/// The least concave majorant of a curve, on the curve's own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub curve: PayoffCurve,
    /// Grid indices of the hull vertices, ascending.
    pub vertices: Vec<usize>,
}

impl Envelope {
    pub fn value_at(&self, x: f64) -> f64 {
        self.curve.value_at(x)
    }

    /// Vertex coordinates `(x, V(x))`.
    pub fn vertex_points(&self) -> Vec<(f64, f64)> {
        self.vertices
            .iter()
            .map(|&i| (self.curve.grid[i], self.curve.values[i]))
            .collect()
    }
}

/// Upper hull by a single monotone-chain pass. Points on a chord are dropped,
/// so vertices are the kinks of the envelope.
pub fn concave_envelope(curve: &PayoffCurve) -> Envelope {
    let (xs, ys) = (&curve.grid, &curve.values);
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            let scale = 1.0 + ys[a].abs().max(ys[b].abs()).max(ys[i].abs());
            if cross >= -HULL_EPS * scale {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }

    let mut values = vec![0.0; xs.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (ys[b] - ys[a]) / (xs[b] - xs[a]);
        for (k, v) in values.iter_mut().enumerate().take(b + 1).skip(a) {
            *v = if k == b { ys[b] } else { ys[a] + slope * (xs[k] - xs[a]) };
        }
    }
    Envelope {
        curve: PayoffCurve {
            grid: xs.clone(),
            values,
            std_errors: None,
        },
        vertices: hull,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub location: f64,
    pub weight: f64,
}

/// A Bayes-plausible split of the prior mean into at most two posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splitting {
    pub posteriors: Vec<Posterior>,
    pub value: f64,
}

impl Splitting {
    pub fn mean(&self) -> f64 {
        self.posteriors.iter().map(|p| p.weight * p.location).sum()
    }

    /// The splitting as a law over posterior means.
    pub fn to_distribution(&self, support: (f64, f64)) -> Result<ValueDistribution> {
        let atoms: Vec<(f64, f64)> = self.posteriors.iter().map(|p| (p.location, p.weight)).collect();
        ValueDistribution::new(support, atoms, [])
    }
}

/// The splitting that attains the envelope at `prior_mean`: the two hull
/// vertices around it, or the single vertex it sits on.
pub fn optimal_splitting(curve: &PayoffCurve, prior_mean: f64) -> Result<Splitting> {
    splitting_from(&concave_envelope(curve), prior_mean)
}

pub fn splitting_from(envelope: &Envelope, prior_mean: f64) -> Result<Splitting> {
    if !(0.0..=1.0).contains(&prior_mean) {
        return Err(Error::OutOfSupport {
            value: prior_mean,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let pts = envelope.vertex_points();
    let j = pts.partition_point(|&(x, _)| x < prior_mean);
    if j < pts.len() && pts[j].0 == prior_mean {
        return Ok(Splitting {
            posteriors: vec![Posterior {
                location: prior_mean,
                weight: 1.0,
            }],
            value: pts[j].1,
        });
    }
    // the grid spans [0, 1], so a vertex lies on each side
    let ((xa, va), (xb, vb)) = (pts[j - 1], pts[j]);
    let wb = (prior_mean - xa) / (xb - xa);
    let wa = 1.0 - wb;
    Ok(Splitting {
        posteriors: vec![
            Posterior {
                location: xa,
                weight: wa,
            },
            Posterior {
                location: xb,
                weight: wb,
            },
        ],
        value: wa * va + wb * vb,
    })
}

/// Payoff of a firm at price 7/16 in the `example2` market as a function of its
/// posterior: nothing below the price, certain sale from 7/8 up.
pub fn example2_payoff(x: f64) -> f64 {
    const P: f64 = 7.0 / 16.0;
    if x < P {
        0.0
    } else if x <= 7.0 / 8.0 {
        7.0 / (21.0 - 16.0 * x) * P
    } else {
        P
    }
}

pub fn example2_curve(step: f64) -> Result<PayoffCurve> {
    PayoffCurve::from_fn(step, example2_payoff)
}

/// Monte Carlo payoff curve of firm 0 posting `own_price` with posterior
/// fixed at each grid point, rivals playing `conjecture` and consumers
/// believing it. Values are revenue per visit.
pub fn estimate_payoff_curve(
    config: &MarketConfig,
    conjecture: &FirmStrategy,
    own_price: f64,
    grid: &[f64],
    trials: u64,
    seed: StreamSeed,
) -> Result<PayoffCurve> {
    let base = rival_market(config, conjecture)?;
    estimate_curve_on(&base, config, conjecture, own_price, grid, trials, seed)
}

/// Market with every firm playing the conjecture.
pub(crate) fn rival_market(config: &MarketConfig, conjecture: &FirmStrategy) -> Result<PreparedMarket> {
    if config.trials == 0 {
        return Err(Error::InvalidMarket("trials must be at least 1".into()));
    }
    let actual = match config.n {
        FirmCount::Finite(n) => vec![conjecture.clone(); n],
        FirmCount::Infinite => vec![conjecture.clone()],
    };
    PreparedMarket::new(config, &actual, conjecture)
}

pub(crate) fn estimate_curve_on(
    base: &PreparedMarket,
    config: &MarketConfig,
    conjecture: &FirmStrategy,
    own_price: f64,
    grid: &[f64],
    trials: u64,
    seed: StreamSeed,
) -> Result<PayoffCurve> {
    if trials == 0 {
        return Err(Error::InvalidMarket("trials must be at least 1".into()));
    }
    let support = config.prior.support();
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(k, &x)| {
            let own = FirmStrategy::pure(own_price, ValueDistribution::degenerate_on(support, x)?)?;
            let market = base.with_firm(config, 0, &own, conjecture)?;
            Ok(revenue_given_visit(&market, 0, trials, seed.derive(k as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    PayoffCurve::new(grid.to_vec(), points.iter().map(|e| e.mean).collect())?
        .with_std_errors(points.iter().map(|e| e.std_error).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Best chord value at `x` over every pair of grid points around it.
    fn pair_oracle(curve: &PayoffCurve, x: f64) -> (f64, f64, f64) {
        let (g, v) = (curve.grid(), curve.values());
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..g.len() {
            if g[i] > x {
                break;
            }
            for j in i..g.len() {
                if g[j] < x {
                    continue;
                }
                let val = if g[i] == g[j] {
                    v[i]
                } else {
                    let w = (x - g[i]) / (g[j] - g[i]);
                    (1.0 - w) * v[i] + w * v[j]
                };
                if val > best.0 {
                    best = (val, g[i], g[j]);
                }
            }
        }
        best
    }

    #[test]
    fn example2_pieces() {
        assert_eq!(example2_payoff(0.3), 0.0);
        assert_eq!(example2_payoff(7.0 / 8.0), 7.0 / 16.0);
        assert_eq!(example2_payoff(7.0 / 16.0), 7.0 / 32.0);
        assert_eq!(example2_payoff(1.0), 7.0 / 16.0);
    }

    #[test]
    fn example2_envelope_matches_pair_oracle() {
        let curve = example2_curve(1.0 / 400.0).unwrap();
        let env = concave_envelope(&curve);
        let (best, lo, hi) = pair_oracle(&curve, 0.5);
        assert!((env.value_at(0.5) - best).abs() < 1e-12);
        assert!((best - 0.25).abs() < 1e-12);
        let s = optimal_splitting(&curve, 0.5).unwrap();
        assert_eq!(s.posteriors[0].location, 0.0);
        assert_eq!(s.posteriors[1].location, 7.0 / 8.0);
        assert!((s.posteriors[0].weight - 3.0 / 7.0).abs() < 1e-12);
        assert!((s.value - 0.25).abs() < 1e-12);
        assert!(lo <= 0.5 && hi >= 0.5);
    }

    #[test]
    fn fine_grid_envelope() {
        let curve = example2_curve(DEFAULT_GRID_STEP).unwrap();
        let env = concave_envelope(&curve);
        assert!((env.value_at(0.5) - 0.25).abs() < 1e-3);
        for (&i, &v) in env.vertices.iter().zip(env.vertices.iter().map(|&i| &env.curve.values()[i])) {
            assert_eq!(v, curve.values()[i]);
        }
    }

    #[test]
    fn concave_input_is_fixed() {
        let curve = PayoffCurve::from_fn(0.01, |x| -(x - 0.5) * (x - 0.5)).unwrap();
        let env = concave_envelope(&curve);
        for (a, b) in env.curve.values().iter().zip(curve.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = optimal_splitting(&curve, 0.3).unwrap();
        assert_eq!(s.posteriors.len(), 1);
        assert_eq!(s.posteriors[0].location, 0.3);
    }

    #[test]
    fn convex_input_gives_chord_and_full_information() {
        let curve = PayoffCurve::from_fn(0.01, |x| x * x).unwrap();
        let env = concave_envelope(&curve);
        assert_eq!(env.vertices, vec![0, 100]);
        for (&x, &v) in env.curve.grid().iter().zip(env.curve.values()) {
            assert!((v - x).abs() < 1e-12);
        }
        let s = optimal_splitting(&curve, 0.3).unwrap();
        assert_eq!(s.posteriors[0], Posterior { location: 0.0, weight: 0.7 });
        assert_eq!(s.posteriors[1].location, 1.0);
        assert!((s.posteriors[1].weight - 0.3).abs() < 1e-15);
    }

    #[test]
    fn bad_curves_are_rejected() {
        assert!(PayoffCurve::new(vec![0.0], vec![1.0]).is_err());
        assert!(PayoffCurve::new(vec![0.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(PayoffCurve::new(vec![0.0, 0.6, 0.5, 1.0], vec![0.0; 4]).is_err());
        let c = PayoffCurve::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(optimal_splitting(&c, 1.5).is_err());
        let back: PayoffCurve = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<PayoffCurve>(r#"{"grid":[0.0,0.5],"values":[0,0]}"#).is_err());
    }
}

//! Distributions over match values and posterior means.
//!
//! A [`ValueDistribution`] is a finite set of point masses plus a finite set
//! of uniform segments on a bounded interval. The class contains the uniform
//! and Bernoulli priors, degenerate (no-information) laws and everything that
//! fusion produces from them, so moments, partial expectations and the convex
//! order can all be evaluated in closed form instead of on a grid.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::FirmStrategy;

/// Total mass must equal one within this tolerance.
pub const MASS_TOL: f64 = 1e-12;
/// Locations may overshoot the support by this much before being rejected.
const LOCATION_TOL: f64 = 1e-12;
/// Default tolerance for [`ValueDistribution::is_mpc`].
pub const DEFAULT_MPC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Uniform mass spread over the open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

impl Segment {
    pub fn density(&self) -> f64 {
        self.mass / (self.hi - self.lo)
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Fraction of the segment's mass at or below `x`.
    fn fraction_below(&self, x: f64) -> f64 {
        if x <= self.lo {
            0.0
        } else if x >= self.hi {
            1.0
        } else {
            (x - self.lo) / (self.hi - self.lo)
        }
    }

    fn excess(&self, t: f64) -> f64 {
        if t <= self.lo {
            self.mass * (self.mean() - t)
        } else if t >= self.hi {
            0.0
        } else {
            let d = self.hi - t;
            self.mass * d * d / (2.0 * (self.hi - self.lo))
        }
    }
}

/// CDF knot: `below` is F(x-) and `at` is F(x).
#[derive(Debug, Clone, Copy)]
struct Knot {
    x: f64,
    below: f64,
    at: f64,
}

/// Point masses plus piecewise-uniform mass on `[support_lo, support_hi]`.
///
/// Immutable once built. Atoms are sorted and merged by location; segments
/// are sorted and may overlap (their densities add).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub struct ValueDistribution {
    lo: f64,
    hi: f64,
    atoms: Vec<Atom>,
    segments: Vec<Segment>,
    knots: Vec<Knot>,
}

impl PartialEq for ValueDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.lo == other.lo
            && self.hi == other.hi
            && self.atoms == other.atoms
            && self.segments == other.segments
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionRepr {
    support: [f64; 2],
    #[serde(default)]
    atoms: Vec<[f64; 2]>,
    #[serde(default)]
    segments: Vec<[f64; 3]>,
}

impl TryFrom<DistributionRepr> for ValueDistribution {
    type Error = Error;

    fn try_from(repr: DistributionRepr) -> Result<Self> {
        ValueDistribution::new(
            (repr.support[0], repr.support[1]),
            repr.atoms.iter().map(|a| (a[0], a[1])),
            repr.segments.iter().map(|s| (s[0], s[1], s[2])),
        )
    }
}

impl From<ValueDistribution> for DistributionRepr {
    fn from(d: ValueDistribution) -> Self {
        DistributionRepr {
            support: [d.lo, d.hi],
            atoms: d.atoms.iter().map(|a| [a.location, a.mass]).collect(),
            segments: d.segments.iter().map(|s| [s.lo, s.hi, s.mass]).collect(),
        }
    }
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("{what} is not finite")))
    }
}

impl ValueDistribution {
    /// Builds and validates a distribution. Zero-mass pieces are dropped and
    /// atoms sharing a location are merged.
    pub fn new(
        support: (f64, f64),
        atoms: impl IntoIterator<Item = (f64, f64)>,
        segments: impl IntoIterator<Item = (f64, f64, f64)>,
    ) -> Result<Self> {
        let (lo, hi) = support;
        check_finite("support bound", lo)?;
        check_finite("support bound", hi)?;
        if lo >= hi {
            return Err(Error::InvalidDistribution(format!(
                "empty support [{lo}, {hi}]"
            )));
        }
        let inside = |x: f64| -> Result<f64> {
            if x < lo - LOCATION_TOL || x > hi + LOCATION_TOL {
                Err(Error::OutOfSupport { value: x, lo, hi })
            } else {
                Ok(x.clamp(lo, hi))
            }
        };

        let mut merged: Vec<Atom> = Vec::new();
        for (location, mass) in atoms {
            check_finite("atom location", location)?;
            check_finite("atom mass", mass)?;
            if mass < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "negative atom mass {mass} at {location}"
                )));
            }
            let location = inside(location)?;
            if mass > 0.0 {
                merged.push(Atom { location, mass });
            }
        }
        merged.sort_by(|a, b| a.location.total_cmp(&b.location));
        let mut atoms: Vec<Atom> = Vec::with_capacity(merged.len());
        for a in merged {
            match atoms.last_mut() {
                Some(last) if last.location == a.location => last.mass += a.mass,
                _ => atoms.push(a),
            }
        }

        let mut segs = Vec::new();
        for (a, b, mass) in segments {
            check_finite("segment bound", a)?;
            check_finite("segment bound", b)?;
            check_finite("segment mass", mass)?;
            if mass < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "negative segment mass {mass} on ({a}, {b})"
                )));
            }
            let (a, b) = (inside(a)?, inside(b)?);
            if a >= b {
                return Err(Error::InvalidDistribution(format!(
                    "segment ({a}, {b}) is empty"
                )));
            }
            if mass > 0.0 {
                segs.push(Segment { lo: a, hi: b, mass });
            }
        }
        segs.sort_by(|x, y| {
            x.lo.total_cmp(&y.lo)
                .then(x.hi.total_cmp(&y.hi))
                .then(x.mass.total_cmp(&y.mass))
        });

        let total: f64 = atoms.iter().map(|a| a.mass).sum::<f64>()
            + segs.iter().map(|s| s.mass).sum::<f64>();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1"
            )));
        }

        let mut dist = ValueDistribution {
            lo,
            hi,
            atoms,
            segments: segs,
            knots: Vec::new(),
        };
        dist.knots = dist.build_knots();
        Ok(dist)
    }

    /// Degenerate law at `mu` on the market's default interval `[0, 1]`.
    pub fn degenerate(mu: f64) -> Result<Self> {
        Self::degenerate_on((0.0, 1.0), mu)
    }

    pub fn degenerate_on(support: (f64, f64), mu: f64) -> Result<Self> {
        if !(mu >= support.0 && mu <= support.1) {
            return Err(Error::OutOfSupport {
                value: mu,
                lo: support.0,
                hi: support.1,
            });
        }
        Self::new(support, [(mu, 1.0)], [])
    }

    /// Uniform law on its own support `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new((lo, hi), [], [(lo, hi, 1.0)])
    }

    /// Two atoms `{0: 1 - mean, 1: mean}` on `[0, 1]`.
    pub fn bernoulli(mean: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mean) {
            return Err(Error::OutOfSupport {
                value: mean,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Self::new((0.0, 1.0), [(0.0, 1.0 - mean), (1.0, mean)], [])
    }

    /// Weighted mixture of distributions, re-expressed on `support`.
    pub fn mixture(support: (f64, f64), parts: &[(f64, &ValueDistribution)]) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut segments = Vec::new();
        for &(w, d) in parts {
            if !(w >= 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "negative mixture weight {w}"
                )));
            }
            atoms.extend(d.atoms.iter().map(|a| (a.location, w * a.mass)));
            segments.extend(d.segments.iter().map(|s| (s.lo, s.hi, w * s.mass)));
        }
        Self::new(support, atoms, segments)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_atomic(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.location).sum::<f64>()
            + self.segments.iter().map(|s| s.mass * s.mean()).sum::<f64>()
    }

    /// `E[max(X - t, 0)]`, exact.
    pub fn expected_excess(&self, t: f64) -> f64 {
        let from_atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.location > t)
            .map(|a| a.mass * (a.location - t))
            .sum();
        from_atoms + self.segments.iter().map(|s| s.excess(t)).sum::<f64>()
    }

    /// Right-continuous CDF.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x < self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        self.atoms
            .iter()
            .take_while(|a| a.location <= x)
            .map(|a| a.mass)
            .sum::<f64>()
            + self
                .segments
                .iter()
                .map(|s| s.mass * s.fraction_below(x))
                .sum::<f64>()
    }

    /// `P(X < x)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        self.atoms
            .iter()
            .take_while(|a| a.location < x)
            .map(|a| a.mass)
            .sum::<f64>()
            + self
                .segments
                .iter()
                .map(|s| s.mass * s.fraction_below(x))
                .sum::<f64>()
    }

    /// `P(X >= t)`, summed directly rather than as `1 - cdf_left`.
    pub fn prob_at_least(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.location >= t)
            .map(|a| a.mass)
            .sum::<f64>()
            + self
                .segments
                .iter()
                .map(|s| s.mass * (1.0 - s.fraction_below(t)))
                .sum::<f64>()
    }

    /// `P(X > t)`.
    pub fn prob_above(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.location > t)
            .map(|a| a.mass)
            .sum::<f64>()
            + self
                .segments
                .iter()
                .map(|s| s.mass * (1.0 - s.fraction_below(t)))
                .sum::<f64>()
    }

    /// Sorted, de-duplicated atom locations and segment endpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| a.location)
            .chain(self.segments.iter().flat_map(|s| [s.lo, s.hi]))
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// The absolutely continuous part as non-overlapping `(lo, hi, density)`
    /// pieces, overlapping segment densities summed.
    pub fn density_pieces(&self) -> Vec<(f64, f64, f64)> {
        let mut cuts: Vec<f64> = self.segments.iter().flat_map(|s| [s.lo, s.hi]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .filter_map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let density: f64 = self
                    .segments
                    .iter()
                    .filter(|s| s.lo < mid && mid < s.hi)
                    .map(|s| s.density())
                    .sum();
                (density > 0.0).then_some((w[0], w[1], density))
            })
            .collect()
    }

    fn build_knots(&self) -> Vec<Knot> {
        self.breakpoints()
            .into_iter()
            .map(|x| {
                let continuous: f64 = self
                    .segments
                    .iter()
                    .map(|s| s.mass * s.fraction_below(x))
                    .sum();
                let atoms_below: f64 = self
                    .atoms
                    .iter()
                    .take_while(|a| a.location < x)
                    .map(|a| a.mass)
                    .sum();
                let atom_at: f64 = self
                    .atoms
                    .iter()
                    .filter(|a| a.location == x)
                    .map(|a| a.mass)
                    .sum();
                Knot {
                    x,
                    below: continuous + atoms_below,
                    at: continuous + atoms_below + atom_at,
                }
            })
            .collect()
    }

    /// Generalised inverse CDF, `inf { x : F(x) >= u }` for `u` in `(0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let knots = &self.knots;
        let i = knots.partition_point(|k| k.at < u);
        if i >= knots.len() {
            return knots.last().map_or(self.hi, |k| k.x);
        }
        let k = knots[i];
        if u > k.below || i == 0 {
            return k.x;
        }
        let prev = knots[i - 1];
        let rise = k.below - prev.at;
        if rise <= 0.0 {
            return k.x;
        }
        let x = prev.x + (u - prev.at) / rise * (k.x - prev.x);
        x.clamp(prev.x, k.x)
    }

    /// One draw by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(1.0 - u)
    }

    /// Law of `X + delta`, re-expressed on `support`.
    pub fn shift(&self, delta: f64, support: (f64, f64)) -> Result<Self> {
        Self::new(
            support,
            self.atoms.iter().map(|a| (a.location + delta, a.mass)),
            self.segments
                .iter()
                .map(|s| (s.lo + delta, s.hi + delta, s.mass)),
        )
    }

    /// Whether `self` is a mean-preserving contraction of `other`.
    ///
    /// Equal means plus `E(X - t)+ <= E(Y - t)+ + tol` for every `t`. The
    /// difference of the two expected-excess functions is piecewise
    /// quadratic, so it is checked at every breakpoint of either law and at
    /// the stationary point of each piece.
    pub fn is_mpc(&self, other: &ValueDistribution, tol: f64) -> Result<bool> {
        if (self.lo - other.lo).abs() > LOCATION_TOL || (self.hi - other.hi).abs() > LOCATION_TOL
        {
            return Err(Error::SupportMismatch(self.lo, self.hi, other.lo, other.hi));
        }
        if (self.mean() - other.mean()).abs() > tol {
            return Ok(false);
        }
        let gap = |t: f64| self.expected_excess(t) - other.expected_excess(t);
        let mut pts = self.breakpoints();
        pts.extend(other.breakpoints());
        pts.push(self.lo);
        pts.push(self.hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();

        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ga, gb) = (gap(a), gap(b));
            if ga > tol || gb > tol {
                return Ok(false);
            }
            let m = 0.5 * (a + b);
            let gm = gap(m);
            if gm > tol {
                return Ok(false);
            }
            // quadratic through (a, ga), (m, gm), (b, gb)
            let h = 0.5 * (b - a);
            let curvature = (ga - 2.0 * gm + gb) / (h * h);
            if curvature < 0.0 {
                let slope = (gb - ga) / (2.0 * h);
                let s = m - slope / curvature;
                if s > a && s < b && gap(s) > tol {
                    return Ok(false);
                }
            }
        }
        if let Some(&p) = pts.first() {
            if gap(p) > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Collapses the sub-measure selected by `spec` to a single atom at its
    /// barycenter, leaving everything else in place.
    pub fn fuse(&self, spec: &FusionSpec) -> Result<Self> {
        spec.validate_within(self.lo, self.hi)?;
        let regions = &spec.regions;

        let mut collected_mass = 0.0;
        let mut collected_moment = 0.0;
        let mut span = (f64::INFINITY, f64::NEG_INFINITY);
        let mut atoms = Vec::with_capacity(self.atoms.len() + 1);
        for a in &self.atoms {
            let fraction = regions
                .iter()
                .find(|r| r.contains(a.location))
                .map_or(0.0, |r| r.fraction);
            let taken = fraction * a.mass;
            collected_mass += taken;
            collected_moment += taken * a.location;
            if taken > 0.0 {
                span = (span.0.min(a.location), span.1.max(a.location));
            }
            atoms.push((a.location, a.mass - taken));
        }

        let mut segments = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            let touched = regions
                .iter()
                .any(|r| r.fraction > 0.0 && r.lo < s.hi && r.hi > s.lo && r.lo < r.hi);
            if !touched {
                segments.push((s.lo, s.hi, s.mass));
                continue;
            }
            let mut cuts = vec![s.lo, s.hi];
            for r in regions {
                for c in [r.lo, r.hi] {
                    if c > s.lo && c < s.hi {
                        cuts.push(c);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let density = s.density();
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mid = 0.5 * (a + b);
                let fraction = regions
                    .iter()
                    .find(|r| r.lo < r.hi && r.lo <= mid && mid <= r.hi)
                    .map_or(0.0, |r| r.fraction);
                let piece = density * (b - a);
                let taken = fraction * piece;
                collected_mass += taken;
                collected_moment += taken * mid;
                if taken > 0.0 {
                    span = (span.0.min(a), span.1.max(b));
                }
                if piece - taken > 0.0 {
                    segments.push((a, b, piece - taken));
                }
            }
        }

        if !(collected_mass > 0.0) {
            return Err(Error::ZeroCollectedMass);
        }
        // rounding can push the ratio outside the collected range
        let barycenter = if span.0 == span.1 {
            span.0
        } else {
            (collected_moment / collected_mass).clamp(span.0, span.1)
        };
        atoms.push((barycenter, collected_mass));
        Self::new((self.lo, self.hi), atoms, segments)
    }
}

/// One fusion region: `fraction` of the mass in the closed interval
/// `[lo, hi]` is collected. `lo == hi` selects a single atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct FusionRegion {
    pub lo: f64,
    pub hi: f64,
    pub fraction: f64,
}

impl From<[f64; 3]> for FusionRegion {
    fn from(v: [f64; 3]) -> Self {
        FusionRegion {
            lo: v[0],
            hi: v[1],
            fraction: v[2],
        }
    }
}

impl From<FusionRegion> for [f64; 3] {
    fn from(r: FusionRegion) -> Self {
        [r.lo, r.hi, r.fraction]
    }
}

impl FusionRegion {
    pub fn new(lo: f64, hi: f64, fraction: f64) -> Self {
        FusionRegion { lo, hi, fraction }
    }

    fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Regions with pairwise disjoint interiors. An atom sitting on a boundary
/// shared by two regions belongs to whichever is listed first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    pub regions: Vec<FusionRegion>,
}

impl FusionSpec {
    pub fn new(regions: Vec<FusionRegion>) -> Self {
        FusionSpec { regions }
    }

    fn validate_within(&self, lo: f64, hi: f64) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::InvalidFusion("no regions".into()));
        }
        for r in &self.regions {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(Error::InvalidFusion(format!(
                    "region [{}, {}] is malformed",
                    r.lo, r.hi
                )));
            }
            if r.lo < lo - LOCATION_TOL || r.hi > hi + LOCATION_TOL {
                return Err(Error::InvalidFusion(format!(
                    "region [{}, {}] leaves support [{lo}, {hi}]",
                    r.lo, r.hi
                )));
            }
            if !(0.0..=1.0).contains(&r.fraction) {
                return Err(Error::InvalidFusion(format!(
                    "fraction {} outside [0, 1]",
                    r.fraction
                )));
            }
        }
        let mut sorted: Vec<&FusionRegion> = self.regions.iter().filter(|r| r.lo < r.hi).collect();
        sorted.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap_or(Ordering::Equal));
        for w in sorted.windows(2) {
            if w[0].hi > w[1].lo {
                return Err(Error::InvalidFusion(format!(
                    "regions [{}, {}] and [{}, {}] overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(())
    }
}

/// Law of the net value `Y = X - P` under a mixed strategy, on `[lo - hi, hi]`
/// (so `[-1, 1]` for the default market interval) or wider if a price
/// exceeds the interval's upper end.
pub fn net_value_mixture(strategy: &FirmStrategy) -> Result<ValueDistribution> {
    let comps = strategy.components();
    let (lo, hi) = comps
        .first()
        .map(|c| c.dist.support())
        .ok_or_else(|| Error::InvalidStrategy("empty mixture".into()))?;
    let max_price = comps.iter().map(|c| c.price).fold(0.0, f64::max);
    let min_price = comps.iter().map(|c| c.price).fold(f64::INFINITY, f64::min);
    let support = (lo - max_price.max(hi), hi - min_price.min(0.0));
    let mut atoms = Vec::new();
    let mut segments = Vec::new();
    for c in comps {
        let w = c.weight;
        atoms.extend(
            c.dist
                .atoms()
                .iter()
                .map(|a| (a.location - c.price, w * a.mass)),
        );
        segments.extend(
            c.dist
                .segments()
                .iter()
                .map(|s| (s.lo - c.price, s.hi - c.price, w * s.mass)),
        );
    }
    ValueDistribution::new(support, atoms, segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson on `f` over `[a, b]`.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    /// Quadrature oracle for `E[max(X - t, 0)]`.
    fn excess_by_quadrature(d: &ValueDistribution, t: f64) -> f64 {
        let atoms: f64 = d
            .atoms()
            .iter()
            .map(|a| a.mass * (a.location - t).max(0.0))
            .sum();
        let cont: f64 = d
            .segments()
            .iter()
            .map(|s| {
                let dens = s.density();
                simpson(&|x: f64| dens * (x - t).max(0.0), s.lo, s.hi, 1e-14)
            })
            .sum();
        atoms + cont
    }

    fn example1_fused() -> ValueDistribution {
        ValueDistribution::uniform(0.0, 1.0)
            .unwrap()
            .fuse(&FusionSpec::new(vec![
                FusionRegion::new(0.75, 1.0, 1.0),
                FusionRegion::new(0.5, 0.75, 1.0),
            ]))
            .unwrap()
    }

    #[test]
    fn means() {
        assert_eq!(ValueDistribution::uniform(0.0, 1.0).unwrap().mean(), 0.5);
        assert_eq!(ValueDistribution::degenerate(0.3).unwrap().mean(), 0.3);
        let two = ValueDistribution::new((0.0, 1.0), [(0.0, 0.5), (1.0, 0.5)], []).unwrap();
        assert_eq!(two.mean(), 0.5);
    }

    #[test]
    fn expected_excess_matches_quadrature() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let oracle = excess_by_quadrature(&u, 0.75);
        assert!((oracle - 1.0 / 32.0).abs() < 1e-12);
        assert!((u.expected_excess(0.75) - oracle).abs() < 1e-12);

        let two = ValueDistribution::new((0.0, 1.0), [(0.0, 0.5), (0.75, 0.5)], []).unwrap();
        let t = 0.75 - 0.125;
        assert!((excess_by_quadrature(&two, t) - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(two.expected_excess(t), 1.0 / 16.0);

        let delta = ValueDistribution::degenerate(0.4).unwrap();
        assert_eq!(delta.expected_excess(0.4), 0.0);
        assert_eq!(delta.expected_excess(0.9), 0.0);

        let mixed = ValueDistribution::new(
            (0.0, 1.0),
            [(0.2, 0.25), (0.9, 0.15)],
            [(0.0, 0.6, 0.3), (0.3, 1.0, 0.3)],
        )
        .unwrap();
        for i in 0..=40 {
            let t = -0.2 + i as f64 * 0.035;
            let q = excess_by_quadrature(&mixed, t);
            assert!((mixed.expected_excess(t) - q).abs() < 1e-11, "t={t}");
        }
    }

    #[test]
    fn excess_left_arm_is_mean_minus_t() {
        let d = example1_fused();
        assert!((d.expected_excess(0.0) - d.mean()).abs() < 1e-15);
        assert!((d.expected_excess(-0.3) - (d.mean() + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn cdf_examples() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.cdf_at(0.25), 0.25);
        assert_eq!(u.cdf_at(-1.0), 0.0);
        assert_eq!(u.cdf_at(1.0), 1.0);
        assert_eq!(ValueDistribution::degenerate(0.5).unwrap().cdf_at(0.49), 0.0);
        assert_eq!(ValueDistribution::degenerate(0.5).unwrap().cdf_at(0.5), 1.0);
        let fused = example1_fused();
        assert!((fused.cdf_at(0.74) - 0.5).abs() < 1e-15);
        assert!((fused.cdf_at(0.75) - 1.0).abs() < 1e-15);
        assert!((fused.cdf_at(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mpc_examples() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let d = ValueDistribution::degenerate(0.5).unwrap();
        assert!(d.is_mpc(&u, DEFAULT_MPC_TOL).unwrap());
        assert!(!u.is_mpc(&d, DEFAULT_MPC_TOL).unwrap());
        assert!(example1_fused().is_mpc(&u, DEFAULT_MPC_TOL).unwrap());
        assert!(u.is_mpc(&u, DEFAULT_MPC_TOL).unwrap());
    }

    #[test]
    fn mpc_catches_interior_violation() {
        // same mean, but the pieces cross inside a segment
        let a = ValueDistribution::new((0.0, 1.0), [], [(0.2, 0.8, 1.0)]).unwrap();
        let b = ValueDistribution::new((0.0, 1.0), [(0.3, 0.5), (0.7, 0.5)], []).unwrap();
        assert!(!a.is_mpc(&b, DEFAULT_MPC_TOL).unwrap());
        assert!(!b.is_mpc(&a, DEFAULT_MPC_TOL).unwrap());
        assert!(ValueDistribution::degenerate(0.5).unwrap().is_mpc(&a, 1e-12).unwrap());
    }

    #[test]
    fn mpc_rejects_mismatched_support() {
        let a = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let b = ValueDistribution::uniform(-1.0, 1.0).unwrap();
        assert!(matches!(a.is_mpc(&b, 1e-9), Err(Error::SupportMismatch(..))));
    }

    #[test]
    fn fuse_example1() {
        let fused = example1_fused();
        assert_eq!(fused.atoms(), &[Atom { location: 0.75, mass: 0.5 }]);
        assert_eq!(fused.segments(), &[Segment { lo: 0.0, hi: 0.5, mass: 0.5 }]);
        assert_eq!(fused.mean(), 0.5);
    }

    #[test]
    fn full_collapse_gives_degenerate() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let d = u
            .fuse(&FusionSpec::new(vec![FusionRegion::new(0.0, 1.0, 1.0)]))
            .unwrap();
        assert_eq!(d, ValueDistribution::degenerate(0.5).unwrap());
    }

    #[test]
    fn fusing_single_atom_is_identity() {
        let f = ValueDistribution::new((0.0, 1.0), [(0.2, 0.4), (0.9, 0.1)], [(0.0, 1.0, 0.5)]).unwrap();
        let spec = FusionSpec::new(vec![
            FusionRegion::new(0.5, 0.8, 0.0),
            FusionRegion::new(0.2, 0.2, 1.0),
        ]);
        assert_eq!(f.fuse(&spec).unwrap(), f);
    }

    #[test]
    fn partial_fraction_keeps_scaled_density() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let f = u
            .fuse(&FusionSpec::new(vec![FusionRegion::new(0.0, 1.0, 0.25)]))
            .unwrap();
        assert_eq!(f.segments(), &[Segment { lo: 0.0, hi: 1.0, mass: 0.75 }]);
        assert_eq!(f.atoms(), &[Atom { location: 0.5, mass: 0.25 }]);
    }

    #[test]
    fn fuse_errors() {
        let f = ValueDistribution::new((0.0, 1.0), [(0.2, 1.0)], []).unwrap();
        let none = FusionSpec::new(vec![FusionRegion::new(0.5, 0.9, 1.0)]);
        assert_eq!(f.fuse(&none), Err(Error::ZeroCollectedMass));
        let overlap = FusionSpec::new(vec![
            FusionRegion::new(0.0, 0.5, 1.0),
            FusionRegion::new(0.4, 0.9, 1.0),
        ]);
        assert!(matches!(f.fuse(&overlap), Err(Error::InvalidFusion(_))));
        let outside = FusionSpec::new(vec![FusionRegion::new(0.5, 1.5, 1.0)]);
        assert!(matches!(f.fuse(&outside), Err(Error::InvalidFusion(_))));
    }

    #[test]
    fn degenerate_construction() {
        let d = ValueDistribution::degenerate(0.0).unwrap();
        assert_eq!(d.atoms(), &[Atom { location: 0.0, mass: 1.0 }]);
        assert!(ValueDistribution::degenerate(1.5).is_err());
        assert!(ValueDistribution::degenerate(f64::NAN).is_err());
    }

    #[test]
    fn construction_merges_and_validates() {
        let d = ValueDistribution::new((0.0, 1.0), [(0.5, 0.25), (0.5, 0.25), (0.1, 0.5)], []).unwrap();
        assert_eq!(d.atoms().len(), 2);
        assert_eq!(d.atoms()[1], Atom { location: 0.5, mass: 0.5 });
        assert!(ValueDistribution::new((0.0, 1.0), [(0.5, 0.9)], []).is_err());
        assert!(ValueDistribution::new((0.0, 1.0), [(1.2, 1.0)], []).is_err());
        assert!(ValueDistribution::new((0.0, 1.0), [], [(0.5, 0.5, 1.0)]).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let f = example1_fused();
        assert_eq!(f.quantile(0.25), 0.25);
        assert_eq!(f.quantile(0.5), 0.5);
        assert_eq!(f.quantile(0.5000001), 0.75);
        assert_eq!(f.quantile(1.0), 0.75);
        let d = ValueDistribution::degenerate(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 0.3);
        }
    }

    #[test]
    fn net_value_examples() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let h = net_value_mixture(&FirmStrategy::pure(0.25, u.clone()).unwrap()).unwrap();
        assert_eq!(h.support(), (-1.0, 1.0));
        assert_eq!(h.segments(), &[Segment { lo: -0.25, hi: 0.75, mass: 1.0 }]);

        let h0 = net_value_mixture(&FirmStrategy::pure(0.0, u.clone()).unwrap()).unwrap();
        assert_eq!(h0.segments(), u.segments());

        let d = ValueDistribution::degenerate(0.5).unwrap();
        let mix = FirmStrategy::new(vec![(0.5, 0.0, d.clone()), (0.5, 0.5, d)]).unwrap();
        let h = net_value_mixture(&mix).unwrap();
        assert_eq!(
            h.atoms(),
            &[Atom { location: 0.0, mass: 0.5 }, Atom { location: 0.5, mass: 0.5 }]
        );
        assert_eq!(h.mean(), 0.25);
    }

    #[test]
    fn json_shape() {
        let f = example1_fused();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"support":[0.0,1.0],"atoms":[[0.75,0.5]],"segments":[[0.0,0.5,0.5]]}"#);
        let back: ValueDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let bad = serde_json::from_str::<ValueDistribution>(r#"{"support":[0,1],"atoms":[[0.5,0.4]]}"#);
        assert!(bad.is_err());
    }
}

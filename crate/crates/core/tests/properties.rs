use proptest::prelude::*;

use psearch::dist::{FusionRegion, FusionSpec, ValueDistribution, DEFAULT_MPC_TOL};
use psearch::market::{simulate_market, FirmCount, FirmStrategy, MarketConfig, OffPathBelief};
use psearch::persuade::{concave_envelope, optimal_splitting, uniform_grid, PayoffCurve};
use psearch::search::{reservation_value, Regime};

fn dist() -> impl Strategy<Value = ValueDistribution> {
    let atoms = prop::collection::vec((0.0..=1.0f64, 0.05..1.0f64), 0..4);
    let segs = prop::collection::vec((0.0..0.95f64, 0.01..1.0f64, 0.05..1.0f64), 0..4);
    (atoms, segs).prop_map(|(atoms, segs)| {
        let mut segs: Vec<(f64, f64, f64)> = segs.into_iter().map(|(a, w, m)| (a, (a + w).min(1.0), m)).collect();
        if atoms.is_empty() && segs.is_empty() {
            segs.push((0.0, 1.0, 1.0));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum::<f64>() + segs.iter().map(|s| s.2).sum::<f64>();
        ValueDistribution::new(
            (0.0, 1.0),
            atoms.into_iter().map(|(x, m)| (x, m / total)),
            segs.into_iter().map(|(a, b, m)| (a, b, m / total)),
        )
        .unwrap()
    })
}

fn spec() -> impl Strategy<Value = FusionSpec> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 1..4).prop_map(|pairs| {
        let mut cuts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        cuts.extend(pairs.iter().map(|p| p.0.max(p.1)));
        cuts.sort_by(f64::total_cmp);
        let fractions = pairs.iter().map(|p| 0.1 + 0.9 * p.1);
        FusionSpec::new(cuts.chunks(2).zip(fractions).map(|(w, f)| FusionRegion::new(w[0], w[1], f)).collect())
    })
}

fn fused(f: &ValueDistribution, s: &FusionSpec) -> Option<ValueDistribution> {
    match f.fuse(s) {
        Ok(g) => Some(g),
        Err(psearch::Error::ZeroCollectedMass) => None,
        Err(e) => panic!("{e}"),
    }
}

fn total_mass(d: &ValueDistribution) -> f64 {
    d.atoms().iter().map(|a| a.mass).sum::<f64>() + d.segments().iter().map(|s| s.mass).sum::<f64>()
}

proptest! {
    #[test]
    fn fusion_preserves_mean_and_contracts(f in dist(), s in spec()) {
        if let Some(g) = fused(&f, &s) {
            prop_assert!((g.mean() - f.mean()).abs() <= 1e-12);
            prop_assert!(g.is_mpc(&f, DEFAULT_MPC_TOL).unwrap());
            prop_assert!((total_mass(&g) - 1.0).abs() <= 1e-12);
            let (lo, hi) = g.support();
            prop_assert!(g.atoms().iter().all(|a| lo <= a.location && a.location <= hi));
            prop_assert!(g.atoms().windows(2).all(|w| w[0].location < w[1].location));
        }
    }

    #[test]
    fn mpc_is_reflexive_and_transitive(f in dist(), s1 in spec(), s2 in spec()) {
        prop_assert!(f.is_mpc(&f, DEFAULT_MPC_TOL).unwrap());
        if let Some(g) = fused(&f, &s1) {
            if let Some(h) = fused(&g, &s2) {
                prop_assert!(h.is_mpc(&g, DEFAULT_MPC_TOL).unwrap());
                prop_assert!(h.is_mpc(&f, DEFAULT_MPC_TOL).unwrap());
            }
        }
    }

    #[test]
    fn expected_excess_is_decreasing_and_convex(f in dist()) {
        let (lo, _) = f.support();
        prop_assert!((f.expected_excess(lo) - (f.mean() - lo)).abs() <= 1e-12);
        let h = 1.0 / 256.0;
        let e: Vec<f64> = (0..=256).map(|i| f.expected_excess(i as f64 * h)).collect();
        for w in e.windows(3) {
            prop_assert!(w[1] <= w[0] + 1e-12);
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12);
        }
    }

    #[test]
    fn cdf_integrates_to_upper_minus_mean(f in dist()) {
        let (lo, hi) = f.support();
        let n = 100_000;
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..n).map(|i| f.cdf_at(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h;
        // each jump costs at most one cell of midpoint error
        let jumps = f.atoms().len() as f64 + 1.0;
        prop_assert!((integral - (hi - f.mean())).abs() <= jumps * h);
    }

    #[test]
    fn reservation_hits_cost_and_falls_with_price_and_cost(
        f in dist(), p in 0.0..0.5f64, dp in 0.01..0.2f64, c in 0.005..0.2f64, dc in 0.005..0.1f64,
    ) {
        let z = reservation_value(&f, p, c).unwrap();
        prop_assert!((f.expected_excess(p + z) - c).abs() <= 1e-10);
        prop_assert!(reservation_value(&f, p + dp, c).unwrap() < z);
        prop_assert!(reservation_value(&f, p, c + dc).unwrap() < z);
    }

    #[test]
    fn envelope_is_concave_majorant_and_splitting_is_plausible(
        raw in prop::collection::vec(-1.0..1.0f64, 65), mean in 0.0..=1.0f64,
    ) {
        let grid = uniform_grid(1.0 / 64.0).unwrap();
        let curve = PayoffCurve::new(grid.clone(), raw.clone()).unwrap();
        let env = concave_envelope(&curve);
        let v = env.curve.values();
        for (a, b) in v.iter().zip(&raw) {
            prop_assert!(*a >= *b - 1e-12);
        }
        for &i in &env.vertices {
            prop_assert_eq!(v[i], raw[i]);
        }
        for w in v.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-12);
        }
        let split = optimal_splitting(&curve, mean).unwrap();
        prop_assert!((split.value - env.value_at(mean)).abs() <= 1e-12);
        let weight: f64 = split.posteriors.iter().map(|p| p.weight).sum();
        let centre: f64 = split.posteriors.iter().map(|p| p.weight * p.location).sum();
        prop_assert!(split.posteriors.iter().all(|p| p.weight >= 0.0));
        prop_assert!((weight - 1.0).abs() <= 1e-9);
        prop_assert!((centre - mean).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn market_accounting_identity(
        f in dist(), s in spec(), p in 0.0..0.6f64, c in 0.005..0.1f64, posted in any::<bool>(), seed in 0..1000u64,
    ) {
        let g = fused(&f, &s).unwrap_or_else(|| f.clone());
        let conj = FirmStrategy::new(vec![(0.5, p, f.clone()), (0.5, p / 2.0, g)]).unwrap();
        let config = MarketConfig {
            n: FirmCount::Finite(3),
            prior: f,
            cost: c,
            regime: if posted { Regime::Posted } else { Regime::Hidden },
            off_path_belief: OffPathBelief::Uninformative,
            trials: 4000,
            seed,
        };
        let out = simulate_market(&config, &vec![conj.clone(); 3], &conj).unwrap();
        let profits: f64 = out.firms.iter().map(|f| f.profit.mean).sum();
        let total = out.consumer_surplus.mean + profits + out.search_cost.mean;
        // holds trial by trial, so only rounding separates the two sides
        prop_assert!((total - out.purchased_value.mean).abs() <= 1e-9);
        prop_assert!(out.mean_visits >= 1.0 && out.mean_visits <= 3.0);
    }
}

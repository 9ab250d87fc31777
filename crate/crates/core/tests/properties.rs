use proptest::prelude::*;

use minimax_mfg::measures::{
    decompose_to_empirical, w1_distance, w1_distance_with, ParticleMeasure, TransportMethod, TransportOptions,
};

fn measure_1d(max_atoms: usize) -> impl Strategy<Value = ParticleMeasure> {
    prop::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 1..=max_atoms).prop_map(|atoms| {
        let (xs, ws): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        ParticleMeasure::normalized(1, xs, ws).unwrap()
    })
}

fn measure_2d(max_atoms: usize) -> impl Strategy<Value = ParticleMeasure> {
    prop::collection::vec(((-2.0f64..2.0, -2.0f64..2.0), 0.01f64..1.0), 1..=max_atoms).prop_map(|atoms| {
        let mut coords = Vec::new();
        let mut ws = Vec::new();
        for ((x, y), w) in atoms {
            coords.extend([x, y]);
            ws.push(w);
        }
        ParticleMeasure::normalized(2, coords, ws).unwrap()
    })
}

const SIMPLEX: TransportOptions = TransportOptions {
    method: TransportMethod::NetworkSimplex,
    support_cap: 1 << 20,
};

/// Piecewise-linear function through `knots` with slopes clipped to `[-1, 1]`.
fn lipschitz_pl(knots: &[(f64, f64)]) -> impl Fn(f64) -> f64 + '_ {
    move |x| {
        let mut acc = 0.0;
        let mut prev = -3.0;
        for (at, slope) in knots {
            let end = x.min(*at);
            if end > prev {
                acc += slope * (end - prev);
            }
            prev = prev.max(*at);
        }
        acc
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_symmetric(a in measure_2d(12), b in measure_2d(12)) {
        // The simplex pivots in a different order, so only up to rounding.
        let (ab, ba) = (w1_distance(&a, &b).unwrap(), w1_distance(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-12, "{} vs {}", ab, ba);
    }

    #[test]
    fn w1_triangle_inequality(a in measure_2d(10), b in measure_2d(10), c in measure_2d(10)) {
        let ab = w1_distance(&a, &b).unwrap();
        let bc = w1_distance(&b, &c).unwrap();
        let ac = w1_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9, "{} > {} + {}", ac, ab, bc);
    }

    #[test]
    fn w1_vanishes_on_identical_measures(a in measure_2d(15)) {
        prop_assert!(w1_distance(&a, &a).unwrap() <= 1e-12);
    }

    #[test]
    fn quantile_matches_network_simplex(a in measure_1d(30), b in measure_1d(30)) {
        let q = w1_distance(&a, &b).unwrap();
        let lp = w1_distance_with(&a, &b, &SIMPLEX).unwrap();
        prop_assert!((q - lp).abs() <= 1e-9, "{} vs {}", q, lp);
    }

    #[test]
    fn duality_lower_bound(
        a in measure_1d(20),
        b in measure_1d(20),
        mut knots in prop::collection::vec((-3.0f64..3.0, -1.0f64..=1.0), 1..6),
    ) {
        knots.sort_by(|p, q| p.0.total_cmp(&q.0));
        let phi = lipschitz_pl(&knots);
        let gap = a.integrate(|x| phi(x[0])) - b.integrate(|x| phi(x[0]));
        prop_assert!(gap.abs() <= w1_distance(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn push_forward_preserves_mass(a in measure_2d(20), shift in -1.0f64..1.0) {
        let moved = a.push_forward(|x| vec![x[0] + shift, x[1].abs()], 1e-3).unwrap();
        prop_assert!((moved.total_mass() - 1.0).abs() <= 1e-12);
        prop_assert!((moved.mean()[0] - a.mean()[0] - shift).abs() <= 1e-9);
    }

    #[test]
    fn decomposition_identities(
        m0 in measure_1d(25),
        sites in prop::collection::vec(-3.0f64..3.0, 1..10),
    ) {
        let sites: Vec<Vec<f64>> = sites.into_iter().map(|s| vec![s]).collect();
        let n = sites.len() as f64;
        let d = decompose_to_empirical(&m0, &sites).unwrap();
        prop_assert!(w1_distance(&d.reconstruct().unwrap(), &m0).unwrap() <= 1e-9);
        for part in &d.parts {
            prop_assert!((part.total_mass() - 1.0).abs() <= 1e-12);
        }
        prop_assert!((d.transport_cost(&sites) - d.distance).abs() <= 1e-9);
        let spread = d.max_part_spread(&sites);
        prop_assert!(d.distance <= spread + 1e-12);
        prop_assert!(spread <= n * d.distance + 1e-9);
    }
}

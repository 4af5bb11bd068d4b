use nalgebra::DMatrix;
use proptest::prelude::*;

use ppsync_core::graph::{max_singular_value, min_eigenvalue, min_singular_value};
use ppsync_core::ppf::sign;
use ppsync_core::{
    build_matrices, erf, global_error, is_strongly_connected, r_factor, smooth_s, transform,
    weighted_q_matrix, Digraph, PerformanceFunction, TransformSpec, TransformVariant,
};

const DELTA_HI: f64 = 7.0;
const DELTA_LO: f64 = 1.0;

fn spec(variant: TransformVariant) -> TransformSpec {
    TransformSpec::new(DELTA_HI, DELTA_LO, variant, 20.0).unwrap()
}

/// Directed graph with a random spanning cycle (so it is strongly connected)
/// plus random extra edges, and at least one pinned agent.
fn digraph() -> impl Strategy<Value = Digraph> {
    (2usize..=7).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(0.1f64..2.0, n),
            prop::collection::vec(prop::option::weighted(0.3, 0.1f64..2.0), n * n),
            prop::collection::vec(prop::option::weighted(0.3, 0.1f64..2.0), n),
            0..n,
            0.1f64..2.0,
        )
            .prop_map(|(n, cycle, extra, pins, pinned, b)| {
                let mut rows = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            rows[i][j] = extra[i * n + j].unwrap_or(0.0);
                        }
                    }
                    rows[i][(i + 1) % n] = cycle[i];
                }
                let mut pinning: Vec<f64> = pins.iter().map(|p| p.unwrap_or(0.0)).collect();
                pinning[pinned] = b;
                Digraph::from_rows(&rows, &pinning).unwrap()
            })
    })
}

/// Undirected weighted graph: a ring plus random chords, mirrored.
fn undirected() -> impl Strategy<Value = Digraph> {
    digraph().prop_map(|g| {
        let n = g.n_agents();
        let a = g.adjacency();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)].max(a[(j, i)])).collect())
            .collect();
        Digraph::from_rows(&rows, g.pinning().as_slice()).unwrap()
    })
}

fn sym_err(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn laplacian_rows_sum_to_zero(g in digraph()) {
        prop_assert!(is_strongly_connected(&g));
        let gm = build_matrices(&g).unwrap();
        for i in 0..gm.n_agents() {
            let s: f64 = gm.laplacian.row(i).iter().sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn weighting_vector_and_p_are_positive(g in digraph()) {
        let gm = build_matrices(&g).unwrap();
        let residual = &gm.lb * &gm.q - DMatrix::from_element(gm.n_agents(), 1, 1.0);
        prop_assert!(residual.abs().max() < 1e-10);
        for i in 0..gm.n_agents() {
            prop_assert!(gm.q[i] > 0.0);
            prop_assert!(gm.p(i) > 0.0);
            prop_assert!((gm.p(i) * gm.q[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn q_matrices_are_symmetric(g in digraph(), r in prop::collection::vec(0.1f64..10.0, 7)) {
        let gm = build_matrices(&g).unwrap();
        prop_assert!(sym_err(&gm.q_matrix) < 1e-12 * gm.q_matrix.abs().max().max(1.0));
        let wq = weighted_q_matrix(&gm, &r[..gm.n_agents()]).unwrap();
        prop_assert!(sym_err(&wq) < 1e-12 * wq.abs().max().max(1.0));
    }

    #[test]
    fn q_matrix_positive_definite_on_undirected_graphs(
        g in undirected(),
        r in prop::collection::vec(0.1f64..10.0, 7),
    ) {
        let gm = build_matrices(&g).unwrap();
        prop_assert!(min_eigenvalue(&gm.q_matrix) > 0.0);
        let wq = weighted_q_matrix(&gm, &r[..gm.n_agents()]).unwrap();
        prop_assert!(sym_err(&wq) < 1e-12 * wq.abs().max().max(1.0));
    }

    #[test]
    fn tracking_error_bounded_by_sync_error(
        g in digraph(),
        x in prop::collection::vec(-5.0f64..5.0, 14),
        x0 in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let gm = build_matrices(&g).unwrap();
        let n = gm.n_agents();
        let x = &x[..2 * n];
        let e = global_error(&gm, x, &x0).unwrap();
        let e_norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dev = (0..2 * n).map(|k| (x[k] - x0[k % 2]).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dev <= gm.tracking_bound(e_norm) * (1.0 + 1e-9) + 1e-12);
        prop_assert!(min_singular_value(&gm.lb) <= max_singular_value(&gm.lb));
    }

    #[test]
    fn switched_transforms_are_odd(z in -6.99f64..6.99, rho in 0.05f64..7.0) {
        for v in [TransformVariant::SignSwitched, TransformVariant::ErfSmoothed] {
            let s = spec(v);
            let a = transform(&s, z * rho, rho).unwrap();
            let b = transform(&s, -z * rho, rho).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn sign_switched_increases_on_each_branch(z1 in 1e-6f64..6.99, z2 in 1e-6f64..6.99, neg in any::<bool>()) {
        prop_assume!((z1 - z2).abs() > 1e-9);
        let s = spec(TransformVariant::SignSwitched);
        let (lo, hi) = if z1 < z2 { (z1, z2) } else { (z2, z1) };
        let (lo, hi) = if neg { (-hi, -lo) } else { (lo, hi) };
        prop_assert!(transform(&s, lo, 1.0).unwrap() < transform(&s, hi, 1.0).unwrap());
    }

    #[test]
    fn inverse_map_round_trips_below_rounding_limit(eps in -0.9729f64..9.0, rho in 0.05f64..7.0) {
        // eps* = 0.5 ln(delta_lo / delta_hi) = -0.97296...
        let s = spec(TransformVariant::SignSwitched);
        let e = rho * smooth_s(&s, eps);
        prop_assume!(e > 0.0);
        let back = transform(&s, e, rho).unwrap();
        prop_assert!((back - eps).abs() <= 1e-9 * eps.abs().max(1e-3), "eps {eps} -> {back}");
    }

    #[test]
    fn normalized_erf_matches_sign_away_from_zero(z in 0.2f64..6.99, neg in any::<bool>()) {
        let z = if neg { -z } else { z };
        let erf_spec = spec(TransformVariant::ErfSmoothed).with_normalized_erf_gain(true);
        let a = transform(&erf_spec, z, 1.0).unwrap();
        let b = transform(&spec(TransformVariant::SignSwitched), z, 1.0).unwrap();
        prop_assert!((a - b).abs() <= 2e-7 * b.abs(), "z {z}: {a} vs {b}");
    }

    #[test]
    fn r_factor_positive_inside_envelope(z in -6.999f64..6.999, rho in 0.05f64..7.0) {
        for v in [TransformVariant::SignSwitched, TransformVariant::ErfSmoothed] {
            let r = r_factor(&spec(v), z * rho, rho).unwrap();
            prop_assert!(r > 0.0 && r.is_finite());
        }
    }

    #[test]
    fn out_of_envelope_is_rejected(z in 7.0f64..50.0, rho in 0.05f64..7.0) {
        let s = spec(TransformVariant::ErfSmoothed);
        prop_assert!(transform(&s, z * rho, rho).is_err());
        prop_assert!(transform(&s, -z * rho, rho).is_err());
    }

    #[test]
    fn envelope_decreases_to_its_limit(
        rho_inf in 0.01f64..1.0,
        gap in 0.1f64..10.0,
        ell in 0.1f64..10.0,
        t in 0.0f64..5.0,
        dt in 1e-3f64..1.0,
    ) {
        // Past ell * t ~ 30 the decay is below one ulp of rho_inf.
        prop_assume!(ell * (t + dt) < 25.0);
        let pf = PerformanceFunction::new(rho_inf + gap, rho_inf, ell).unwrap();
        let a = pf.rho(t).unwrap();
        let b = pf.rho(t + dt).unwrap();
        prop_assert!(b < a);
        prop_assert!(b > rho_inf);
        prop_assert!(pf.rho_dot(t).unwrap() < 0.0);
    }

    #[test]
    fn erf_is_odd_and_bounded(x in -10.0f64..10.0) {
        prop_assert_eq!(erf(-x), -erf(x));
        prop_assert!(erf(x).abs() <= 1.0);
        prop_assert_eq!(sign(erf(x)), sign(x));
    }
}

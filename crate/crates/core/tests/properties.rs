use proptest::prelude::*;

use fenep_core::energy::{audit, slack, EnergyTerms};
use fenep_core::mesh::TriMesh;
use fenep_core::params::TimeSchedule;
use fenep_core::scheme_p1diff::{lambda_matrix, lambda_scalar, lambda_transport_scalar};
use fenep_core::tensor::{beta_delta, entropy_density, k_delta, RegParams, SymTensor2};

fn sym(r: f64) -> impl Strategy<Value = SymTensor2> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| SymTensor2::new(a, b, c))
}

fn delta() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.5, 0.25, 0.1, 0.01])
}

proptest! {
    #[test]
    fn spectral_map_of_identity_function_is_exact(phi in sym(10.0)) {
        let back = phi.map(|x| x);
        prop_assert!((back - phi).norm() <= 1e-13 * (1.0 + phi.norm()));
    }

    #[test]
    fn eigenvalues_bracket_diagonal(phi in sym(10.0)) {
        prop_assert!(phi.min_eig() <= phi.xx.min(phi.yy) + 1e-12);
        prop_assert!(phi.max_eig() >= phi.xx.max(phi.yy) - 1e-12);
        prop_assert!((phi.min_eig() + phi.max_eig() - phi.trace()).abs() <= 1e-12 * (1.0 + phi.norm()));
    }

    #[test]
    fn scalar_lambda_is_between_betas(a in -2.0..5.0f64, c in -2.0..5.0f64, d in delta()) {
        let l = lambda_scalar(a, c, d);
        let (x, y) = (beta_delta(a, d), beta_delta(c, d));
        prop_assert!(l >= x.min(y) * (1.0 - 1e-14) && l <= x.max(y) * (1.0 + 1e-14));
        prop_assert!((lambda_scalar(a, c, d) - lambda_scalar(c, a, d)).abs() <= 1e-14 * l);
    }

    #[test]
    fn scalar_lambda_chain_rule(a in -2.0..5.0f64, c in -2.0..5.0f64, d in delta()) {
        // Λ (1/β_a − 1/β_c) = −ln β_a + ln β_c
        let (x, y) = (beta_delta(a, d), beta_delta(c, d));
        let l = lambda_scalar(a, c, d);
        let lhs = l * (1.0 / x - 1.0 / y);
        prop_assert!((lhs - (y.ln() - x.ln())).abs() <= 1e-12 * (1.0 + l / x.min(y)));
    }

    #[test]
    fn matrix_lambda_is_convex_combination(a in sym(4.0), c in sym(4.0), d in delta()) {
        let (l, lam) = lambda_matrix(a, c, d);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&lam));
        let comb = a.beta_delta(d) * (1.0 - lam) + c.beta_delta(d) * lam;
        prop_assert!((l - comb).norm() <= 1e-12 * (1.0 + comb.norm()));
    }

    #[test]
    fn matrix_lambda_chain_rule(a in sym(4.0), c in sym(4.0), d in delta()) {
        let (l, _) = lambda_matrix(a, c, d);
        let dg = a.g_delta_prime(d) - c.g_delta_prime(d);
        let dh = a.trace_h_of_g_prime(d) - c.trace_h_of_g_prime(d);
        let scale = 1.0 + l.norm() * dg.norm() + dh.abs();
        prop_assert!((l.ddot(dg) - dh).abs() <= 1e-12 * scale);
    }

    #[test]
    fn constant_field_transport_is_beta(v in -1.0..3.0f64, k in 0usize..32, d in delta()) {
        let m = TriMesh::structured_unit_square(4).unwrap();
        let l = lambda_transport_scalar(&m, k, [v; 3], d).unwrap();
        let b = beta_delta(v, d);
        prop_assert!((l[(0, 0)] - b).abs() < 1e-13 && (l[(1, 1)] - b).abs() < 1e-13);
        prop_assert!(l[(0, 1)].abs() < 1e-13 && l[(1, 0)].abs() < 1e-13);
    }

    #[test]
    fn k_squared_trace_never_exceeds_b(phi in sym(20.0), eta in -30.0..30.0f64, d in delta(), b in 1.0..50.0f64) {
        let rp = RegParams::new(d, b).unwrap();
        let k = k_delta(phi, eta, &rp);
        prop_assert!(k * k * phi.beta_delta(d).trace() <= b * (1.0 + 1e-14));
    }

    #[test]
    fn oldroyd_b_entropy_is_nonnegative_and_zero_at_identity(s in 0.1..3.0f64, d in delta()) {
        let rp = RegParams::oldroyd_b(d).unwrap();
        let phi = SymTensor2::scaled_identity(s);
        let e = entropy_density(phi, phi.trace(), &rp);
        prop_assert!(e >= -1e-14);
        prop_assert!(entropy_density(SymTensor2::identity(), 2.0, &rp).abs() < 1e-14);
    }

    #[test]
    fn slack_floor_and_growth(tol in 1e-14..1e-6f64, fa in -1e3..1e3f64, fb in -1e3..1e3f64) {
        let s = slack(tol, fb, fa);
        prop_assert!(s >= 1e-8);
        prop_assert!(s >= 100.0 * tol * (fa.abs() + fb.abs() + 1.0) * (1.0 - 1e-15));
    }

    #[test]
    fn audit_passes_iff_margin_nonnegative(f0 in 0.0..10.0f64, f1 in 0.0..10.0f64, dis in 0.0..5.0f64) {
        let terms = EnergyTerms { f_before: f0, kinetic: f1, viscous: dis, ..Default::default() };
        let r = audit(&terms, 1e-10);
        prop_assert_eq!(r.pass, f0 + r.slack - f1 - dis >= 0.0);
    }

    #[test]
    fn mesh_text_roundtrip(n in 1usize..7) {
        let m = TriMesh::structured_unit_square(n).unwrap();
        let back = TriMesh::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(back.vertices(), m.vertices());
        prop_assert_eq!(back.cells(), m.cells());
        prop_assert!((m.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_schedule_reaches_final_time(dt in 1e-3..2.0f64, n in 1usize..200) {
        let s = TimeSchedule::uniform(dt, n).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!((s.final_time() - dt * n as f64).abs() <= 1e-12 * dt * n as f64);
    }
}

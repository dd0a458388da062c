mod common;

use safe_cddp::constraints::{inv_normal_cdf, normal_cdf};

#[test]
fn median_is_exactly_zero() {
    assert_eq!(inv_normal_cdf(0.5).unwrap(), 0.0);
}

#[test]
fn quantiles_match_bisection_oracle() {
    for (beta, rounded) in [(0.9, 1.281551566), (0.95, 1.644853627), (0.99, 2.326347874)] {
        let oracle = common::quantile_oracle(beta);
        let got = inv_normal_cdf(beta).unwrap();
        assert!((got - oracle).abs() <= 1e-9, "β={beta}: {got} vs {oracle}");
        assert!((got - rounded).abs() <= 1e-9, "β={beta}: {got} vs {rounded}");
    }
}

#[test]
fn cdf_agrees_with_quadrature() {
    for i in -40..=40 {
        let z = i as f64 * 0.1;
        assert!((normal_cdf(z) - common::normal_cdf_oracle(z)).abs() <= 1e-12, "z={z}");
    }
}

#[test]
fn probabilities_outside_unit_interval_rejected() {
    for beta in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(inv_normal_cdf(beta).is_err(), "β={beta}");
    }
}

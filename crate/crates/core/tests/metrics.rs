use proptest::prelude::*;
use safe_cddp::sim::metrics_from_counts;
use safe_cddp::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn table_invariants_hold(counts in prop::collection::vec(0usize..30, 1..120)) {
        let row = metrics_from_counts(&counts).unwrap();
        let total: usize = counts.iter().sum();
        prop_assert_eq!(row.episodes, counts.len());
        prop_assert!(row.violated <= row.episodes);
        prop_assert_eq!(row.collisions, total);
        if row.violated > 0 {
            prop_assert!(row.total_avg <= row.avg_in_violated);
            let a = row.total_avg * row.episodes as f64;
            let b = row.avg_in_violated * row.violated as f64;
            prop_assert!((a - b).abs() <= 1e-12 * total.max(1) as f64);
            prop_assert!((a - total as f64).abs() <= 1e-12 * total as f64);
        } else {
            prop_assert_eq!(row.avg_in_violated, 0.0);
            prop_assert_eq!(row.total_avg, 0.0);
        }
    }
}

#[test]
fn published_quadrotor_row_is_self_consistent() {
    // 66 of 100 episodes violated with 376 collisions in total.
    let mut counts = vec![0usize; 100];
    for (i, c) in counts.iter_mut().take(66).enumerate() {
        *c = if i < 46 { 6 } else { 5 };
    }
    let row = metrics_from_counts(&counts).unwrap();
    assert_eq!((row.violated, row.collisions), (66, 376));
    assert_eq!(format!("{:.1}", row.avg_in_violated), "5.7");
    assert_eq!(format!("{:.2}", row.total_avg), "3.76");
    // 66·5.7 vs 3.76·100 differ only through the one- and two-decimal rounding.
    let gap: f64 = 66.0 * 5.7 - 3.76 * 100.0;
    assert!(gap.abs() <= 66.0 * 0.05 + 100.0 * 0.005);
}

#[test]
fn no_episodes_is_a_contract_error() {
    assert!(matches!(metrics_from_counts(&[]), Err(Error::Contract(_))));
}

use std::time::Instant;

use safe_cddp::constraints::TightenedConstraintSet;
use safe_cddp::ddp::{backward_pass, forward_pass, PassOptions};
use safe_cddp::scenario::load_scenario;

#[test]
fn diffdrive_iteration_under_100_ms() {
    let scenario = load_scenario("diffdrive").unwrap();
    let problem = scenario.problem().unwrap();
    let init = problem.initialize().unwrap();
    assert_eq!(init.horizon(), 90);
    let tight = TightenedConstraintSet::untightened(problem.set.clone(), init.horizon() + 1);
    let opts = PassOptions::default();
    let radius = (&problem.set.u_max - &problem.set.u_min).max() / 4.0;
    let mut ms = Vec::new();
    for _ in 0..7 {
        let t0 = Instant::now();
        let bp = backward_pass(&problem.model, &problem.cost, &tight, &init, None, &opts).unwrap();
        let fp = forward_pass(&problem.model, &problem.cost, &tight, &init, &bp, radius, &opts).unwrap();
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
        assert!(fp.traj.cost.is_finite());
    }
    ms.sort_by(f64::total_cmp);
    let median = ms[ms.len() / 2];
    assert!(median <= 100.0, "median {median:.2} ms over {ms:?}");
}

use std::f64::consts::FRAC_PI_2;

use hallway_reach::dynamics::{integrate_step, CarState, StateBox};
use hallway_reach::fixtures;
use hallway_reach::interval::Interval;
use hallway_reach::lidar::raycast_scan;
use hallway_reach::reach::{
    containment_audit, step_reach, subdivide_window, verify, verify_subset, Budget, ReachPath, Verdict,
    VerificationReport, VerifyOptions,
};
use hallway_reach::scenario::Scenario;
use hallway_reach::track::{wall_segments, Leg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let sc = Scenario::single_turn();
    let c = fixtures::centering_controller(21);
    let opts = VerifyOptions::new(0.005);
    let a = pool(1).install(|| verify(&sc, &c, &opts)).unwrap();
    let b = pool(3).install(|| verify(&sc, &c, &opts)).unwrap();
    let again = pool(1).install(|| verify(&sc, &c, &opts)).unwrap();
    assert_eq!(a.to_json_pretty(), b.to_json_pretty());
    assert_eq!(a.to_json_pretty(), again.to_json_pretty());
    assert_eq!(a.subsets.len(), 40);
    assert_eq!(a.overall, Verdict::Safe);
    // Aggregates are a function of the subset rows.
    assert_eq!(a.recomputed(), a);
    let parsed: VerificationReport = serde_json::from_str(&a.to_json_pretty()).unwrap();
    assert_eq!(parsed.to_json_pretty(), a.to_json_pretty());
}

#[test]
fn live_paths_never_exceed_the_cap() {
    let sc = Scenario::single_turn();
    let c = fixtures::sensitive_controller(21);
    let cap = sc.reach.max_live_paths;
    for l in subdivide_window(&sc, 0.005).unwrap().into_iter().step_by(8) {
        let v = verify_subset(&sc, &c, 0, l, &Budget::default()).unwrap();
        assert!(
            v.path_count_per_step.iter().all(|&n| (1..=cap).contains(&n)),
            "{:?}",
            v.path_count_per_step
        );
        assert_eq!(v.max_paths, *v.path_count_per_step.iter().max().unwrap());
        assert_ne!(v.verdict, Verdict::Unsafe);
    }
}

#[test]
fn a_single_start_follows_a_single_path_through_the_turn() {
    let sc = Scenario::single_turn();
    let c = fixtures::centering_controller(21);
    for l in [-0.1, -0.037, 0.0, 0.052, 0.1] {
        let v = verify_subset(&sc, &c, 0, [l, l], &Budget::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Safe);
        assert_eq!(v.path_count_per_step.len(), sc.steps());
        assert!(
            v.path_count_per_step.iter().all(|&n| n == 1),
            "{l}: {:?}",
            v.path_count_per_step
        );
        assert_eq!(v.reach_tube.last().unwrap()[0].leg, 1);
    }
}

#[test]
fn halves_of_safe_subsets_stay_safe() {
    let sc = Scenario::single_turn();
    let c = fixtures::centering_controller(21);
    for l in subdivide_window(&sc, 0.005).unwrap().into_iter().step_by(5) {
        assert_eq!(
            verify_subset(&sc, &c, 0, l, &Budget::default()).unwrap().verdict,
            Verdict::Safe
        );
        let mid = 0.5 * (l[0] + l[1]);
        for h in [[l[0], mid], [mid, l[1]]] {
            assert_eq!(
                verify_subset(&sc, &c, 0, h, &Budget::default()).unwrap().verdict,
                Verdict::Safe
            );
        }
    }
}

#[test]
fn refinement_recovers_unknown_subsets() {
    let sc = Scenario::single_turn();
    let c = fixtures::sensitive_controller(21);
    let mut s = sc.clone();
    s.initial_lateral_window = 0.004;
    assert_eq!(
        verify(&s, &c, &VerifyOptions::new(0.004)).unwrap().overall,
        Verdict::Unknown
    );
    let mut opts = VerifyOptions::new(0.004);
    opts.refine_depth = 2;
    let r = verify(&s, &c, &opts).unwrap();
    let top = &r.subsets[0];
    assert!(!top.children.is_empty());
    let leaves = top.leaves();
    let all_safe = leaves.iter().all(|v| v.verdict == Verdict::Safe);
    assert_eq!(top.verdict == Verdict::Safe, all_safe);
    let w: f64 = leaves.iter().map(|v| v.subset_interval[1] - v.subset_interval[0]).sum();
    assert!((w - 0.004).abs() < 1e-12);
    assert_eq!(leaves.len(), 4);
    assert_eq!(r.overall, top.verdict);
}

#[test]
fn audit_detects_tubes_that_are_too_tight() {
    let sc = Scenario::single_turn();
    let c = fixtures::centering_controller(21);
    let report = verify(&sc, &c, &VerifyOptions::new(0.005)).unwrap();
    let ok = containment_audit(&report, &c, &sc, 30, 1).unwrap();
    assert_eq!(ok.violations, 0);
    assert_eq!(ok.trajectories, 40 * 32);
    assert_eq!(ok.states_checked, 40 * 32 * (sc.steps() + 1));

    let mut wide = report.clone();
    let mut tight = report.clone();
    for (sw, st) in wide.subsets.iter_mut().zip(tight.subsets.iter_mut()) {
        for (bw, bt) in sw
            .reach_tube
            .iter_mut()
            .flatten()
            .zip(st.reach_tube.iter_mut().flatten())
        {
            for d in 0..4 {
                let iv = bw.bounds[d];
                bw.bounds[d] = Interval::new(iv.lo - 0.01, iv.hi + 0.01);
                bt.bounds[d] = Interval::point(iv.mid());
            }
        }
    }
    assert_eq!(containment_audit(&wide, &c, &sc, 30, 1).unwrap().violations, 0);
    assert!(containment_audit(&tight, &c, &sc, 30, 1).unwrap().violations > 0);
}

/// Boxes approaching the corner, positioned so that some ray sweeps across
/// the inner corner within the box: the scan splits into several cases and
/// every sampled one-step successor must land in one of them.
#[test]
fn case_splits_cover_every_sampled_successor() {
    let sc = Scenario::single_turn();
    let c = fixtures::centering_controller(21);
    let segs = wall_segments(&sc.track).unwrap();
    let (w, s) = (sc.track.w(), sc.track.s());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut split = 0;
    for i in 0..60 {
        let y0 = s - w - 4.0 + 0.07 * i as f64;
        let lo = [0.7, y0, 2.2, FRAC_PI_2 - 0.02];
        let wd = [0.05, 0.05, 0.1, 0.04];
        let b = StateBox::from_bounds([0, 1, 2, 3].map(|d| Interval::new(lo[d], lo[d] + wd[d])));
        let out = step_reach(&ReachPath { leg: Leg(0), states: b }, &c, &sc).unwrap();
        if out.successors.len() >= 2 {
            split += 1;
        }
        for _ in 0..200 {
            let s0 = CarState::from_array([0, 1, 2, 3].map(|d| lo[d] + rng.gen::<f64>() * wd[d]));
            let scan = raycast_scan(&s0, &sc.rays, &segs, &sc.track).unwrap();
            let next = integrate_step(&s0, c.evaluate(&scan), sc.control_period, &sc.dynamics);
            assert!(
                out.successors.iter().any(|p| p.states.contains(&next)),
                "successor of {s0:?} escapes {} paths",
                out.successors.len()
            );
        }
    }
    assert!(split > 0, "no box straddled a case boundary");
}

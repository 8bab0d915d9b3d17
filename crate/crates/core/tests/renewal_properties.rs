use proptest::prelude::*;

use tbrw::model::{simulate, InitialState, LeafLaw, Retention, RngStream, Trajectory};
use tbrw::renewal::{
    count_regenerations, detect_cascade, detect_tau, tau_ladder, CensorPolicy, RenewalReport,
    ReturnStatus, TauStatus,
};

fn run(p: f64, horizon: usize, seed: u64, replica: u64) -> Trajectory {
    simulate(
        &LeafLaw::bernoulli(p).unwrap(),
        horizon,
        InitialState::EdgeNonRootTip,
        RngStream::new(seed, replica),
        Retention::Full,
    )
    .unwrap()
}

fn check_report(traj: &Trajectory, report: &RenewalReport, policy: &CensorPolicy) {
    let d = &traj.depth;
    let usable = report.usable_horizon;

    // Sandwich and degree one at every renewal.
    for &tau in &report.tau {
        assert_eq!(traj.degree[tau], 1);
        assert!(d[..tau].iter().all(|&s| s < d[tau]));
        assert!(d[tau + 1..].iter().all(|&t| t >= d[tau]));
        assert!(tau <= usable);
    }
    assert!(report.tau.windows(2).all(|w| w[0] < w[1]));

    let closed = report.epochs.iter().filter(|e| e.renewal.is_some()).count();
    assert_eq!(report.k_per_epoch.len(), closed);
    for (e, epoch) in report.epochs.iter().enumerate() {
        let statuses: Vec<_> = epoch.attempts.iter().map(|a| a.h_tilde).collect();
        if let Some(renewal) = epoch.renewal {
            // Finite, ..., Finite, PresumedInfinite
            let (last, rest) = statuses.split_last().unwrap();
            assert_eq!(*last, ReturnStatus::PresumedInfinite);
            assert!(rest.iter().all(|s| matches!(s, ReturnStatus::Finite(_))));
            assert_eq!(epoch.attempts.last().unwrap().zeta, renewal);
            assert_eq!(report.k_per_epoch[e], rest.len());
        } else {
            assert_eq!(e, report.epochs.len() - 1);
            assert!(report.censored_tail);
        }
        // attempt times and depths strictly increase
        assert!(epoch.attempts.windows(2).all(|w| w[0].zeta < w[1].zeta));
        assert!(epoch.attempts.windows(2).all(|w| w[0].depth < w[1].depth));
        for a in &epoch.attempts {
            if let ReturnStatus::Finite(ret) = a.h_tilde {
                assert!(ret > a.zeta);
                assert_eq!(d[ret] + 1, a.depth);
                let m = a.excursion_max.unwrap();
                assert_eq!(d[a.zeta..=ret].iter().max().unwrap() - a.depth, m);
            }
            if a.h_tilde == ReturnStatus::PresumedInfinite {
                assert!(d[a.zeta..].iter().max().unwrap() >= &(a.depth + policy.depth_margin));
            }
        }
    }

    // N(t) brackets t between consecutive renewals.
    for t in (0..=usable).step_by(7) {
        let n = count_regenerations(report, t).unwrap();
        if n > 0 {
            assert!(report.tau[n - 1] <= t);
        }
        if n < report.tau.len() {
            assert!(t < report.tau[n]);
        }
    }
}

#[test]
fn detectors_agree_on_thousand_trajectories() {
    let policy = CensorPolicy::default();
    let mut renewals = 0usize;
    for r in 0..1000 {
        let traj = run(0.5, 2000, 2024, r);
        let ladder = tau_ladder(&detect_tau(&traj, &policy).unwrap());
        let report = detect_cascade(&traj, &policy).unwrap();
        assert_eq!(ladder, report.tau, "replica {r}");
        check_report(&traj, &report, &policy);
        renewals += ladder.len();
    }
    // plenty of renewals were actually compared
    assert!(renewals > 3_000, "only {renewals} renewals");
}

#[test]
fn strict_records_sit_at_tree_height_from_edge_start() {
    let policy = CensorPolicy::new(20, 50).unwrap();
    for r in 0..200 {
        let traj = run(0.3, 1500, 7, r);
        for cand in detect_tau(&traj, &policy).unwrap() {
            assert!(cand.at_height);
        }
    }
}

#[test]
fn censored_candidates_form_a_suffix() {
    let policy = CensorPolicy::default();
    for r in 0..200 {
        let traj = run(0.6, 1000, 3, r);
        let cands = detect_tau(&traj, &policy).unwrap();
        let first_censored = cands
            .iter()
            .position(|c| c.status == TauStatus::Censored)
            .unwrap_or(cands.len());
        assert!(cands[first_censored..]
            .iter()
            .all(|c| c.status == TauStatus::Censored));
    }
}

#[test]
fn report_json_has_expected_fields() {
    let traj = run(0.5, 1500, 1, 0);
    let report = detect_cascade(&traj, &CensorPolicy::default()).unwrap();
    let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    for key in [
        "tau",
        "epochs",
        "k_per_epoch",
        "m",
        "n_of_t",
        "censored_tail",
    ] {
        assert!(value.get(key).is_some(), "missing {key}");
    }
    let back: RenewalReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariants_hold_across_laws(
        seed in any::<u64>(),
        p in 0.15f64..=1.0,
        depth_margin in 5u32..60,
        horizon_margin in 10usize..300,
    ) {
        let policy = CensorPolicy::new(depth_margin, horizon_margin).unwrap();
        let traj = run(p, 1500, seed, 0);
        traj.check_invariants().unwrap();
        let ladder = tau_ladder(&detect_tau(&traj, &policy).unwrap());
        let report = detect_cascade(&traj, &policy).unwrap();
        prop_assert_eq!(&ladder, &report.tau);
        check_report(&traj, &report, &policy);
    }

    #[test]
    fn general_laws_agree(seed in any::<u64>(), zero_mass in 0.1f64..0.9) {
        let law = LeafLaw::general(vec![(0, zero_mass), (1, (1.0 - zero_mass) / 2.0), (3, (1.0 - zero_mass) / 2.0)]).unwrap();
        let traj = simulate(&law, 1500, InitialState::EdgeNonRootTip, RngStream::new(seed, 1), Retention::Full).unwrap();
        let policy = CensorPolicy::new(20, 100).unwrap();
        let ladder = tau_ladder(&detect_tau(&traj, &policy).unwrap());
        let report = detect_cascade(&traj, &policy).unwrap();
        prop_assert_eq!(&ladder, &report.tau);
        check_report(&traj, &report, &policy);
    }
}

mod common;

use common::sup_distance;
use proptest::prelude::*;
use ssg::game::{
    compare, make_example_game, random_game, random_leader_policy, Game, LeaderPolicy, RandomGameSpec,
};
use ssg::improve::{scalarize, Scalarization};
use ssg::mdp::{follower_best_response, leader_dagger_value, leader_q, TieBreak};
use ssg::oracle::{build_archive, enumerate_grid, OracleConfig};
use ssg::popi::{
    feasibility_search, pareto_ascent, popi_step, run_popi, split_regions, PopiConfig, PopiMode,
    Termination,
};

fn pq(p: f64, q: f64) -> LeaderPolicy {
    LeaderPolicy::from_first_action(&[p, q])
}

fn scalar(game: &Game, l: &Scalarization, f: &LeaderPolicy) -> f64 {
    let (v, _) = leader_dagger_value(game, f).unwrap();
    scalarize(l, &v).unwrap()
}

#[test]
fn runs_are_seed_deterministic() {
    let g = random_game(&RandomGameSpec::new(2, 2, 2), 9).unwrap();
    let config = PopiConfig::for_game(&g).resolution(11).seed(3);
    let f0 = LeaderPolicy::uniform(2, 2);
    let a = run_popi(&g, &f0, &config).unwrap();
    let b = run_popi(&g, &f0, &config).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn zero_reward_game_stops_immediately() {
    let mut g = make_example_game(1.0, 3.0, 0.5, 0.9).unwrap();
    for r in g.reward_leader.iter_mut().flatten().flatten() {
        *r = 0.0;
    }
    let trace = run_popi(&g, &pq(0.5, 0.5), &PopiConfig::for_game(&g).resolution(11)).unwrap();
    assert_eq!(trace.termination, Termination::ConvergedEqual);
    assert_eq!(trace.candidate_log.len(), 1);
    assert_eq!(trace.final_values().0, vec![0.0, 0.0]);
    assert!(trace.final_iterate().terminal);
}

#[test]
fn myopic_fixture_reaches_the_best_grid_point_for_its_weights() {
    let g = make_example_game(1.0, 3.0, 0.0, 0.9).unwrap();
    let l = Scalarization::from_nonnegative(&[1.0, 0.0]).unwrap();
    let archive = build_archive(&g, &OracleConfig::with_resolution(41)).unwrap();
    let best = archive
        .entries
        .iter()
        .map(|e| scalarize(&l, &e.values).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    for mode in [PopiMode::IdealGrid, PopiMode::PracticalSplit, PopiMode::Backtracking] {
        let config = PopiConfig::for_game(&g).resolution(41).weights(l.clone()).mode(mode);
        let trace = run_popi(&g, &LeaderPolicy::uniform(2, 2), &config).unwrap();
        trace.verify(1e-9).unwrap();
        assert!((trace.final_iterate().scalarized - best).abs() < 1e-6, "{mode:?}");
        assert!((best - 1.0).abs() < 1e-6);
    }
}

#[test]
fn backtracking_never_does_worse_than_one_grid_pass() {
    // backtracking searches the same probe grid as ideal-grid mode, and its
    // first pass is that run
    for seed in 0..6 {
        let g = random_game(&RandomGameSpec::new(2, 2, 2), seed).unwrap();
        let f0 = LeaderPolicy::uniform(2, 2);
        let base = PopiConfig::for_game(&g).resolution(11).seed(seed);
        let plain = run_popi(&g, &f0, &base.clone().mode(PopiMode::IdealGrid)).unwrap();
        let back = run_popi(&g, &f0, &base.mode(PopiMode::Backtracking)).unwrap();
        back.verify(1e-9).unwrap();
        assert!(
            back.final_iterate().scalarized >= plain.final_iterate().scalarized - 1e-9,
            "seed {seed}"
        );
        if back.backtracks == 0 {
            assert_eq!(back.termination, Termination::CertifiedBoundary);
            assert!(sup_distance(back.final_values(), plain.final_values()) < 1e-9);
        }
    }
}

#[test]
fn single_state_ideal_grid_finds_the_exhaustive_maximum() {
    for seed in 0..5 {
        let g = random_game(&RandomGameSpec::new(1, 3, 2), seed).unwrap();
        let l = Scalarization::uniform(1);
        let best = enumerate_grid(&g, 5, u128::MAX)
            .unwrap()
            .map(|f| scalar(&g, &l, &f))
            .fold(f64::NEG_INFINITY, f64::max);
        let config = PopiConfig::for_game(&g).resolution(5).mode(PopiMode::IdealGrid);
        let trace = run_popi(&g, &LeaderPolicy::uniform(1, 3), &config).unwrap();
        assert!((trace.final_iterate().scalarized - best).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn feasibility_keeps_the_current_region_feasible() {
    for seed in 0..10 {
        let g = random_game(&RandomGameSpec::new(2, 2, 2), seed).unwrap();
        let config = PopiConfig::for_game(&g);
        let f_t = random_leader_policy(2, 2, 10, seed + 100);
        let (v, br) = leader_dagger_value(&g, &f_t).unwrap();
        let probes: Vec<LeaderPolicy> = enumerate_grid(&g, 11, u128::MAX).unwrap().collect();
        let mut regions = split_regions(&g, &probes, TieBreak::default()).unwrap();
        // make sure the current policy sits in its own region
        let own = match regions.iter_mut().find(|r| r.response == br) {
            Some(r) => r,
            None => continue,
        };
        own.members.push(f_t.clone());
        let found = feasibility_search(&g, &v, own, &config).unwrap().expect("f_t is feasible");
        let q = leader_q(&g, &v, &found).unwrap();
        assert!(compare(&q, &v, 1e-9).unwrap().weakly_dominates(), "seed {seed}");
    }
}

#[test]
fn ascent_leaves_a_stationary_start_alone() {
    let g = make_example_game(1.0, 3.0, 0.0, 0.9).unwrap();
    let f = pq(1.0, 0.0);
    let (v, br) = leader_dagger_value(&g, &f).unwrap();
    let out = pareto_ascent(&g, &v, &f, &br, &PopiConfig::for_game(&g)).unwrap();
    assert_eq!(out, f);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn a_step_never_loses_value(seed in 0u64..10_000, fseed in 0u64..1000) {
        let g = random_game(&RandomGameSpec::new(2, 2, 2), seed).unwrap();
        let f_t = random_leader_policy(2, 2, 10, fseed);
        let (v, _) = leader_dagger_value(&g, &f_t).unwrap();
        let config = PopiConfig::for_game(&g).resolution(11);
        let (next, report) = popi_step(&g, &f_t, &config).unwrap();
        let q = leader_q(&g, &v, &next).unwrap();
        prop_assert!(compare(&q, &v, 1e-9).unwrap().weakly_dominates());
        prop_assert!(compare(&report.values, &v, 1e-9).unwrap().weakly_dominates());
        if report.terminal {
            prop_assert_eq!(&next, &f_t);
        }
    }

    #[test]
    fn ascent_keeps_the_region_and_never_lowers_q(seed in 0u64..10_000, fseed in 0u64..1000) {
        let g = random_game(&RandomGameSpec::new(2, 2, 2), seed).unwrap();
        let f = random_leader_policy(2, 2, 10, fseed);
        let (v, br) = leader_dagger_value(&g, &f).unwrap();
        let out = pareto_ascent(&g, &v, &f, &br, &PopiConfig::for_game(&g)).unwrap();
        prop_assert_eq!(&follower_best_response(&g, &out).unwrap().policy, &br);
        let q0 = leader_q(&g, &v, &f).unwrap();
        let q1 = leader_q(&g, &v, &out).unwrap();
        prop_assert!(compare(&q1, &q0, 1e-9).unwrap().weakly_dominates());
    }
}

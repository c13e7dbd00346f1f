mod common;

use common::{follower_optimum, sup_distance, value_of_pair};
use proptest::prelude::*;
use ssg::game::{
    compare, make_example_game, random_game, random_leader_policy, Dominance, Game, LeaderPolicy,
    RandomGameSpec,
};
use ssg::improve::{
    check_necessary_condition, check_sufficient_condition, delta, in_improving_set, scalarize,
    NecessaryVerdict, Scalarization,
};
use ssg::mdp::{follower_best_response, leader_dagger_value, TieBreak};
use ssg::simplex::lattice_points;

fn pq(p: f64, q: f64) -> LeaderPolicy {
    LeaderPolicy::from_first_action(&[p, q])
}

fn grid(res: usize) -> Vec<LeaderPolicy> {
    let rows = lattice_points(res, 2);
    rows.iter()
        .flat_map(|a| rows.iter().map(move |b| LeaderPolicy::new(vec![a.clone(), b.clone()]).unwrap()))
        .collect()
}

/// Leader Q built from tensors: the follower's response comes from
/// enumeration, not from the library.
fn oracle_q(game: &Game, v_ref: &[f64], f: &LeaderPolicy) -> Vec<f64> {
    let opt = follower_optimum(game, f);
    let n = game.num_states;
    (0..n)
        .map(|s| {
            // the library's chosen action must be among the follower's optima,
            // so take the action it picked and check optimality separately
            let br = follower_best_response(game, f).unwrap();
            let b = br.policy.actions[s];
            let fv = value_of_pair(game, f, &br.policy.actions, false);
            assert!((fv[s] - opt[s]).abs() < 1e-8);
            f.probs[s]
                .iter()
                .enumerate()
                .map(|(a, p)| {
                    let next: f64 = (0..n).map(|t| game.transition[s][a][b][t] * v_ref[t]).sum();
                    p * (game.reward_leader[s][a][b] + game.gamma_leader * next)
                })
                .sum()
        })
        .collect()
}

#[test]
fn delta_of_reference_with_itself_is_zero() {
    for seed in 0..20 {
        let g = random_game(&RandomGameSpec::new(3, 2, 2), seed).unwrap();
        let f = random_leader_policy(3, 2, 20, seed);
        let (v, _) = leader_dagger_value(&g, &f).unwrap();
        assert!(delta(&g, &v, &f, TieBreak::default()).unwrap().abs() < 1e-9);
    }
}

#[test]
fn swapping_between_pareto_points_is_not_improving() {
    let g = make_example_game(1.0, 3.0, 0.5, 0.9).unwrap();
    let (v, _) = leader_dagger_value(&g, &pq(0.0, 1.0)).unwrap();
    let (ok, cert) = in_improving_set(&g, &v, &pq(1.0, 0.0), TieBreak::default()).unwrap();
    assert!(!ok);
    assert_eq!(cert.relation, Dominance::Incomparable);
}

#[test]
fn necessary_condition_separates_front_from_interior() {
    let g = make_example_game(1.0, 3.0, 0.5, 0.9).unwrap();
    let cands = grid(21);
    let tie = TieBreak::default();
    for f in [pq(1.0, 0.0), pq(0.0, 1.0)] {
        assert_eq!(
            check_necessary_condition(&g, &f, &cands, tie).unwrap(),
            NecessaryVerdict::InconclusivePass
        );
    }
    match check_necessary_condition(&g, &pq(0.5, 0.5), &cands, tie).unwrap() {
        NecessaryVerdict::Fails { candidate_values, .. } => {
            assert_eq!(compare(&candidate_values, &[0.0, 0.0], 1e-9).unwrap(), Dominance::StrictlyDominates);
        }
        other => panic!("expected a failing candidate, got {other:?}"),
    }
}

#[test]
fn sufficient_condition_certifies_front_points_with_a_myopic_leader() {
    let g = make_example_game(1.0, 3.0, 0.0, 0.9).unwrap();
    let cands = grid(11);
    let tie = TieBreak::default();
    assert!(check_sufficient_condition(&g, &pq(1.0, 0.0), &cands, tie).unwrap().is_certified());
    assert!(check_sufficient_condition(&g, &pq(0.0, 1.0), &cands, tie).unwrap().is_certified());
    assert!(!check_sufficient_condition(&g, &pq(0.5, 0.5), &cands, tie).unwrap().is_certified());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalarization_is_pareto_compliant(
        w in proptest::collection::vec(0.01f64..1.0, 3),
        v in proptest::collection::vec(-5.0f64..5.0, 3),
        bump in proptest::collection::vec(0.0f64..1.0, 3),
        at in 0usize..3,
    ) {
        let total: f64 = w.iter().sum();
        let l = Scalarization::new(w.iter().map(|x| x / total).collect()).unwrap();
        let mut better: Vec<f64> = v.iter().zip(&bump).map(|(a, b)| a + b).collect();
        better[at] += 0.1;
        prop_assert!(scalarize(&l, &better).unwrap() > scalarize(&l, &v).unwrap());
    }

    #[test]
    fn q_matches_a_tensor_level_oracle(seed in 0u64..10_000, rseed in 0u64..1000, fseed in 0u64..1000) {
        let g = random_game(&RandomGameSpec::new(3, 2, 2), seed).unwrap();
        let f_ref = random_leader_policy(3, 2, 10, rseed);
        let f = random_leader_policy(3, 2, 10, fseed);
        let (v, _) = leader_dagger_value(&g, &f_ref).unwrap();
        let (_, cert) = in_improving_set(&g, &v, &f, TieBreak::default()).unwrap();
        prop_assert!(sup_distance(&cert.q_values, &oracle_q(&g, &v, &f)) < 1e-9);
    }

    /// Policy improvement: `Q ⪰ V` forces the new dagger value to be ⪰ V,
    /// and an Equal Q forces an equal dagger value.
    #[test]
    fn improving_candidates_really_improve(seed in 0u64..10_000, rseed in 0u64..1000, fseed in 0u64..1000) {
        let g = random_game(&RandomGameSpec::new(2, 2, 2), seed).unwrap();
        let f_ref = random_leader_policy(2, 2, 4, rseed);
        let f = random_leader_policy(2, 2, 4, fseed);
        let (v, _) = leader_dagger_value(&g, &f_ref).unwrap();
        let (ok, cert) = in_improving_set(&g, &v, &f, TieBreak::default()).unwrap();
        let (vf, _) = leader_dagger_value(&g, &f).unwrap();
        if ok {
            prop_assert!(compare(&vf, &v, 1e-7).unwrap().weakly_dominates());
        }
        if cert.relation == Dominance::Equal {
            prop_assert!(sup_distance(&vf, &v) < 1e-7);
        }
    }
}

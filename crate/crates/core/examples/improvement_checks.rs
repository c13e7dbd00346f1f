//! Improving-set membership and the necessary and sufficient conditions for
//! Pareto optimality, checked against a probe grid.

use ssg::game::{make_example_game, LeaderPolicy};
use ssg::improve::{check_necessary_condition, check_sufficient_condition, in_improving_set};
use ssg::mdp::{leader_dagger_value, TieBreak};
use ssg::oracle::enumerate_grid;

fn main() -> ssg::Result<()> {
    let game = make_example_game(1.0, 3.0, 0.0, 0.9)?;
    let tie = TieBreak::default();
    let probes: Vec<LeaderPolicy> = enumerate_grid(&game, 11, u128::MAX)?.collect();

    let zero_regime = LeaderPolicy::from_first_action(&[0.5, 0.5]);
    let front = LeaderPolicy::from_first_action(&[1.0, 0.0]);

    let (v, _) = leader_dagger_value(&game, &zero_regime)?;
    let (improves, cert) = in_improving_set(&game, &v, &front, tie)?;
    println!("(1,0) improves on (0.5,0.5): {improves}, Q = {:?}, relation {:?}", cert.q_values.0, cert.relation);

    for (name, f) in [("(0.5,0.5)", &zero_regime), ("(1,0)", &front)] {
        let nec = check_necessary_condition(&game, f, &probes, tie)?;
        let suf = check_sufficient_condition(&game, f, &probes, tie)?;
        println!("{name}: necessary {nec:?}, sufficient certified {}", suf.is_certified());
    }
    Ok(())
}

//! Brute-force Pareto archive over a lattice of leader policies, and the
//! singleton test for a strong Stackelberg equilibrium.

use ssg::game::make_example_game;
use ssg::oracle::{build_archive, check_singleton_pareto, OracleConfig};

fn main() -> ssg::Result<()> {
    let game = make_example_game(1.0, 3.0, 0.5, 0.9)?;
    let archive = build_archive(&game, &OracleConfig::with_resolution(41))?;
    println!("{} policies evaluated", archive.evaluated);
    for e in &archive.entries {
        println!("  V = {:?}  from f = {:?}", e.values.0, e.policy.probs);
    }
    println!("pointwise upper bound: {:?}", archive.se_upper.0);
    println!("verdict: {}", check_singleton_pareto(&archive));
    Ok(())
}

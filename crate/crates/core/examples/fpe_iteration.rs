//! Fixed-point iteration of the one-step Stackelberg operator. On the
//! example game it settles; on some random general-sum games it cycles.

use ssg::fpe::{iterate_to_fixed_point, FpeConfig, ValuePair};
use ssg::game::{make_example_game, random_game, RandomGameSpec};

fn main() -> ssg::Result<()> {
    let config = FpeConfig::default();

    let game = make_example_game(1.0, 3.0, 0.5, 0.9)?;
    let rep = iterate_to_fixed_point(&game, &ValuePair::zeros(2), &config)?;
    println!(
        "example game: {:?} after {} iterations, V_A = {:?}, V_B = {:?}",
        rep.status, rep.iterations, rep.values.v_a.0, rep.values.v_b.0
    );

    let game = random_game(&RandomGameSpec::new(2, 2, 2).gammas(0.9, 0.9), 72)?;
    let rep = iterate_to_fixed_point(&game, &ValuePair::zeros(2), &config)?;
    println!(
        "random game 72: {:?} after {} iterations, period {:?}",
        rep.status, rep.iterations, rep.cycle_period
    );
    let tail: Vec<String> = rep.deltas.iter().rev().take(4).map(|d| format!("{d:.3e}")).collect();
    println!("  last step sizes: {}", tail.join(" "));
    Ok(())
}

//! Backtracking POPI: after each terminal policy it restarts from an unused
//! candidate and keeps the best output found.

use ssg::game::{random_game, LeaderPolicy, RandomGameSpec};
use ssg::popi::{run_popi, PopiConfig, PopiMode};

fn main() -> ssg::Result<()> {
    let game = random_game(&RandomGameSpec::new(2, 2, 2), 4)?;
    let f0 = LeaderPolicy::uniform(2, 2);
    let base = PopiConfig::for_game(&game).resolution(11).seed(2);

    let single = run_popi(&game, &f0, &base.clone().mode(PopiMode::IdealGrid))?;
    let back = run_popi(&game, &f0, &base.mode(PopiMode::Backtracking))?;

    println!("one pass:     L = {:.6}", single.final_iterate().scalarized);
    println!(
        "backtracking: L = {:.6} ({} restarts, {} terminal outputs, {:?})",
        back.final_iterate().scalarized,
        back.backtracks,
        back.outputs.len(),
        back.termination
    );
    Ok(())
}

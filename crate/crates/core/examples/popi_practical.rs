//! Pareto-optimal policy iteration with the region split: probes are
//! grouped by follower response, and each region is searched for an
//! improving policy.

use ssg::game::{random_game, LeaderPolicy, RandomGameSpec};
use ssg::popi::{run_popi, PopiConfig, PopiMode};

fn main() -> ssg::Result<()> {
    let game = random_game(&RandomGameSpec::new(3, 2, 2), 5)?;
    let config = PopiConfig::for_game(&game)
        .mode(PopiMode::PracticalSplit)
        .resolution(11)
        .seed(1);
    let trace = run_popi(&game, &LeaderPolicy::uniform(3, 2), &config)?;
    for (i, it) in trace.iterates.iter().enumerate() {
        println!(
            "{i:>2}  L = {:>9.5}  V = {:?}{}",
            it.scalarized,
            it.values.0.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>(),
            if it.terminal { "  (terminal)" } else { "" }
        );
    }
    println!("stopped: {:?}", trace.termination);
    trace.verify(1e-9).expect("monotone trace");
    Ok(())
}

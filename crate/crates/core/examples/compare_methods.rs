//! Runs the grid oracle, fixed-point iteration and POPI on one game and
//! compares the resulting leader values.

use ssg::fpe::{iterate_to_fixed_point, FpeConfig, ValuePair};
use ssg::game::{compare, make_example_game, LeaderPolicy};
use ssg::improve::Scalarization;
use ssg::oracle::{build_archive, check_singleton_pareto, OracleConfig};
use ssg::popi::{run_popi, PopiConfig};

fn main() -> ssg::Result<()> {
    let game = make_example_game(1.0, 3.0, 0.0, 0.9)?;
    let archive = build_archive(&game, &OracleConfig::with_resolution(21))?;
    println!("oracle: {} Pareto values, {}", archive.entries.len(), check_singleton_pareto(&archive));

    let fpe = iterate_to_fixed_point(&game, &ValuePair::zeros(2), &FpeConfig::default())?;
    println!("fpe:  {:?}, V_A = {:?}", fpe.status, fpe.values.v_a.0);

    let config = PopiConfig::for_game(&game).weights(Scalarization::from_nonnegative(&[1.0, 0.0])?);
    let trace = run_popi(&game, &LeaderPolicy::uniform(2, 2), &config)?;
    let popi = trace.final_values();
    println!("popi: {:?}, V_A = {:?}", trace.termination, popi.0);

    println!("popi vs fpe: {:?}", compare(popi, &fpe.values.v_a, 1e-9)?);
    println!("archive entries dominating popi: {}", archive.dominating(popi, 1e-6).len());
    Ok(())
}

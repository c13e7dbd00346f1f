//! Follower best responses and leader values on the two-state example game,
//! for the three leader policies that characterise it.
//!
//! ```text
//! cargo run --example table1
//! ```

use ssg::game::{make_example_game, LeaderPolicy};
use ssg::mdp::leader_dagger_value;

fn main() -> ssg::Result<()> {
    let game = make_example_game(1.0, 3.0, 0.5, 0.9)?;
    println!("{:>10}  {:>8}  {:>18}", "(p, q)", "response", "V_A");
    for (p, q) in [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)] {
        let (v, br) = leader_dagger_value(&game, &LeaderPolicy::from_first_action(&[p, q]))?;
        let response: Vec<String> = br.actions.iter().map(|b| format!("b{}", b + 1)).collect();
        println!(
            "{:>10}  {:>8}  ({:.4}, {:.4})",
            format!("({p}, {q})"),
            response.join(","),
            v[0],
            v[1]
        );
    }
    Ok(())
}

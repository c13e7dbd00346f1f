//! Finite-MDP machinery: the follower's best response to a fixed leader
//! policy, exact policy evaluation, and the leader's dagger values.
//!
//! Once the leader fixes `f`, the follower faces an ordinary MDP with
//! actions `B`, rewards `r_B(s, f(s), b)` and kernel `p(· | s, f(s), b)`.
//! [`follower_best_response`] solves it with Howard policy iteration and
//! LU evaluation, so results are exact up to rounding and independent of any
//! iteration budget.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    marginal_reward_unchecked, marginal_transition_into, FollowerPolicy, Game, LeaderPolicy,
    Player, ValueFunction,
};

/// Comparison slack for follower ties.
pub const TIE_SLACK: f64 = 1e-10;

/// How the follower picks among actions whose values tie within
/// [`TIE_SLACK`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Smallest action index.
    Lowest,
    /// Largest leader immediate reward `r_A(s, f(s), b)`, then smallest index.
    Optimistic,
    /// Largest follower value against the uniform leader mix at `s`
    /// (continuation held fixed), then smallest index. This is the limit
    /// of an infinitesimal perturbation of `f(s)` toward the uniform mix.
    #[default]
    Perturbed,
}

impl std::str::FromStr for TieBreak {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest" => Ok(TieBreak::Lowest),
            "optimistic" => Ok(TieBreak::Optimistic),
            "perturbed" => Ok(TieBreak::Perturbed),
            other => Err(Error::InvalidParameter(format!(
                "unknown tie-break rule `{other}` (expected lowest, optimistic or perturbed)"
            ))),
        }
    }
}

impl std::fmt::Display for TieBreak {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TieBreak::Lowest => "lowest",
            TieBreak::Optimistic => "optimistic",
            TieBreak::Perturbed => "perturbed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseResult {
    pub policy: FollowerPolicy,
    /// `max_g V_B^{fg}`
    pub follower_values: ValueFunction,
    /// `follower_q[s][b]`
    pub follower_q: Vec<Vec<f64>>,
    /// Gap between the best and second-best follower action values per
    /// state; `None` when the follower has a single action.
    pub tie_margin: Vec<Option<f64>>,
}

/// The follower MDP induced by a fixed leader policy, stored densely.
struct InducedMdp {
    n: usize,
    nb: usize,
    gamma: f64,
    /// `reward[s * nb + b]`
    reward: Vec<f64>,
    /// `kernel[(s * nb + b) * n + s']`
    kernel: Vec<f64>,
}

impl InducedMdp {
    fn new(game: &Game, player: Player, f: &LeaderPolicy) -> InducedMdp {
        let (n, nb) = (game.num_states, game.num_follower_actions);
        let mut reward = vec![0.0; n * nb];
        let mut kernel = vec![0.0; n * nb * n];
        for s in 0..n {
            let f_s = f.row(s);
            for b in 0..nb {
                let i = s * nb + b;
                reward[i] = marginal_reward_unchecked(game, player, s, f_s, b);
                marginal_transition_into(game, s, f_s, b, &mut kernel[i * n..(i + 1) * n]);
            }
        }
        InducedMdp {
            n,
            nb,
            gamma: game.gamma(player),
            reward,
            kernel,
        }
    }

    fn row(&self, s: usize, b: usize) -> &[f64] {
        let i = s * self.nb + b;
        &self.kernel[i * self.n..(i + 1) * self.n]
    }

    fn evaluate(&self, policy: &[usize]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for s in 0..n {
            let b = policy[s];
            r[s] = self.reward[s * self.nb + b];
            for (t, p) in self.row(s, b).iter().enumerate() {
                a[(s, t)] -= self.gamma * p;
            }
        }
        solve(a, r, "evaluating a follower policy")
    }

    fn q_values(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|s| {
                (0..self.nb)
                    .map(|b| self.reward[s * self.nb + b] + self.gamma * dot(self.row(s, b), v))
                    .collect()
            })
            .collect()
    }
}

fn solve(a: DMatrix<f64>, r: DVector<f64>, context: &'static str) -> Result<Vec<f64>> {
    let x = a.lu().solve(&r).ok_or(Error::Singular(context))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x.iter().copied().collect())
    } else {
        Err(Error::Singular(context))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Follower best response with the default [`TieBreak`].
pub fn follower_best_response(game: &Game, f: &LeaderPolicy) -> Result<BestResponseResult> {
    follower_best_response_with(game, f, TieBreak::default())
}

/// Solves the follower MDP induced by `f` by Howard policy iteration.
pub fn follower_best_response_with(
    game: &Game,
    f: &LeaderPolicy,
    tie: TieBreak,
) -> Result<BestResponseResult> {
    f.check_for(game)?;
    best_response_unchecked(game, f, tie)
}

pub(crate) fn best_response_unchecked(
    game: &Game,
    f: &LeaderPolicy,
    tie: TieBreak,
) -> Result<BestResponseResult> {
    let mdp = InducedMdp::new(game, Player::Follower, f);
    let (n, nb) = (mdp.n, mdp.nb);

    // start from the myopic policy
    let mut policy: Vec<usize> = (0..n)
        .map(|s| argmax_lowest(&mdp.reward[s * nb..(s + 1) * nb]))
        .collect();
    let max_rounds = 64 + n * nb * 8;
    let mut values = mdp.evaluate(&policy)?;
    let mut rounds = 0;
    loop {
        let q = mdp.q_values(&values);
        let mut changed = false;
        for s in 0..n {
            let current = q[s][policy[s]];
            let scale = 1.0 + current.abs();
            let best = argmax_lowest(&q[s]);
            // switch only on a clear gain so the iteration cannot cycle on
            // rounding noise
            if q[s][best] > current + 1e-13 * scale {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        values = mdp.evaluate(&policy)?;
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::InvariantBreach(
                "follower policy iteration did not terminate".into(),
            ));
        }
    }

    let follower_q = mdp.q_values(&values);
    let uniform = matches!(tie, TieBreak::Perturbed).then(|| {
        let u = LeaderPolicy::uniform(n, game.num_leader_actions);
        InducedMdp::new(game, Player::Follower, &u).q_values(&values)
    });
    let mut tie_margin = Vec::with_capacity(n);
    for s in 0..n {
        let row = &follower_q[s];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..nb).filter(|&b| row[b] >= best - TIE_SLACK).collect();
        policy[s] = match tie {
            TieBreak::Lowest => tied[0],
            TieBreak::Optimistic => pick_max(&tied, |b| {
                marginal_reward_unchecked(game, Player::Leader, s, f.row(s), b)
            }),
            TieBreak::Perturbed => {
                let u = uniform.as_ref().expect("computed above");
                pick_max(&tied, |b| u[s][b])
            }
        };
        tie_margin.push(second_gap(row));
    }
    Ok(BestResponseResult {
        policy: FollowerPolicy::new(policy),
        follower_values: ValueFunction(values),
        follower_q,
        tie_margin,
    })
}

/// Among `tied` (ascending), the action maximizing `key`; exact key ties go
/// to the smallest index.
pub(crate) fn pick_max(tied: &[usize], key: impl Fn(usize) -> f64) -> usize {
    let mut best = tied[0];
    let mut best_key = key(best);
    for &b in &tied[1..] {
        let k = key(b);
        if k > best_key + TIE_SLACK {
            best = b;
            best_key = k;
        }
    }
    best
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn second_gap(row: &[f64]) -> Option<f64> {
    if row.len() < 2 {
        return None;
    }
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Some(sorted[0] - sorted[1])
}

/// Exact value `V_i^{fg}` of the policy pair for `player`.
pub fn evaluate_pair(
    game: &Game,
    player: Player,
    f: &LeaderPolicy,
    g: &FollowerPolicy,
) -> Result<ValueFunction> {
    f.check_for(game)?;
    g.check_for(game)?;
    evaluate_pair_unchecked(game, player, f, g)
}

pub(crate) fn evaluate_pair_unchecked(
    game: &Game,
    player: Player,
    f: &LeaderPolicy,
    g: &FollowerPolicy,
) -> Result<ValueFunction> {
    let n = game.num_states;
    let gamma = game.gamma(player);
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    let mut row = vec![0.0; n];
    for s in 0..n {
        let b = g.actions[s];
        r[s] = marginal_reward_unchecked(game, player, s, f.row(s), b);
        marginal_transition_into(game, s, f.row(s), b, &mut row);
        for (t, p) in row.iter().enumerate() {
            a[(s, t)] -= gamma * p;
        }
    }
    solve(a, r, "evaluating a policy pair").map(ValueFunction)
}

/// `V_A^{f†}` together with the follower best response it is evaluated
/// against.
pub fn leader_dagger_value(game: &Game, f: &LeaderPolicy) -> Result<(ValueFunction, FollowerPolicy)> {
    leader_dagger_value_with(game, f, TieBreak::default())
}

pub fn leader_dagger_value_with(
    game: &Game,
    f: &LeaderPolicy,
    tie: TieBreak,
) -> Result<(ValueFunction, FollowerPolicy)> {
    f.check_for(game)?;
    let g = best_response_unchecked(game, f, tie)?.policy;
    let v = evaluate_pair_unchecked(game, Player::Leader, f, &g)?;
    Ok((v, g))
}

/// `Q_A^{f'†}(·, f)` where `v_ref = V_A^{f'†}`, using the default [`TieBreak`].
pub fn leader_q(game: &Game, v_ref: &ValueFunction, f: &LeaderPolicy) -> Result<ValueFunction> {
    leader_q_with(game, v_ref, f, TieBreak::default())
}

pub fn leader_q_with(
    game: &Game,
    v_ref: &ValueFunction,
    f: &LeaderPolicy,
    tie: TieBreak,
) -> Result<ValueFunction> {
    f.check_for(game)?;
    check_values(game, v_ref)?;
    let g = best_response_unchecked(game, f, tie)?.policy;
    Ok(leader_q_given(game, v_ref, f, &g))
}

/// `s ↦ r_A(s, f(s), g(s)) + γ_A E[v_ref(s')]` for an explicit follower
/// policy `g`. Inside a best-response region this is affine in `f`.
pub fn leader_q_given(
    game: &Game,
    v_ref: &[f64],
    f: &LeaderPolicy,
    g: &FollowerPolicy,
) -> ValueFunction {
    let n = game.num_states;
    let mut row = vec![0.0; n];
    ValueFunction(
        (0..n)
            .map(|s| {
                let b = g.actions[s];
                marginal_transition_into(game, s, f.row(s), b, &mut row);
                marginal_reward_unchecked(game, Player::Leader, s, f.row(s), b)
                    + game.gamma_leader * dot(&row, v_ref)
            })
            .collect(),
    )
}

/// Per-action leader coefficients `C[s][a] = r̂_A(s,a,g(s)) + γ_A Σ p̂ v_ref`,
/// so that `Q(s, f) = Σ_a f_s(a) C[s][a]` whenever the follower plays `g`.
pub fn leader_q_coefficients(game: &Game, v_ref: &[f64], g: &FollowerPolicy) -> Vec<Vec<f64>> {
    (0..game.num_states)
        .map(|s| {
            let b = g.actions[s];
            (0..game.num_leader_actions)
                .map(|a| {
                    game.reward_leader[s][a][b]
                        + game.gamma_leader * dot(game.next_state_dist(s, a, b), v_ref)
                })
                .collect()
        })
        .collect()
}

/// Row-stochastic matrix `P^{fg}(s, s')`.
pub fn induced_kernel(game: &Game, f: &LeaderPolicy, g: &FollowerPolicy) -> Vec<Vec<f64>> {
    let n = game.num_states;
    (0..n)
        .map(|s| {
            let mut row = vec![0.0; n];
            marginal_transition_into(game, s, f.row(s), g.actions[s], &mut row);
            row
        })
        .collect()
}

pub(crate) fn check_values(game: &Game, v: &[f64]) -> Result<()> {
    if v.len() != game.num_states {
        return Err(Error::LengthMismatch {
            expected: game.num_states,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("value vector has non-finite entries".into()));
    }
    Ok(())
}

/// A leader policy paired with its follower best response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub policy: LeaderPolicy,
    pub response: FollowerPolicy,
}

impl Probe {
    pub fn new(game: &Game, policy: LeaderPolicy, tie: TieBreak) -> Result<Probe> {
        policy.check_for(game)?;
        let response = best_response_unchecked(game, &policy, tie)?.policy;
        Ok(Probe { policy, response })
    }

    /// `V_A^{f†}` for this probe.
    pub fn dagger_value(&self, game: &Game) -> Result<ValueFunction> {
        evaluate_pair_unchecked(game, Player::Leader, &self.policy, &self.response)
    }

    pub fn q(&self, game: &Game, v_ref: &[f64]) -> ValueFunction {
        leader_q_given(game, v_ref, &self.policy, &self.response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_example_game, random_game, random_leader_policy, RandomGameSpec};

    fn fixture() -> Game {
        make_example_game(1.0, 3.0, 0.5, 0.9).unwrap()
    }

    fn pq(p: f64, q: f64) -> LeaderPolicy {
        LeaderPolicy::from_first_action(&[p, q])
    }

    #[test]
    fn table_one_best_responses() {
        let g = fixture();
        let br = follower_best_response(&g, &pq(1.0, 0.0)).unwrap();
        assert_eq!(br.policy.actions, vec![0, 1]);
        let br = follower_best_response(&g, &pq(0.0, 1.0)).unwrap();
        assert_eq!(br.policy.actions, vec![1, 0]);
        let br = follower_best_response(&g, &pq(0.5, 0.5)).unwrap();
        assert_eq!(br.policy.actions, vec![1, 1]);
    }

    #[test]
    fn lowest_tie_break_picks_b1_on_the_indifferent_state() {
        let g = fixture();
        let br = follower_best_response_with(&g, &pq(1.0, 0.0), TieBreak::Lowest).unwrap();
        assert_eq!(br.policy.actions, vec![0, 0]);
        assert_eq!(br.tie_margin[1], Some(0.0));
    }

    #[test]
    fn dagger_values_match_table_one() {
        let g = fixture();
        let (v, _) = leader_dagger_value(&g, &pq(1.0, 0.0)).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        let (v, _) = leader_dagger_value(&g, &pq(0.0, 1.0)).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
        let (v, _) = leader_dagger_value(&g, &pq(0.5, 0.5)).unwrap();
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn self_loop_pair_value_is_geometric() {
        let g = fixture();
        let v = evaluate_pair(
            &g,
            Player::Leader,
            &pq(1.0, 1.0),
            &FollowerPolicy::new(vec![0, 0]),
        )
        .unwrap();
        assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_state_value() {
        let g = Game {
            num_states: 1,
            num_leader_actions: 1,
            num_follower_actions: 1,
            transition: vec![vec![vec![vec![1.0]]]],
            reward_leader: vec![vec![vec![1.0]]],
            reward_follower: vec![vec![vec![1.0]]],
            gamma_leader: 0.5,
            gamma_follower: 0.5,
            initial_distribution: vec![1.0],
        };
        let v = evaluate_pair(
            &g,
            Player::Leader,
            &LeaderPolicy::uniform(1, 1),
            &FollowerPolicy::new(vec![0]),
        )
        .unwrap();
        assert!((v[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn myopic_follower_maximizes_immediate_reward() {
        let spec = RandomGameSpec::new(3, 2, 3).gammas(0.5, 0.0);
        let g = random_game(&spec, 4).unwrap();
        let f = random_leader_policy(3, 2, 10, 1);
        let br = follower_best_response_with(&g, &f, TieBreak::Lowest).unwrap();
        for s in 0..3 {
            let r: Vec<f64> = (0..3)
                .map(|b| marginal_reward_unchecked(&g, Player::Follower, s, f.row(s), b))
                .collect();
            assert_eq!(br.policy.actions[s], argmax_lowest(&r));
        }
    }

    #[test]
    fn leader_q_of_reference_is_its_value() {
        let spec = RandomGameSpec::new(3, 2, 2);
        let g = random_game(&spec, 9).unwrap();
        let f = random_leader_policy(3, 2, 10, 2);
        let (v, _) = leader_dagger_value(&g, &f).unwrap();
        let q = leader_q(&g, &v, &f).unwrap();
        assert!(q.sup_distance(&v) < 1e-12);
    }

    #[test]
    fn best_response_values_equal_chosen_q() {
        let spec = RandomGameSpec::new(4, 3, 3);
        let g = random_game(&spec, 21).unwrap();
        let f = random_leader_policy(4, 3, 7, 5);
        let br = follower_best_response(&g, &f).unwrap();
        for s in 0..4 {
            let chosen = br.follower_q[s][br.policy.actions[s]];
            assert!((chosen - br.follower_values[s]).abs() < 1e-9);
            for b in 0..3 {
                assert!(chosen >= br.follower_q[s][b] - 1e-9);
            }
        }
    }

    #[test]
    fn coefficients_reproduce_q() {
        let spec = RandomGameSpec::new(3, 3, 2);
        let g = random_game(&spec, 2).unwrap();
        let f = random_leader_policy(3, 3, 6, 8);
        let v = vec![0.3, -1.2, 2.0];
        let resp = follower_best_response(&g, &f).unwrap().policy;
        let c = leader_q_coefficients(&g, &v, &resp);
        let q = leader_q_given(&g, &v, &f, &resp);
        for s in 0..3 {
            assert!((dot(f.row(s), &c[s]) - q[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let g = fixture();
        let f = LeaderPolicy::uniform(3, 2);
        assert!(follower_best_response(&g, &f).is_err());
        let f = pq(1.0, 0.0);
        assert!(evaluate_pair(&g, Player::Leader, &f, &FollowerPolicy::new(vec![0, 2])).is_err());
        assert!(leader_q(&g, &ValueFunction(vec![0.0]), &f).is_err());
    }
}

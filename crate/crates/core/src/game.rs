//! The stochastic Stackelberg game model.
//!
//! A [`Game`] holds dense tensors indexed `transition[s][a][b][s']`,
//! `reward_*[s][a][b]`, where `a` ranges over leader actions and `b` over
//! follower actions. Leader policies are stochastic ([`LeaderPolicy`]),
//! follower policies deterministic ([`FollowerPolicy`]), because a best
//! response to a fixed leader policy is the optimal policy of a finite MDP.
//!
//! Value vectors are compared with the componentwise order through
//! [`compare`], which uses a single slack [`ETA`] across the whole crate.

use std::fmt;
use std::ops::Deref;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Slack for every dominance test (`≐`, `⪰`, `≻`).
pub const ETA: f64 = 1e-9;

/// Tolerance for probability vectors summing to one.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    Leader,
    Follower,
}

/// A two-player general-sum stochastic Stackelberg game.
///
/// Field names are the on-disk JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub num_states: usize,
    pub num_leader_actions: usize,
    pub num_follower_actions: usize,
    /// `transition[s][a][b][s']`
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `reward_leader[s][a][b]`
    pub reward_leader: Vec<Vec<Vec<f64>>>,
    /// `reward_follower[s][a][b]`
    pub reward_follower: Vec<Vec<Vec<f64>>>,
    pub gamma_leader: f64,
    pub gamma_follower: f64,
    pub initial_distribution: Vec<f64>,
}

impl Game {
    /// Parses a game from JSON and validates it.
    ///
    /// With `renormalize`, probability rows that are non-negative and sum to
    /// one within `1e-6` are rescaled before validation.
    pub fn from_json_str(text: &str, renormalize: bool) -> Result<Game> {
        let mut game: Game = serde_json::from_str(text)?;
        if renormalize {
            game.renormalize(1e-6);
        }
        game.validated()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("game serializes")
    }

    /// Returns `self` if it passes [`validate_game`].
    pub fn validated(self) -> Result<Game> {
        let violations = validate_game(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidGame(violations))
        }
    }

    fn renormalize(&mut self, slack: f64) {
        fn fix(row: &mut [f64], slack: f64) {
            let sum: f64 = row.iter().sum();
            if row.iter().all(|&p| p >= 0.0) && (sum - 1.0).abs() <= slack && sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        for row in self.transition.iter_mut().flatten().flatten() {
            fix(row, slack);
        }
        fix(&mut self.initial_distribution, slack);
    }

    pub fn gamma(&self, player: Player) -> f64 {
        match player {
            Player::Leader => self.gamma_leader,
            Player::Follower => self.gamma_follower,
        }
    }

    pub fn rewards(&self, player: Player) -> &Vec<Vec<Vec<f64>>> {
        match player {
            Player::Leader => &self.reward_leader,
            Player::Follower => &self.reward_follower,
        }
    }

    #[inline]
    pub fn reward(&self, player: Player, s: usize, a: usize, b: usize) -> f64 {
        self.rewards(player)[s][a][b]
    }

    #[inline]
    pub fn next_state_dist(&self, s: usize, a: usize, b: usize) -> &[f64] {
        &self.transition[s][a][b]
    }

    /// `max |r| / (1 - γ)` for the given player; every value of that player
    /// lies within this bound.
    pub fn value_bound(&self, player: Player) -> f64 {
        let rmax = self
            .rewards(player)
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, r| m.max(r.abs()));
        rmax / (1.0 - self.gamma(player))
    }

    /// True when both players share the reward tensor and discount.
    pub fn is_cooperative(&self) -> bool {
        self.reward_leader == self.reward_follower && self.gamma_leader == self.gamma_follower
    }

    pub fn with_initial_distribution(mut self, rho: Vec<f64>) -> Result<Game> {
        self.initial_distribution = rho;
        self.validated()
    }

    pub fn with_gammas(mut self, gamma_leader: f64, gamma_follower: f64) -> Result<Game> {
        self.gamma_leader = gamma_leader;
        self.gamma_follower = gamma_follower;
        self.validated()
    }

    fn check_state(&self, s: usize) -> Result<()> {
        check_index("state", s, self.num_states)
    }
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, len })
    }
}

fn check_distribution(path: String, row: &[f64], expected_len: usize, out: &mut Vec<Violation>) {
    if row.len() != expected_len {
        out.push(Violation {
            path,
            rule: format!("expected {expected_len} entries, found {}", row.len()),
        });
        return;
    }
    if let Some(i) = row.iter().position(|p| !p.is_finite() || *p < 0.0) {
        out.push(Violation {
            path: format!("{path}[{i}]"),
            rule: format!("probability must be finite and non-negative, found {}", row[i]),
        });
        return;
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        out.push(Violation {
            path,
            rule: format!("probabilities must sum to 1 within {PROB_TOL:e}, sum is {sum}"),
        });
    }
}

/// Checks every [`Game`] invariant and lists the violations. An empty list
/// means the game is valid.
pub fn validate_game(game: &Game) -> Vec<Violation> {
    let mut out = Vec::new();
    let (ns, na, nb) = (
        game.num_states,
        game.num_leader_actions,
        game.num_follower_actions,
    );
    for (name, n) in [
        ("num_states", ns),
        ("num_leader_actions", na),
        ("num_follower_actions", nb),
    ] {
        if n == 0 {
            out.push(Violation {
                path: name.into(),
                rule: "must be positive".into(),
            });
        }
    }
    for (name, g) in [
        ("gamma_leader", game.gamma_leader),
        ("gamma_follower", game.gamma_follower),
    ] {
        if !(0.0..1.0).contains(&g) {
            out.push(Violation {
                path: name.into(),
                rule: format!("discount must lie in [0, 1), found {g}"),
            });
        }
    }
    check_distribution(
        "initial_distribution".into(),
        &game.initial_distribution,
        ns,
        &mut out,
    );

    let shape = |path: &str, len: usize, expected: usize, out: &mut Vec<Violation>| {
        if len != expected {
            out.push(Violation {
                path: path.to_string(),
                rule: format!("expected {expected} entries, found {len}"),
            });
            false
        } else {
            true
        }
    };

    if shape("transition", game.transition.len(), ns, &mut out) {
        for (s, per_a) in game.transition.iter().enumerate() {
            if !shape(&format!("transition[{s}]"), per_a.len(), na, &mut out) {
                continue;
            }
            for (a, per_b) in per_a.iter().enumerate() {
                if !shape(&format!("transition[{s}][{a}]"), per_b.len(), nb, &mut out) {
                    continue;
                }
                for (b, row) in per_b.iter().enumerate() {
                    check_distribution(format!("transition[{s}][{a}][{b}]"), row, ns, &mut out);
                }
            }
        }
    }

    for (name, tensor) in [
        ("reward_leader", &game.reward_leader),
        ("reward_follower", &game.reward_follower),
    ] {
        if !shape(name, tensor.len(), ns, &mut out) {
            continue;
        }
        for (s, per_a) in tensor.iter().enumerate() {
            if !shape(&format!("{name}[{s}]"), per_a.len(), na, &mut out) {
                continue;
            }
            for (a, per_b) in per_a.iter().enumerate() {
                if !shape(&format!("{name}[{s}][{a}]"), per_b.len(), nb, &mut out) {
                    continue;
                }
                for (b, r) in per_b.iter().enumerate() {
                    if !r.is_finite() {
                        out.push(Violation {
                            path: format!("{name}[{s}][{a}][{b}]"),
                            rule: "reward must be finite".into(),
                        });
                    }
                }
            }
        }
    }
    out
}

/// `r_i(s, f_s, b) = Σ_a f_s(a) r̂_i(s, a, b)`.
pub fn marginal_reward(
    game: &Game,
    player: Player,
    s: usize,
    f_s: &[f64],
    b: usize,
) -> Result<f64> {
    game.check_state(s)?;
    check_index("follower action", b, game.num_follower_actions)?;
    check_len(f_s.len(), game.num_leader_actions)?;
    Ok(marginal_reward_unchecked(game, player, s, f_s, b))
}

#[inline]
pub(crate) fn marginal_reward_unchecked(
    game: &Game,
    player: Player,
    s: usize,
    f_s: &[f64],
    b: usize,
) -> f64 {
    let r = game.rewards(player);
    f_s.iter()
        .enumerate()
        .map(|(a, &w)| w * r[s][a][b])
        .sum()
}

/// `p(· | s, f_s, b) = Σ_a f_s(a) p̂(· | s, a, b)`.
pub fn marginal_transition(game: &Game, s: usize, f_s: &[f64], b: usize) -> Result<Vec<f64>> {
    game.check_state(s)?;
    check_index("follower action", b, game.num_follower_actions)?;
    check_len(f_s.len(), game.num_leader_actions)?;
    let mut out = vec![0.0; game.num_states];
    marginal_transition_into(game, s, f_s, b, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn marginal_transition_into(
    game: &Game,
    s: usize,
    f_s: &[f64],
    b: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (a, &w) in f_s.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(&game.transition[s][a][b]) {
            *o += w * p;
        }
    }
}

fn check_len(found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

/// A stationary leader policy: row `s` is the action distribution at `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl LeaderPolicy {
    /// Builds a policy, checking that each row is a distribution.
    pub fn new(probs: Vec<Vec<f64>>) -> Result<LeaderPolicy> {
        let width = probs.first().map_or(0, Vec::len);
        let mut violations = Vec::new();
        for (s, row) in probs.iter().enumerate() {
            check_distribution(format!("probs[{s}]"), row, width, &mut violations);
        }
        if violations.is_empty() && width > 0 {
            Ok(LeaderPolicy { probs })
        } else if width == 0 {
            Err(Error::InvalidParameter("leader policy has no actions".into()))
        } else {
            Err(Error::InvalidGame(violations))
        }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> LeaderPolicy {
        let w = 1.0 / num_actions as f64;
        LeaderPolicy {
            probs: vec![vec![w; num_actions]; num_states],
        }
    }

    /// Point masses on `actions[s]`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> LeaderPolicy {
        LeaderPolicy {
            probs: actions
                .iter()
                .map(|&a| {
                    let mut row = vec![0.0; num_actions];
                    row[a] = 1.0;
                    row
                })
                .collect(),
        }
    }

    /// Two-action policy with `P(a₁ | s) = first[s]`.
    pub fn from_first_action(first: &[f64]) -> LeaderPolicy {
        LeaderPolicy {
            probs: first.iter().map(|&p| vec![p, 1.0 - p]).collect(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    /// Checks the policy shape and rows against `game`.
    pub fn check_for(&self, game: &Game) -> Result<()> {
        check_len(self.probs.len(), game.num_states)?;
        for row in &self.probs {
            check_len(row.len(), game.num_leader_actions)?;
        }
        LeaderPolicy::new(self.probs.clone()).map(|_| ())
    }

    /// Row-major flattening, used for CSV export.
    pub fn flatten(&self) -> Vec<f64> {
        self.probs.iter().flatten().copied().collect()
    }
}

/// A deterministic follower policy: `actions[s]` is the follower's action.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FollowerPolicy {
    pub actions: Vec<usize>,
}

impl FollowerPolicy {
    pub fn new(actions: Vec<usize>) -> FollowerPolicy {
        FollowerPolicy { actions }
    }

    pub fn check_for(&self, game: &Game) -> Result<()> {
        check_len(self.actions.len(), game.num_states)?;
        for &b in &self.actions {
            check_index("follower action", b, game.num_follower_actions)?;
        }
        Ok(())
    }

    /// Every deterministic follower policy, in lexicographic order.
    pub fn enumerate_all(num_states: usize, num_actions: usize) -> Vec<FollowerPolicy> {
        let total = num_actions.pow(num_states as u32);
        (0..total)
            .map(|mut code| {
                let mut actions = vec![0; num_states];
                for slot in actions.iter_mut().rev() {
                    *slot = code % num_actions;
                    code /= num_actions;
                }
                FollowerPolicy { actions }
            })
            .collect()
    }
}

impl fmt::Display for FollowerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.actions.iter().map(|b| format!("b{}", b + 1)).collect();
        write!(f, "({})", labels.join(", "))
    }
}

/// A real vector indexed by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(n: usize) -> ValueFunction {
        ValueFunction(vec![0.0; n])
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ValueFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ValueFunction {
    fn from(v: Vec<f64>) -> Self {
        ValueFunction(v)
    }
}

/// Outcome of comparing two value vectors `v` and `v'` with slack `η`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dominance {
    /// `v ≐ v'`
    Equal,
    /// `v ≻ v'`
    StrictlyDominates,
    /// `v' ≻ v`
    Dominated,
    Incomparable,
}

impl Dominance {
    /// `v ⪰ v'`
    pub fn weakly_dominates(self) -> bool {
        matches!(self, Dominance::Equal | Dominance::StrictlyDominates)
    }

    /// `v' ⪰ v`
    pub fn weakly_dominated(self) -> bool {
        matches!(self, Dominance::Equal | Dominance::Dominated)
    }

    pub fn reverse(self) -> Dominance {
        match self {
            Dominance::StrictlyDominates => Dominance::Dominated,
            Dominance::Dominated => Dominance::StrictlyDominates,
            other => other,
        }
    }
}

/// Classifies `(v, v')` under the componentwise order with slack `eta`.
pub fn compare(v: &[f64], other: &[f64], eta: f64) -> Result<Dominance> {
    check_len(other.len(), v.len())?;
    Ok(compare_unchecked(v, other, eta))
}

pub(crate) fn compare_unchecked(v: &[f64], other: &[f64], eta: f64) -> Dominance {
    let mut above = false;
    let mut below = false;
    for (x, y) in v.iter().zip(other) {
        let d = x - y;
        if d > eta {
            above = true;
        } else if d < -eta {
            below = true;
        }
    }
    match (above, below) {
        (false, false) => Dominance::Equal,
        (true, false) => Dominance::StrictlyDominates,
        (false, true) => Dominance::Dominated,
        (true, true) => Dominance::Incomparable,
    }
}

/// The two-state game without a stationary Stackelberg equilibrium.
///
/// States `s₁, s₂`, leader actions `a₁, a₂`, follower actions `b₁, b₂`, all
/// transitions deterministic:
///
/// | action pair | next state | rewards (leader, follower) |
/// |---|---|---|
/// | `(a₁, b₁)` | same state | `(1, 0)` |
/// | `(a₁, b₂)` | other state | `(0, x)` |
/// | `(a₂, ·)` | other state | `(0, -y)` |
///
/// The initial distribution is uniform.
pub fn make_example_game(x: f64, y: f64, gamma_leader: f64, gamma_follower: f64) -> Result<Game> {
    if !(x > 0.0 && x.is_finite()) || !(y > 0.0 && y.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "x and y must be positive and finite, got x={x}, y={y}"
        )));
    }
    let ns = 2;
    let point = |t: usize| {
        let mut row = vec![0.0; ns];
        row[t] = 1.0;
        row
    };
    let mut transition = vec![vec![vec![Vec::new(); 2]; 2]; ns];
    let mut reward_leader = vec![vec![vec![0.0; 2]; 2]; ns];
    let mut reward_follower = vec![vec![vec![0.0; 2]; 2]; ns];
    for s in 0..ns {
        let other = 1 - s;
        transition[s][0][0] = point(s);
        reward_leader[s][0][0] = 1.0;
        reward_follower[s][0][0] = 0.0;

        transition[s][0][1] = point(other);
        reward_leader[s][0][1] = 0.0;
        reward_follower[s][0][1] = x;

        for b in 0..2 {
            transition[s][1][b] = point(other);
            reward_leader[s][1][b] = 0.0;
            reward_follower[s][1][b] = -y;
        }
    }
    Game {
        num_states: ns,
        num_leader_actions: 2,
        num_follower_actions: 2,
        transition,
        reward_leader,
        reward_follower,
        gamma_leader,
        gamma_follower,
        initial_distribution: vec![0.5, 0.5],
    }
    .validated()
}

/// Parameters for [`random_game`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGameSpec {
    pub num_states: usize,
    pub num_leader_actions: usize,
    pub num_follower_actions: usize,
    pub reward_min: f64,
    pub reward_max: f64,
    pub gamma_leader: f64,
    pub gamma_follower: f64,
    /// Transition rows are compositions of this many unit masses.
    pub lattice: usize,
    /// Round rewards to integers (produces exact ties more often).
    pub integer_rewards: bool,
    /// Copy the leader reward to the follower and use `gamma_leader` for both.
    pub cooperative: bool,
}

impl RandomGameSpec {
    pub fn new(num_states: usize, num_leader_actions: usize, num_follower_actions: usize) -> Self {
        RandomGameSpec {
            num_states,
            num_leader_actions,
            num_follower_actions,
            reward_min: -1.0,
            reward_max: 1.0,
            gamma_leader: 0.5,
            gamma_follower: 0.9,
            lattice: 10,
            integer_rewards: false,
            cooperative: false,
        }
    }

    pub fn gammas(mut self, leader: f64, follower: f64) -> Self {
        self.gamma_leader = leader;
        self.gamma_follower = follower;
        self
    }

    pub fn rewards(mut self, min: f64, max: f64) -> Self {
        self.reward_min = min;
        self.reward_max = max;
        self
    }

    pub fn cooperative(mut self) -> Self {
        self.cooperative = true;
        self
    }

    pub fn integer_rewards(mut self) -> Self {
        self.integer_rewards = true;
        self
    }
}

/// A uniformly random composition of `total` into `parts` non-negative parts.
fn lattice_row<R: Rng>(rng: &mut R, parts: usize, total: usize) -> Vec<f64> {
    // stars and bars: choose `parts - 1` bar slots among `total + parts - 1`
    let slots = total + parts - 1;
    let mut bars = rand::seq::index::sample(rng, slots, parts - 1).into_vec();
    bars.sort_unstable();
    bars.push(slots);
    let mut start = 0usize;
    bars.into_iter()
        .map(|bar| {
            let count = bar - start;
            start = bar + 1;
            count as f64 / total as f64
        })
        .collect()
}

/// Generates a seeded random game. Identical `(spec, seed)` pairs give
/// identical games.
pub fn random_game(spec: &RandomGameSpec, seed: u64) -> Result<Game> {
    let (ns, na, nb) = (
        spec.num_states,
        spec.num_leader_actions,
        spec.num_follower_actions,
    );
    if ns == 0 || na == 0 || nb == 0 || spec.lattice == 0 {
        return Err(Error::InvalidParameter(
            "sizes and lattice must be positive".into(),
        ));
    }
    if !(spec.reward_min <= spec.reward_max)
        || !spec.reward_min.is_finite()
        || !spec.reward_max.is_finite()
    {
        return Err(Error::InvalidParameter(format!(
            "reward range [{}, {}] is invalid",
            spec.reward_min, spec.reward_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = vec![vec![vec![Vec::new(); nb]; na]; ns];
    for row in transition.iter_mut().flatten().flatten() {
        *row = lattice_row(&mut rng, ns, spec.lattice);
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let r = if spec.reward_min == spec.reward_max {
            spec.reward_min
        } else {
            rng.gen_range(spec.reward_min..=spec.reward_max)
        };
        if spec.integer_rewards {
            r.round()
        } else {
            r
        }
    };
    let mut reward_leader = vec![vec![vec![0.0; nb]; na]; ns];
    for r in reward_leader.iter_mut().flatten().flatten() {
        *r = draw(&mut rng);
    }
    let (reward_follower, gamma_follower) = if spec.cooperative {
        (reward_leader.clone(), spec.gamma_leader)
    } else {
        let mut rf = vec![vec![vec![0.0; nb]; na]; ns];
        for r in rf.iter_mut().flatten().flatten() {
            *r = draw(&mut rng);
        }
        (rf, spec.gamma_follower)
    };
    Game {
        num_states: ns,
        num_leader_actions: na,
        num_follower_actions: nb,
        transition,
        reward_leader,
        reward_follower,
        gamma_leader: spec.gamma_leader,
        gamma_follower,
        initial_distribution: vec![1.0 / ns as f64; ns],
    }
    .validated()
}

/// A seeded random leader policy with rows on the `1/lattice` grid.
pub fn random_leader_policy(
    num_states: usize,
    num_actions: usize,
    lattice: usize,
    seed: u64,
) -> LeaderPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LeaderPolicy {
        probs: (0..num_states)
            .map(|_| lattice_row(&mut rng, num_actions, lattice))
            .collect(),
    }
}

//! The one-step game operator `T` and fixed-point equilibria (FPE).
//!
//! At each state the leader commits to a mixed action `f_s`, the follower
//! answers with the action maximizing its one-step value under continuation
//! `v_B`, and both collect their one-step values under `(v_A, v_B)`. The
//! follower's choice partitions `Δ(A)` into polytopes `D_b` on which the
//! leader objective is linear, so the leader's problem is solved by
//! enumerating the vertices of each (closed) region.
//!
//! Iterating `T` need not converge. [`iterate_to_fixed_point`] reports
//! convergence, exhaustion of the iteration budget, or a detected cycle.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{FollowerPolicy, Game, LeaderPolicy, Player, ValueFunction};
use crate::mdp::{check_values, dot, evaluate_pair_unchecked, pick_max, TieBreak, TIE_SLACK};
use crate::simplex::{binomial, count_compositions, lattice_points};

/// Feasibility tolerance for polytope vertices.
pub const VERTEX_TOL: f64 = 1e-9;

/// Relative shrinkage of the step size over one window that still counts as
/// a cycle rather than a contraction.
pub const CYCLE_DECAY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    #[serde(rename = "v_A")]
    pub v_a: ValueFunction,
    #[serde(rename = "v_B")]
    pub v_b: ValueFunction,
}

impl ValuePair {
    pub fn zeros(n: usize) -> ValuePair {
        ValuePair {
            v_a: ValueFunction::zeros(n),
            v_b: ValueFunction::zeros(n),
        }
    }

    pub fn sup_distance(&self, other: &ValuePair) -> f64 {
        self.v_a
            .sup_distance(&other.v_a)
            .max(self.v_b.sup_distance(&other.v_b))
    }
}

/// Which follower action is assumed on a region boundary, where the
/// follower is indifferent between several actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionTieRule {
    /// Tied follower actions resolve in the leader's favour (closed-region
    /// maximization).
    #[default]
    Optimistic,
    /// Tied follower actions resolve against the leader.
    Pessimistic,
}

impl std::str::FromStr for RegionTieRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimistic" => Ok(RegionTieRule::Optimistic),
            "pessimistic" => Ok(RegionTieRule::Pessimistic),
            other => Err(Error::InvalidParameter(format!(
                "unknown region tie rule `{other}` (expected optimistic or pessimistic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpeConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Number of past iterates searched for a repeat.
    pub cycle_window: usize,
    pub tie_break: TieBreak,
    pub region_tie: RegionTieRule,
    /// Active-set combinations per region above which the exact vertex
    /// enumeration gives way to a lattice search.
    pub vertex_cap: u128,
}

impl Default for FpeConfig {
    fn default() -> Self {
        FpeConfig {
            tol: 1e-8,
            max_iters: 10_000,
            cycle_window: 64,
            tie_break: TieBreak::default(),
            region_tie: RegionTieRule::default(),
            vertex_cap: 200_000,
        }
    }
}

impl FpeConfig {
    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || self.cycle_window < 2 {
            return Err(Error::InvalidParameter(
                "fpe needs tol > 0, max_iters >= 1 and cycle_window >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepSolution {
    pub leader_dist: Vec<f64>,
    pub follower_action: usize,
    /// `((Tv)_A(s), (Tv)_B(s))`
    pub payoffs: (f64, f64),
    /// The follower is indifferent between several actions at `leader_dist`.
    pub boundary_tie: bool,
    /// The solution came from the lattice fallback rather than exact
    /// vertex enumeration.
    pub approximate: bool,
}

/// One-step payoff coefficients at a state: `c[a][b] = r̂(s,a,b) + γ Σ p̂ v`.
struct StageGame {
    leader: Vec<Vec<f64>>,
    follower: Vec<Vec<f64>>,
    na: usize,
    nb: usize,
}

impl StageGame {
    fn new(game: &Game, s: usize, v: &ValuePair) -> StageGame {
        let coeffs = |player: Player, values: &[f64]| -> Vec<Vec<f64>> {
            let gamma = game.gamma(player);
            (0..game.num_leader_actions)
                .map(|a| {
                    (0..game.num_follower_actions)
                        .map(|b| {
                            game.reward(player, s, a, b)
                                + gamma * dot(game.next_state_dist(s, a, b), values)
                        })
                        .collect()
                })
                .collect()
        };
        StageGame {
            leader: coeffs(Player::Leader, &v.v_a),
            follower: coeffs(Player::Follower, &v.v_b),
            na: game.num_leader_actions,
            nb: game.num_follower_actions,
        }
    }

    fn q_leader(&self, x: &[f64], b: usize) -> f64 {
        x.iter().enumerate().map(|(a, w)| w * self.leader[a][b]).sum()
    }

    fn q_follower(&self, x: &[f64], b: usize) -> f64 {
        x.iter().enumerate().map(|(a, w)| w * self.follower[a][b]).sum()
    }

    /// Follower actions within [`TIE_SLACK`]-ish of the best at `x`.
    fn tied(&self, x: &[f64], slack: f64) -> Vec<usize> {
        let q: Vec<f64> = (0..self.nb).map(|b| self.q_follower(x, b)).collect();
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..self.nb).filter(|&b| q[b] >= best - slack).collect()
    }

    /// Region `D_b` as inequalities `g·x ≥ 0`: non-negativity first, then
    /// one row per competing follower action.
    fn region_constraints(&self, b: usize) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.na + self.nb - 1);
        for a in 0..self.na {
            let mut e = vec![0.0; self.na];
            e[a] = 1.0;
            rows.push(e);
        }
        for other in (0..self.nb).filter(|&o| o != b) {
            rows.push(
                (0..self.na)
                    .map(|a| self.follower[a][b] - self.follower[a][other])
                    .collect(),
            );
        }
        rows
    }

    /// Vertices of the closed region `D_b`.
    fn region_vertices(&self, b: usize) -> Vec<Vec<f64>> {
        let rows = self.region_constraints(b);
        let na = self.na;
        let mut out = Vec::new();
        if na == 1 {
            if feasible(&rows, &[1.0]) {
                out.push(vec![1.0]);
            }
            return out;
        }
        for active in Combinations::new(rows.len(), na - 1) {
            let mut a = DMatrix::<f64>::zeros(na, na);
            let mut rhs = DVector::<f64>::zeros(na);
            for j in 0..na {
                a[(0, j)] = 1.0;
            }
            rhs[0] = 1.0;
            for (i, &r) in active.iter().enumerate() {
                for j in 0..na {
                    a[(i + 1, j)] = rows[r][j];
                }
            }
            let Some(x) = a.lu().solve(&rhs) else {
                continue;
            };
            let x: Vec<f64> = x.iter().copied().collect();
            if x.iter().any(|v| !v.is_finite()) || !feasible(&rows, &x) {
                continue;
            }
            let mut x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
            let sum: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= sum);
            out.push(x);
        }
        out
    }
}

fn feasible(rows: &[Vec<f64>], x: &[f64]) -> bool {
    rows.iter().all(|g| {
        let scale = 1.0 + g.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        dot(g, x) >= -VERTEX_TOL * scale
    })
}

/// `k`-subsets of `0..n` in lexicographic order.
struct Combinations {
    idx: Vec<usize>,
    n: usize,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Combinations {
        Combinations {
            idx: (0..k).collect(),
            n,
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        match (0..k).rev().find(|&i| self.idx[i] < self.n - k + i) {
            Some(i) => {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
            }
            None => self.done = true,
        }
        Some(out)
    }
}

/// `R_B(s, f_s, v_B)`: the follower's one-step best response.
pub fn one_step_follower_response(
    game: &Game,
    s: usize,
    f_s: &[f64],
    v_b: &[f64],
    tie: TieBreak,
) -> Result<usize> {
    check_state_inputs(game, s, f_s)?;
    check_values(game, v_b)?;
    Ok(follower_response_unchecked(game, s, f_s, v_b, tie))
}

fn check_state_inputs(game: &Game, s: usize, f_s: &[f64]) -> Result<()> {
    if s >= game.num_states {
        return Err(Error::IndexOutOfRange {
            what: "state",
            index: s,
            len: game.num_states,
        });
    }
    if f_s.len() != game.num_leader_actions {
        return Err(Error::LengthMismatch {
            expected: game.num_leader_actions,
            found: f_s.len(),
        });
    }
    Ok(())
}

pub(crate) fn follower_response_unchecked(
    game: &Game,
    s: usize,
    f_s: &[f64],
    v_b: &[f64],
    tie: TieBreak,
) -> usize {
    let q = |x: &[f64], b: usize| -> f64 {
        x.iter()
            .enumerate()
            .map(|(a, w)| {
                w * (game.reward_follower[s][a][b]
                    + game.gamma_follower * dot(game.next_state_dist(s, a, b), v_b))
            })
            .sum()
    };
    let nb = game.num_follower_actions;
    let values: Vec<f64> = (0..nb).map(|b| q(f_s, b)).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..nb).filter(|&b| values[b] >= best - TIE_SLACK).collect();
    match tie {
        TieBreak::Lowest => tied[0],
        TieBreak::Optimistic => pick_max(&tied, |b| {
            f_s.iter()
                .enumerate()
                .map(|(a, w)| w * game.reward_leader[s][a][b])
                .sum()
        }),
        TieBreak::Perturbed => {
            let u = vec![1.0 / game.num_leader_actions as f64; game.num_leader_actions];
            pick_max(&tied, |b| q(&u, b))
        }
    }
}

/// `R_A(s, v)`: the leader's one-step Stackelberg commitment at `s`.
pub fn one_step_leader_solve(
    game: &Game,
    s: usize,
    v: &ValuePair,
    config: &FpeConfig,
) -> Result<OneStepSolution> {
    if s >= game.num_states {
        return Err(Error::IndexOutOfRange {
            what: "state",
            index: s,
            len: game.num_states,
        });
    }
    check_values(game, &v.v_a)?;
    check_values(game, &v.v_b)?;
    solve_stage(&StageGame::new(game, s, v), config)
}

fn solve_stage(stage: &StageGame, config: &FpeConfig) -> Result<OneStepSolution> {
    let combos = binomial((stage.na + stage.nb - 1) as u64, (stage.na - 1) as u64);
    let approximate = combos > config.vertex_cap;
    let candidates: Vec<(usize, Vec<f64>)> = if approximate {
        lattice_candidates(stage)
    } else {
        (0..stage.nb)
            .flat_map(|b| stage.region_vertices(b).into_iter().map(move |x| (b, x)))
            .collect()
    };

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for (b, x) in candidates {
        let (value, action) = match config.region_tie {
            RegionTieRule::Optimistic => (stage.q_leader(&x, b), b),
            RegionTieRule::Pessimistic => {
                let tied = stage.tied(&x, VERTEX_TOL);
                let worst = tied
                    .iter()
                    .copied()
                    .min_by(|&p, &q| {
                        stage
                            .q_leader(&x, p)
                            .total_cmp(&stage.q_leader(&x, q))
                            .then(p.cmp(&q))
                    })
                    .expect("some follower action is maximal");
                (stage.q_leader(&x, worst), worst)
            }
        };
        let better = match &best {
            None => true,
            Some((bv, bb, _)) => value > bv + 1e-12 || (value >= bv - 1e-12 && action < *bb),
        };
        if better {
            best = Some((value, action, x));
        }
    }
    let (value, action, x) = best.ok_or_else(|| {
        Error::InvariantBreach("every follower-response region was empty".into())
    })?;
    let boundary_tie = stage.tied(&x, VERTEX_TOL).len() > 1;
    Ok(OneStepSolution {
        payoffs: (value, stage.q_follower(&x, action)),
        follower_action: action,
        leader_dist: x,
        boundary_tie,
        approximate,
    })
}

/// Fallback for large action sets: every lattice point labelled with each
/// follower action it is (nearly) optimal for.
fn lattice_candidates(stage: &StageGame) -> Vec<(usize, Vec<f64>)> {
    let mut resolution = 2;
    while count_compositions(resolution, stage.na) <= 20_000 {
        resolution += 1;
    }
    let mut out = Vec::new();
    for x in lattice_points(resolution, stage.na) {
        for b in stage.tied(&x, VERTEX_TOL) {
            out.push((b, x.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorOutput {
    pub values: ValuePair,
    pub leader_policy: LeaderPolicy,
    pub follower_policy: FollowerPolicy,
    /// States whose solution sits on a follower-indifference boundary.
    pub boundary_ties: usize,
    /// States solved by the lattice fallback.
    pub approximate_states: usize,
}

/// One application of `T`, with the stage policies it selects.
pub fn apply_operator(game: &Game, v: &ValuePair, config: &FpeConfig) -> Result<OperatorOutput> {
    check_values(game, &v.v_a)?;
    check_values(game, &v.v_b)?;
    apply_unchecked(game, v, config)
}

fn apply_unchecked(game: &Game, v: &ValuePair, config: &FpeConfig) -> Result<OperatorOutput> {
    let n = game.num_states;
    let mut v_a = Vec::with_capacity(n);
    let mut v_b = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut boundary_ties = 0;
    let mut approximate_states = 0;
    for s in 0..n {
        let sol = solve_stage(&StageGame::new(game, s, v), config)?;
        v_a.push(sol.payoffs.0);
        v_b.push(sol.payoffs.1);
        probs.push(sol.leader_dist);
        actions.push(sol.follower_action);
        boundary_ties += usize::from(sol.boundary_tie);
        approximate_states += usize::from(sol.approximate);
    }
    Ok(OperatorOutput {
        values: ValuePair {
            v_a: ValueFunction(v_a),
            v_b: ValueFunction(v_b),
        },
        leader_policy: LeaderPolicy { probs },
        follower_policy: FollowerPolicy::new(actions),
        boundary_ties,
        approximate_states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpeStatus {
    Converged,
    MaxIters,
    CycleDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub status: FpeStatus,
    pub iterations: usize,
    pub values: ValuePair,
    /// `‖T v_t − v_t‖_∞` per iteration.
    pub deltas: Vec<f64>,
    /// FPE stage policies `(f̄, ḡ)`, present on convergence.
    pub leader_policy: Option<LeaderPolicy>,
    pub follower_policy: Option<FollowerPolicy>,
    /// Period of the detected cycle.
    pub cycle_period: Option<usize>,
    /// Operator applications that hit a follower-indifference boundary.
    pub boundary_tie_steps: usize,
}

/// Repeatedly applies `T` from `v0`.
///
/// A cycle is reported once, for `cycle_window` consecutive iterations, the
/// new iterate has come back within `tol` of one of the last
/// `cycle_window` iterates (other than its immediate predecessor) without
/// converging, and the step size one window earlier at the same phase was
/// no larger (up to a relative [`CYCLE_DECAY_TOL`]). The last condition separates cycles from
/// slowly contracting oscillations.
pub fn iterate_to_fixed_point(
    game: &Game,
    v0: &ValuePair,
    config: &FpeConfig,
) -> Result<FixedPointReport> {
    config.check()?;
    check_values(game, &v0.v_a)?;
    check_values(game, &v0.v_b)?;
    let window = config.cycle_window;
    let mut history: VecDeque<ValuePair> = VecDeque::with_capacity(window + 1);
    let mut v = v0.clone();
    let mut deltas = Vec::new();
    let mut boundary_tie_steps = 0;
    let mut streak = 0;
    for it in 1..=config.max_iters {
        let out = apply_unchecked(game, &v, config)?;
        boundary_tie_steps += usize::from(out.boundary_ties > 0);
        let delta = out.values.sup_distance(&v);
        deltas.push(delta);
        if delta <= config.tol {
            return Ok(FixedPointReport {
                status: FpeStatus::Converged,
                iterations: it,
                values: out.values,
                deltas,
                leader_policy: Some(out.leader_policy),
                follower_policy: Some(out.follower_policy),
                cycle_period: None,
                boundary_tie_steps,
            });
        }
        history.push_front(v);
        history.truncate(window);
        // history[k - 1] holds v_{t+1-k}
        let period = (2..=history.len())
            .find(|&k| out.values.sup_distance(&history[k - 1]) <= config.tol);
        streak = if period.is_some() { streak + 1 } else { 0 };
        v = out.values;
        // A contracting oscillation also revisits old iterates within `tol`;
        // a cycle additionally keeps its step size at the same phase.
        let persistent = |k: usize| {
            let back = k * (window / k);
            deltas.len() > back && delta >= (1.0 - CYCLE_DECAY_TOL) * deltas[deltas.len() - 1 - back]
        };
        if let Some(k) = period.filter(|&k| streak >= window && persistent(k)) {
            return Ok(FixedPointReport {
                status: FpeStatus::CycleDetected,
                iterations: it,
                values: v,
                deltas,
                leader_policy: None,
                follower_policy: None,
                cycle_period: Some(k),
                boundary_tie_steps,
            });
        }
    }
    Ok(FixedPointReport {
        status: FpeStatus::MaxIters,
        iterations: config.max_iters,
        values: v,
        deltas,
        leader_policy: None,
        follower_policy: None,
        cycle_period: None,
        boundary_tie_steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    /// `max_{g,s} V_B^{f̄g}(s) − V_B(s)`, clipped at zero.
    pub follower_violation: f64,
    /// `‖V_B^{f̄ḡ} − V_B‖_∞`
    pub follower_equality_gap: f64,
    /// `max_{f,s} V_A^{f R_B(f,V_B)}(s) − V_A(s)`, clipped at zero.
    pub leader_violation: f64,
    /// `‖V_A^{f̄ḡ} − V_A‖_∞`
    pub leader_equality_gap: f64,
    pub max_violation: f64,
    pub leader_probes: usize,
    pub follower_probes: usize,
}

/// Checks the fixed-point characterization at a converged `v` with stage
/// policies `(f̄, ḡ)`: the follower's `ḡ` is a best response to `f̄`, and
/// no probed leader policy (met by the frozen-continuation follower
/// response) beats `V_A`.
pub fn verify_theorem2(
    game: &Game,
    v: &ValuePair,
    f_bar: &LeaderPolicy,
    g_bar: &FollowerPolicy,
    probe_leader_policies: &[LeaderPolicy],
    probe_follower_policies: &[FollowerPolicy],
    tie: TieBreak,
) -> Result<Theorem2Report> {
    check_values(game, &v.v_a)?;
    check_values(game, &v.v_b)?;
    f_bar.check_for(game)?;
    g_bar.check_for(game)?;
    let excess = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .fold(0.0_f64, |m, (a, b)| m.max(a - b))
    };

    let mut follower_violation = 0.0_f64;
    for g in probe_follower_policies {
        g.check_for(game)?;
        let vb = evaluate_pair_unchecked(game, Player::Follower, f_bar, g)?;
        follower_violation = follower_violation.max(excess(&vb, &v.v_b));
    }
    let follower_equality_gap =
        evaluate_pair_unchecked(game, Player::Follower, f_bar, g_bar)?.sup_distance(&v.v_b);

    let mut leader_violation = 0.0_f64;
    for f in probe_leader_policies {
        f.check_for(game)?;
        let g = FollowerPolicy::new(
            (0..game.num_states)
                .map(|s| follower_response_unchecked(game, s, f.row(s), &v.v_b, tie))
                .collect(),
        );
        let va = evaluate_pair_unchecked(game, Player::Leader, f, &g)?;
        leader_violation = leader_violation.max(excess(&va, &v.v_a));
    }
    let leader_equality_gap =
        evaluate_pair_unchecked(game, Player::Leader, f_bar, g_bar)?.sup_distance(&v.v_a);

    Ok(Theorem2Report {
        follower_violation,
        follower_equality_gap,
        leader_violation,
        leader_equality_gap,
        max_violation: follower_violation
            .max(follower_equality_gap)
            .max(leader_violation)
            .max(leader_equality_gap),
        leader_probes: probe_leader_policies.len(),
        follower_probes: probe_follower_policies.len(),
    })
}

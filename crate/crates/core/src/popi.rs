//! Pareto-Optimal Policy Iteration (POPI).
//!
//! Each iteration evaluates the dagger value `v_t = V_A^{f_t†}` and looks
//! for candidates `f` with `Q_A^{f_t†}(·, f) ⪰ v_t` that improve some state.
//! Such a candidate never lowers the leader's value anywhere, so the value
//! sequence is monotone. Among the improving candidates, one whose
//! scalarized gain is within a factor `1 − ε` of the best is chosen at
//! random.
//!
//! The improving set is a continuum, so candidates come from a finite
//! search:
//!
//! * [`PopiMode::IdealGrid`] scans a lattice of probe policies.
//! * [`PopiMode::PracticalSplit`] groups the probes by follower best
//!   response. Inside one group `Q` is affine in `f`, so each group is
//!   searched with a feasibility step followed by projected Pareto ascent.
//! * [`PopiMode::Backtracking`] runs the grid search and, when it stops at a
//!   policy it cannot certify as Pareto optimal, restarts from an unexplored
//!   earlier candidate.
//!
//! All randomness comes from one ChaCha8 stream seeded by
//! [`PopiConfig::seed`], so equal configurations give identical traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::game::{
    compare_unchecked, Dominance, FollowerPolicy, Game, LeaderPolicy, Player, ValueFunction, ETA,
};
use crate::improve::{sufficient_over_probes, Scalarization};
use crate::mdp::{
    best_response_unchecked, dot, evaluate_pair_unchecked, leader_q_coefficients,
    BestResponseResult, Probe, TieBreak,
};
use crate::oracle::{grid_unchecked, GridSpec};
use crate::simplex::{lattice_points, project_simplex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopiMode {
    IdealGrid,
    #[default]
    PracticalSplit,
    Backtracking,
}

impl std::str::FromStr for PopiMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal-grid" => Ok(PopiMode::IdealGrid),
            "practical-split" => Ok(PopiMode::PracticalSplit),
            "backtracking" => Ok(PopiMode::Backtracking),
            other => Err(Error::InvalidParameter(format!(
                "unknown mode `{other}` (expected ideal-grid, practical-split or backtracking)"
            ))),
        }
    }
}

/// Whether the region search stops at the first strictly improving region
/// or scans all of them before selecting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionScan {
    FirstImprover,
    #[default]
    AllRegions,
}

impl std::str::FromStr for RegionScan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-improver" => Ok(RegionScan::FirstImprover),
            "all-regions" => Ok(RegionScan::AllRegions),
            other => Err(Error::InvalidParameter(format!(
                "unknown scan `{other}` (expected first-improver or all-regions)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Lattice points per simplex edge for the probe grid.
    pub resolution: usize,
    /// Grids larger than this are replaced by this many sampled lattice
    /// policies.
    pub max_probes: usize,
    pub ascent_step: f64,
    /// Step multiplier after a rejected step.
    pub shrink: f64,
    pub max_ascent_steps: usize,
    pub feasibility_steps: usize,
    /// Cap on the stored candidate pool per iteration.
    pub pool_cap: usize,
    pub scan: RegionScan,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            resolution: 21,
            max_probes: 20_000,
            ascent_step: 0.1,
            shrink: 0.5,
            max_ascent_steps: 50,
            feasibility_steps: 50,
            pool_cap: 256,
            scan: RegionScan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopiConfig {
    pub scalarization: Scalarization,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Runs stop once an accepted step gains less than this in `L`.
    pub improvement_tol: f64,
    pub search: SearchConfig,
    pub mode: PopiMode,
    pub seed: u64,
    pub tie_break: TieBreak,
}

impl PopiConfig {
    /// Defaults for `game`, scalarizing with its initial distribution.
    pub fn for_game(game: &Game) -> PopiConfig {
        PopiConfig {
            scalarization: Scalarization::from_initial_distribution(game),
            epsilon: 0.1,
            max_iters: 100,
            improvement_tol: 1e-10,
            search: SearchConfig::default(),
            mode: PopiMode::default(),
            seed: 0,
            tie_break: TieBreak::default(),
        }
    }

    pub fn mode(mut self, mode: PopiMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn resolution(mut self, resolution: usize) -> Self {
        self.search.resolution = resolution;
        self
    }

    pub fn weights(mut self, scalarization: Scalarization) -> Self {
        self.scalarization = scalarization;
        self
    }

    fn check(&self, game: &Game) -> Result<()> {
        let s = &self.search;
        let problems = [
            (!(0.0..1.0).contains(&self.epsilon), "epsilon must lie in [0, 1)"),
            (self.max_iters == 0, "max_iters must be at least 1"),
            (!(self.improvement_tol > 0.0), "improvement_tol must be positive"),
            (s.resolution < 2, "resolution must be at least 2"),
            (s.max_probes == 0, "max_probes must be positive"),
            (!(s.ascent_step > 0.0), "ascent_step must be positive"),
            (!(s.shrink > 0.0 && s.shrink < 1.0), "shrink must lie in (0, 1)"),
            (
                self.scalarization.len() != game.num_states,
                "scalarization length must equal the number of states",
            ),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::InvalidParameter((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Leader policies sharing one follower best response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub response: FollowerPolicy,
    pub members: Vec<LeaderPolicy>,
}

/// Groups probes by their follower best response, ordered by the response.
pub fn split_regions(
    game: &Game,
    probe_policies: &[LeaderPolicy],
    tie: TieBreak,
) -> Result<Vec<Region>> {
    if probe_policies.is_empty() {
        return Err(Error::InvalidParameter("probe set is empty".into()));
    }
    let mut map: BTreeMap<FollowerPolicy, Vec<LeaderPolicy>> = BTreeMap::new();
    for f in probe_policies {
        let p = Probe::new(game, f.clone(), tie)?;
        map.entry(p.response).or_default().push(p.policy);
    }
    Ok(map
        .into_iter()
        .map(|(response, members)| Region { response, members })
        .collect())
}

/// Lower slack for `Q ⪰ v`. Using `(1 − γ_A)·η` instead of `η` keeps the
/// resulting dagger value within `η` of `v` from below.
fn lower_slack(game: &Game) -> f64 {
    (1.0 - game.gamma_leader) * ETA
}

fn admissible(q: &[f64], v: &[f64], slack: f64) -> bool {
    q.iter().zip(v).all(|(a, b)| *a >= b - slack)
}

/// Strict improvement threshold `2η`, which keeps the dagger value more than
/// `η` above `v` somewhere.
fn strictly_improves(q: &[f64], v: &[f64]) -> bool {
    q.iter().zip(v).any(|(a, b)| a - b > 2.0 * ETA)
}

fn q_from_coefficients(f: &LeaderPolicy, c: &[Vec<f64>]) -> Vec<f64> {
    c.iter().enumerate().map(|(s, cs)| dot(f.row(s), cs)).collect()
}

/// Steepest direction in the box `‖Δ‖_∞ ≤ 1` that keeps the row on the
/// simplex: moves unit mass from the worst supported actions to the best.
fn ascent_direction(f_s: &[f64], c: &[f64]) -> Vec<f64> {
    let na = c.len();
    let mut up: Vec<usize> = (0..na).collect();
    up.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    let mut down: Vec<usize> = (0..na).filter(|&a| f_s[a] > 0.0).collect();
    down.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
    let mut d = vec![0.0; na];
    let mut used = vec![false; na];
    let (mut i, mut j) = (0, 0);
    loop {
        while i < up.len() && used[up[i]] {
            i += 1;
        }
        while j < down.len() && used[down[j]] {
            j += 1;
        }
        if i >= up.len() || j >= down.len() {
            break;
        }
        let (hi, lo) = (up[i], down[j]);
        if hi == lo || c[hi] <= c[lo] {
            break;
        }
        d[hi] = 1.0;
        d[lo] = -1.0;
        used[hi] = true;
        used[lo] = true;
    }
    d
}

fn moved(f: &LeaderPolicy, rows: &[usize], dirs: &[Vec<f64>], step: f64) -> LeaderPolicy {
    let mut probs = f.probs.clone();
    for &s in rows {
        let y: Vec<f64> = f.row(s).iter().zip(&dirs[s]).map(|(x, d)| x + step * d).collect();
        probs[s] = project_simplex(&y);
    }
    LeaderPolicy { probs }
}

fn in_region(game: &Game, f: &LeaderPolicy, g: &FollowerPolicy, tie: TieBreak) -> Result<bool> {
    Ok(best_response_unchecked(game, f, tie)?.policy == *g)
}

/// Looks for `f` in the region with `max_s (v_t − Q(·, f))(s) ≤ 0`.
///
/// The best feasible member (by scalarized gain) is returned directly.
/// Otherwise projected subgradient steps start from the member with the
/// smallest violation; steps leaving the region or not reducing the
/// violation are halved.
pub fn feasibility_search(
    game: &Game,
    v_t: &ValueFunction,
    region: &Region,
    config: &PopiConfig,
) -> Result<Option<LeaderPolicy>> {
    crate::mdp::check_values(game, v_t)?;
    feasibility_inner(game, v_t, &region.response, region.members.iter(), config)
}

fn feasibility_inner<'a>(
    game: &Game,
    v: &[f64],
    g: &FollowerPolicy,
    members: impl Iterator<Item = &'a LeaderPolicy>,
    config: &PopiConfig,
) -> Result<Option<LeaderPolicy>> {
    let c = leader_q_coefficients(game, v, g);
    let slack = lower_slack(game);
    let violation = |f: &LeaderPolicy| -> f64 {
        q_from_coefficients(f, &c)
            .iter()
            .zip(v)
            .fold(f64::NEG_INFINITY, |m, (q, x)| m.max(x - q))
    };
    let gain = |f: &LeaderPolicy| -> f64 {
        let q = q_from_coefficients(f, &c);
        let d: Vec<f64> = q.iter().zip(v).map(|(a, b)| a - b).collect();
        config.scalarization.apply(&d)
    };

    let mut best_feasible: Option<(f64, &LeaderPolicy)> = None;
    let mut least_violating: Option<(f64, &LeaderPolicy)> = None;
    for f in members {
        let z = violation(f);
        if z <= slack {
            let gn = gain(f);
            if best_feasible.map_or(true, |(bg, _)| gn > bg) {
                best_feasible = Some((gn, f));
            }
        } else if least_violating.map_or(true, |(bz, _)| z < bz) {
            least_violating = Some((z, f));
        }
    }
    if let Some((_, f)) = best_feasible {
        return Ok(Some(f.clone()));
    }
    let Some((mut z, start)) = least_violating else {
        return Ok(None);
    };
    let mut f = start.clone();
    let mut step = config.search.ascent_step;
    for _ in 0..config.search.feasibility_steps {
        if z <= slack {
            break;
        }
        let q = q_from_coefficients(&f, &c);
        let rows: Vec<usize> = (0..game.num_states).filter(|&s| v[s] - q[s] > slack).collect();
        let dirs: Vec<Vec<f64>> = (0..game.num_states)
            .map(|s| ascent_direction(f.row(s), &c[s]))
            .collect();
        if rows.iter().all(|&s| dirs[s].iter().all(|d| *d == 0.0)) {
            break;
        }
        let trial = moved(&f, &rows, &dirs, step);
        let zt = violation(&trial);
        if zt < z && in_region(game, &trial, g, config.tie_break)? {
            f = trial;
            z = zt;
        } else {
            step *= config.search.shrink;
            if step < 1e-12 {
                break;
            }
        }
    }
    Ok((z <= slack).then_some(f))
}

/// Projected Pareto ascent inside the region of follower response `g`.
///
/// `Q(s, ·)` depends only on row `f(s)` and is linear in it while the
/// follower plays `g`, so the direction maximizing the smallest directional
/// derivative decouples by state; each state moves along its own steepest
/// feasible direction. Steps are halved until no state's `Q` decreases and
/// the follower response is still `g`.
pub fn pareto_ascent(
    game: &Game,
    v_t: &ValueFunction,
    f_start: &LeaderPolicy,
    g: &FollowerPolicy,
    config: &PopiConfig,
) -> Result<LeaderPolicy> {
    crate::mdp::check_values(game, v_t)?;
    f_start.check_for(game)?;
    g.check_for(game)?;
    ascent_inner(game, v_t, f_start.clone(), g, config)
}

fn ascent_inner(
    game: &Game,
    v: &[f64],
    mut f: LeaderPolicy,
    g: &FollowerPolicy,
    config: &PopiConfig,
) -> Result<LeaderPolicy> {
    let c = leader_q_coefficients(game, v, g);
    let n = game.num_states;
    'outer: for _ in 0..config.search.max_ascent_steps {
        let dirs: Vec<Vec<f64>> = (0..n).map(|s| ascent_direction(f.row(s), &c[s])).collect();
        let rows: Vec<usize> = (0..n).filter(|&s| dot(&dirs[s], &c[s]) > ETA).collect();
        if rows.is_empty() {
            break;
        }
        let q = q_from_coefficients(&f, &c);
        let mut step = config.search.ascent_step;
        loop {
            let trial = moved(&f, &rows, &dirs, step);
            let qt = q_from_coefficients(&trial, &c);
            let no_loss = qt
                .iter()
                .zip(&q)
                .all(|(a, b)| *a >= b - 1e-13 * (1.0 + b.abs()));
            let gains = qt.iter().zip(&q).any(|(a, b)| a > b);
            if no_loss && gains && in_region(game, &trial, g, config.tie_break)? {
                f = trial;
                break;
            }
            step *= config.search.shrink;
            if step < 1e-12 {
                break 'outer;
            }
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub policy: LeaderPolicy,
    pub values: ValueFunction,
    pub scalarized: f64,
    pub best_response: BestResponseResult,
    /// Iterate this one was derived from (`None` for starts).
    pub parent: Option<usize>,
    /// `compare(values, parent values, η)`
    pub relation_to_parent: Option<Dominance>,
    /// Set on the copy recorded when no improving candidate exists.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CandidateSource {
    Probe { index: usize },
    RegionSearch { region: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub source: CandidateSource,
    /// Follower best response of the candidate.
    pub region: FollowerPolicy,
    /// `L[Q(·, f)] − L[v_t]`
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iterate: usize,
    pub probes: usize,
    pub regions_scanned: usize,
    /// Strictly improving candidates found.
    pub improving: usize,
    /// Candidates within the `1 − ε` band.
    pub selectable: usize,
    pub chosen: Option<CandidateRecord>,
    /// The best improving candidates, up to the pool cap.
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// No candidate improves on the current value.
    ConvergedEqual,
    MaxIters,
    /// Backtracking stopped at a policy certified over the probe set.
    CertifiedBoundary,
    /// An accepted step gained less than `improvement_tol`.
    SmallImprovement,
    /// Backtracking ran out of unexplored candidates.
    PoolsExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopiTrace {
    pub iterates: Vec<Iterate>,
    pub termination: Termination,
    pub candidate_log: Vec<StepLog>,
    /// Index of the returned iterate.
    pub final_index: usize,
    /// Terminal outputs collected by backtracking.
    pub outputs: Vec<usize>,
    pub backtracks: usize,
    pub probes: usize,
    /// The probe set was sampled from a grid too large to enumerate.
    pub sampled_probes: bool,
}

impl PopiTrace {
    pub fn final_iterate(&self) -> &Iterate {
        &self.iterates[self.final_index]
    }

    pub fn final_values(&self) -> &ValueFunction {
        &self.final_iterate().values
    }

    /// Checks monotonicity along parent links and that equal steps are
    /// exactly the terminal ones. Returns a description of the first
    /// violation.
    pub fn verify(&self, eta: f64) -> std::result::Result<(), String> {
        for (i, it) in self.iterates.iter().enumerate() {
            let Some(p) = it.parent else { continue };
            let parent = &self.iterates[p];
            let rel = compare_unchecked(&it.values, &parent.values, eta);
            if !rel.weakly_dominates() {
                return Err(format!("iterate {i} does not weakly dominate its parent {p} ({rel:?})"));
            }
            if (rel == Dominance::Equal) != it.terminal {
                return Err(format!(
                    "iterate {i}: relation {rel:?} but terminal flag {}",
                    it.terminal
                ));
            }
            if it.scalarized < parent.scalarized - eta {
                return Err(format!("iterate {i} lowers the scalarized value"));
            }
        }
        Ok(())
    }

    /// CSV: one row per iterate.
    pub fn to_csv(&self) -> String {
        let n = self.iterates.first().map_or(0, |it| it.values.len());
        let mut out = String::new();
        let mut header = vec![
            "iteration".to_string(),
            "parent".to_string(),
            "scalarized".to_string(),
            "terminal".to_string(),
        ];
        header.extend((0..n).map(|s| format!("v_{s}")));
        let _ = writeln!(out, "{}", header.join(","));
        for (i, it) in self.iterates.iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                it.parent.map_or(String::new(), |p| p.to_string()),
                fmt_f64(it.scalarized),
                it.terminal.to_string(),
            ];
            row.extend(it.values.iter().map(|&x| fmt_f64(x)));
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub values: ValueFunction,
    pub terminal: bool,
    /// `Q_A^{f_t†}(·, f_{t+1})` of the chosen candidate.
    pub chosen_q: Option<ValueFunction>,
    pub log: StepLog,
}

struct Candidate {
    policy: LeaderPolicy,
    q: Vec<f64>,
    gain: f64,
    region: usize,
    source: CandidateSource,
}

struct StepOutcome {
    log: StepLog,
    chosen: Option<Candidate>,
    pool: Vec<LeaderPolicy>,
}

struct Searcher<'g> {
    game: &'g Game,
    config: &'g PopiConfig,
    probes: Vec<Probe>,
    sampled: bool,
    region_of: Vec<usize>,
    regions: Vec<(FollowerPolicy, Vec<usize>)>,
    rng: ChaCha8Rng,
}

/// Seed offset for the probe sampler, keeping it off the main stream.
const PROBE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

impl<'g> Searcher<'g> {
    fn new(game: &'g Game, config: &'g PopiConfig) -> Result<Searcher<'g>> {
        config.check(game)?;
        let spec = GridSpec::for_game(game, config.search.resolution)?;
        let sampled = spec.total > config.search.max_probes as u128;
        let policies: Vec<LeaderPolicy> = if sampled {
            let rows = lattice_points(config.search.resolution, game.num_leader_actions);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ PROBE_STREAM);
            (0..config.search.max_probes)
                .map(|_| LeaderPolicy {
                    probs: (0..game.num_states)
                        .map(|_| rows[rng.gen_range(0..rows.len())].clone())
                        .collect(),
                })
                .collect()
        } else {
            grid_unchecked(game.num_states, game.num_leader_actions, config.search.resolution)
                .collect()
        };
        let mut probes = Vec::with_capacity(policies.len());
        for f in policies {
            probes.push(Probe::new(game, f, config.tie_break)?);
        }
        let mut map: BTreeMap<FollowerPolicy, Vec<usize>> = BTreeMap::new();
        for (i, p) in probes.iter().enumerate() {
            map.entry(p.response.clone()).or_default().push(i);
        }
        let regions: Vec<(FollowerPolicy, Vec<usize>)> = map.into_iter().collect();
        let mut region_of = vec![0; probes.len()];
        for (r, (_, members)) in regions.iter().enumerate() {
            for &i in members {
                region_of[i] = r;
            }
        }
        Ok(Searcher {
            game,
            config,
            probes,
            sampled,
            region_of,
            regions,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    fn evaluate(
        &self,
        policy: LeaderPolicy,
        parent: Option<(usize, &Iterate)>,
        terminal: bool,
    ) -> Result<Iterate> {
        let best_response = best_response_unchecked(self.game, &policy, self.config.tie_break)?;
        let values =
            evaluate_pair_unchecked(self.game, Player::Leader, &policy, &best_response.policy)?;
        let scalarized = self.config.scalarization.apply(&values);
        Ok(Iterate {
            relation_to_parent: parent.map(|(_, p)| compare_unchecked(&values, &p.values, ETA)),
            parent: parent.map(|(i, _)| i),
            policy,
            values,
            scalarized,
            best_response,
            terminal,
        })
    }

    fn step(&mut self, current: &Iterate, index: usize) -> Result<StepOutcome> {
        let v = &current.values;
        let slack = lower_slack(self.game);
        let mut candidates = Vec::new();
        let mut regions_scanned = 0;
        let gain_of = |q: &[f64]| {
            let d: Vec<f64> = q.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
            self.config.scalarization.apply(&d)
        };

        match self.config.mode {
            PopiMode::IdealGrid | PopiMode::Backtracking => {
                let coeffs: Vec<Vec<Vec<f64>>> = self
                    .regions
                    .iter()
                    .map(|(g, _)| leader_q_coefficients(self.game, v, g))
                    .collect();
                regions_scanned = self.regions.len();
                for (i, p) in self.probes.iter().enumerate() {
                    let q = q_from_coefficients(&p.policy, &coeffs[self.region_of[i]]);
                    if admissible(&q, v, slack) && strictly_improves(&q, v) {
                        candidates.push(Candidate {
                            gain: gain_of(&q),
                            policy: p.policy.clone(),
                            q,
                            region: self.region_of[i],
                            source: CandidateSource::Probe { index: i },
                        });
                    }
                }
            }
            PopiMode::PracticalSplit => {
                let mut order: Vec<usize> = (0..self.regions.len()).collect();
                order.shuffle(&mut self.rng);
                for r in order {
                    regions_scanned += 1;
                    let (g, members) = &self.regions[r];
                    let own = (current.best_response.policy == *g).then_some(&current.policy);
                    let pool = members.iter().map(|&i| &self.probes[i].policy).chain(own);
                    let Some(start) = feasibility_inner(self.game, v, g, pool, self.config)? else {
                        continue;
                    };
                    let f = ascent_inner(self.game, v, start, g, self.config)?;
                    let c = leader_q_coefficients(self.game, v, g);
                    let q = q_from_coefficients(&f, &c);
                    if admissible(&q, v, slack) && strictly_improves(&q, v) {
                        candidates.push(Candidate {
                            gain: gain_of(&q),
                            policy: f,
                            q,
                            region: r,
                            source: CandidateSource::RegionSearch { region: r },
                        });
                        if self.config.search.scan == RegionScan::FirstImprover {
                            break;
                        }
                    }
                }
            }
        }

        let record = |c: &Candidate| CandidateRecord {
            source: c.source.clone(),
            region: self.regions[c.region].0.clone(),
            gain: c.gain,
        };
        let mut log = StepLog {
            iterate: index,
            probes: self.probes.len(),
            regions_scanned,
            improving: candidates.len(),
            selectable: 0,
            chosen: None,
            candidates: Vec::new(),
        };
        if candidates.is_empty() {
            return Ok(StepOutcome {
                log,
                chosen: None,
                pool: Vec::new(),
            });
        }

        let best = candidates
            .iter()
            .map(|c| c.gain)
            .fold(f64::NEG_INFINITY, f64::max);
        let threshold = best - self.config.epsilon * best.abs();
        let band: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].gain >= threshold)
            .collect();
        let pick = band[self.rng.gen_range(0..band.len())];

        let mut ranked: Vec<usize> = (0..candidates.len()).collect();
        ranked.sort_by(|&a, &b| candidates[b].gain.total_cmp(&candidates[a].gain).then(a.cmp(&b)));
        ranked.truncate(self.config.search.pool_cap);
        log.candidates = ranked.iter().map(|&i| record(&candidates[i])).collect();
        log.selectable = band.len();
        log.chosen = Some(record(&candidates[pick]));

        let pool: Vec<LeaderPolicy> = band
            .iter()
            .filter(|&&i| i != pick)
            .take(self.config.search.pool_cap)
            .map(|&i| candidates[i].policy.clone())
            .collect();
        let chosen = candidates.swap_remove(pick);
        Ok(StepOutcome {
            log,
            chosen: Some(chosen),
            pool,
        })
    }

    /// Evaluates the chosen candidate and enforces `V^{f†} ⪰ Q ⪰ v_t`.
    fn advance(&self, iterates: &[Iterate], parent: usize, chosen: &Candidate) -> Result<Iterate> {
        let p = &iterates[parent];
        let next = self.evaluate(chosen.policy.clone(), Some((parent, p)), false)?;
        let above_q = compare_unchecked(&next.values, &chosen.q, ETA).weakly_dominates();
        let rel = next.relation_to_parent.expect("parent given");
        if !above_q || rel != Dominance::StrictlyDominates {
            return Err(Error::InvariantBreach(format!(
                "accepted step from iterate {parent} is not a strict improvement \
                 (relation {rel:?}, dagger value above Q: {above_q})"
            )));
        }
        Ok(next)
    }

    fn check_restart(&self, child: &Iterate) -> Result<()> {
        match child.relation_to_parent {
            Some(rel) if !rel.weakly_dominates() => Err(Error::InvariantBreach(format!(
                "restart candidate does not weakly dominate its parent ({rel:?})"
            ))),
            _ => Ok(()),
        }
    }

    fn trace(
        &self,
        iterates: Vec<Iterate>,
        termination: Termination,
        candidate_log: Vec<StepLog>,
        final_index: usize,
        outputs: Vec<usize>,
        backtracks: usize,
    ) -> PopiTrace {
        PopiTrace {
            iterates,
            termination,
            candidate_log,
            final_index,
            outputs,
            backtracks,
            probes: self.probes.len(),
            sampled_probes: self.sampled,
        }
    }
}

/// One POPI step from `f_t`. On a terminal iterate the returned policy is
/// `f_t` itself.
pub fn popi_step(
    game: &Game,
    f_t: &LeaderPolicy,
    config: &PopiConfig,
) -> Result<(LeaderPolicy, StepReport)> {
    f_t.check_for(game)?;
    let mut searcher = Searcher::new(game, config)?;
    let current = searcher.evaluate(f_t.clone(), None, false)?;
    let outcome = searcher.step(&current, 0)?;
    let report = StepReport {
        values: current.values.clone(),
        terminal: outcome.chosen.is_none(),
        chosen_q: outcome.chosen.as_ref().map(|c| ValueFunction(c.q.clone())),
        log: outcome.log,
    };
    match outcome.chosen {
        Some(c) => {
            let iterates = [current];
            searcher.advance(&iterates, 0, &c)?;
            Ok((c.policy, report))
        }
        None => Ok((f_t.clone(), report)),
    }
}

/// Algorithm 1: iterate until no candidate improves, the gain falls below
/// `improvement_tol`, or `max_iters` steps. Backtracking mode delegates to
/// [`run_popi_backtracking`].
pub fn run_popi(game: &Game, f_0: &LeaderPolicy, config: &PopiConfig) -> Result<PopiTrace> {
    if config.mode == PopiMode::Backtracking {
        return run_popi_backtracking(game, f_0, config);
    }
    f_0.check_for(game)?;
    let mut searcher = Searcher::new(game, config)?;
    let mut iterates = vec![searcher.evaluate(f_0.clone(), None, false)?];
    let mut log = Vec::new();
    let mut cur = 0;
    for _ in 0..config.max_iters {
        let outcome = searcher.step(&iterates[cur], cur)?;
        log.push(outcome.log);
        match outcome.chosen {
            None => {
                let copy = searcher.evaluate(
                    iterates[cur].policy.clone(),
                    Some((cur, &iterates[cur])),
                    true,
                )?;
                iterates.push(copy);
                let last = iterates.len() - 1;
                return Ok(searcher.trace(iterates, Termination::ConvergedEqual, log, last, vec![], 0));
            }
            Some(c) => {
                let next = searcher.advance(&iterates, cur, &c)?;
                let gain = next.scalarized - iterates[cur].scalarized;
                iterates.push(next);
                cur = iterates.len() - 1;
                if gain < config.improvement_tol {
                    return Ok(searcher.trace(iterates, Termination::SmallImprovement, log, cur, vec![], 0));
                }
            }
        }
    }
    Ok(searcher.trace(iterates, Termination::MaxIters, log, cur, vec![], 0))
}

/// Algorithm 2: policy iteration with backtracking.
///
/// Candidate pools are the `1 − ε` bands of each grid step, and the bottom
/// pool is the whole probe set. When the iteration stops at a policy that
/// the sufficient condition does not certify over the probes, the policy is
/// recorded and the run restarts from a random unexplored member of the
/// most recent non-empty pool. The result is the recorded output with the
/// largest scalarized value.
pub fn run_popi_backtracking(
    game: &Game,
    f_0: &LeaderPolicy,
    config: &PopiConfig,
) -> Result<PopiTrace> {
    f_0.check_for(game)?;
    let mut searcher = Searcher::new(game, config)?;
    let mut pools: Vec<(Option<usize>, Vec<LeaderPolicy>)> = vec![(
        None,
        searcher
            .probes
            .iter()
            .map(|p| p.policy.clone())
            .filter(|f| f != f_0)
            .collect(),
    )];
    let mut iterates = vec![searcher.evaluate(f_0.clone(), None, false)?];
    let mut log = Vec::new();
    let mut outputs = Vec::new();
    let mut backtracks = 0;
    let mut cur = 0;
    let mut termination = Termination::MaxIters;

    for _ in 0..config.max_iters {
        let outcome = searcher.step(&iterates[cur], cur)?;
        log.push(outcome.log);
        let stopped_at = match outcome.chosen {
            Some(c) => {
                let next = searcher.advance(&iterates, cur, &c)?;
                let gain = next.scalarized - iterates[cur].scalarized;
                iterates.push(next);
                pools.push((Some(cur), outcome.pool));
                cur = iterates.len() - 1;
                if gain >= config.improvement_tol {
                    continue;
                }
                cur
            }
            None => {
                let copy = searcher.evaluate(
                    iterates[cur].policy.clone(),
                    Some((cur, &iterates[cur])),
                    true,
                )?;
                iterates.push(copy);
                iterates.len() - 1
            }
        };

        outputs.push(stopped_at);
        let verdict = sufficient_over_probes(game, &iterates[stopped_at].values, &searcher.probes);
        if verdict.is_certified() {
            termination = Termination::CertifiedBoundary;
            break;
        }

        let mut restart = None;
        while let Some((parent, items)) = pools.last_mut() {
            if items.is_empty() {
                pools.pop();
                continue;
            }
            let k = searcher.rng.gen_range(0..items.len());
            restart = Some((*parent, items.remove(k)));
            break;
        }
        let Some((parent, policy)) = restart else {
            termination = Termination::PoolsExhausted;
            break;
        };
        backtracks += 1;
        let next = searcher.evaluate(policy, parent.map(|p| (p, &iterates[p])), false)?;
        searcher.check_restart(&next)?;
        iterates.push(next);
        cur = iterates.len() - 1;
    }

    if termination == Termination::MaxIters {
        outputs.push(cur);
    }
    let final_index = outputs
        .iter()
        .copied()
        .fold(None::<usize>, |best, i| match best {
            Some(b) if iterates[b].scalarized >= iterates[i].scalarized => Some(b),
            _ => Some(i),
        })
        .expect("at least one output is recorded");
    Ok(searcher.trace(iterates, termination, log, final_index, outputs, backtracks))
}

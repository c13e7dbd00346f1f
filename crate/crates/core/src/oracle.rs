//! Brute-force ground truth on a policy lattice.
//!
//! Every leader policy whose rows lie on the simplex lattice
//! `{k / (resolution − 1)}` is evaluated exactly. The non-dominated values
//! approximate the Pareto front of reachable leader values, and the
//! pointwise maximum approximates the SE value function. Both are evidence
//! on a grid, not proofs.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::game::{compare_unchecked, Dominance, Game, LeaderPolicy, ValueFunction, ETA};
use crate::mdp::{leader_dagger_value_with, TieBreak};
use crate::simplex::{count_compositions, lattice_points};

/// Default refusal threshold for grid enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub num_states: usize,
    pub num_leader_actions: usize,
    /// Lattice points per state, `C(resolution − 2 + |A|, |A| − 1)`.
    pub points_per_state: u128,
    /// `points_per_state ^ num_states`, saturating.
    pub total: u128,
}

impl GridSpec {
    pub fn new(resolution: usize, num_states: usize, num_leader_actions: usize) -> Result<GridSpec> {
        if resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be at least 2, got {resolution}"
            )));
        }
        let per = count_compositions(resolution - 1, num_leader_actions);
        let total = (0..num_states).try_fold(1u128, |acc, _| acc.checked_mul(per));
        Ok(GridSpec {
            resolution,
            num_states,
            num_leader_actions,
            points_per_state: per,
            total: total.unwrap_or(u128::MAX),
        })
    }

    pub fn for_game(game: &Game, resolution: usize) -> Result<GridSpec> {
        GridSpec::new(resolution, game.num_states, game.num_leader_actions)
    }
}

/// Streams every lattice leader policy; the first state's row varies
/// slowest, so the stream is in lexicographic order of the flattened policy.
#[derive(Debug, Clone)]
pub struct GridPolicies {
    rows: Vec<Vec<f64>>,
    odometer: Vec<usize>,
    done: bool,
}

impl Iterator for GridPolicies {
    type Item = LeaderPolicy;

    fn next(&mut self) -> Option<LeaderPolicy> {
        if self.done {
            return None;
        }
        let policy = LeaderPolicy {
            probs: self.odometer.iter().map(|&i| self.rows[i].clone()).collect(),
        };
        self.done = true;
        for digit in self.odometer.iter_mut().rev() {
            *digit += 1;
            if *digit < self.rows.len() {
                self.done = false;
                break;
            }
            *digit = 0;
        }
        Some(policy)
    }
}

/// All lattice policies at `resolution`, refusing grids larger than `cap`.
pub fn enumerate_grid(game: &Game, resolution: usize, cap: u128) -> Result<GridPolicies> {
    let spec = GridSpec::for_game(game, resolution)?;
    if spec.total > cap {
        return Err(Error::EnumerationCap {
            count: spec.total,
            cap,
        });
    }
    Ok(grid_unchecked(game.num_states, game.num_leader_actions, resolution))
}

pub(crate) fn grid_unchecked(num_states: usize, num_actions: usize, resolution: usize) -> GridPolicies {
    GridPolicies {
        rows: lattice_points(resolution, num_actions),
        odometer: vec![0; num_states],
        done: num_states == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub policy: LeaderPolicy,
    pub values: ValueFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    /// Mutually non-dominated entries, sorted by value vector.
    pub entries: Vec<ArchiveEntry>,
    pub grid_spec: GridSpec,
    /// Pointwise maximum over every enumerated value.
    pub se_upper: ValueFunction,
    pub evaluated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub resolution: usize,
    pub cap: u128,
    pub tie_break: TieBreak,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            resolution: 21,
            cap: DEFAULT_ENUMERATION_CAP,
            tie_break: TieBreak::default(),
        }
    }
}

impl OracleConfig {
    pub fn with_resolution(resolution: usize) -> OracleConfig {
        OracleConfig {
            resolution,
            ..OracleConfig::default()
        }
    }
}

/// Incrementally maintained non-dominated set.
#[derive(Debug, Clone, Default)]
pub(crate) struct Front {
    entries: Vec<ArchiveEntry>,
}

impl Front {
    /// Inserts unless dominated by or equal to an existing entry; removes
    /// entries the newcomer strictly dominates. Returns whether it was kept.
    pub(crate) fn insert(&mut self, policy: &LeaderPolicy, values: &[f64]) -> bool {
        for e in &self.entries {
            if compare_unchecked(&e.values, values, ETA).weakly_dominates() {
                return false;
            }
        }
        self.entries
            .retain(|e| compare_unchecked(values, &e.values, ETA) != Dominance::StrictlyDominates);
        self.entries.push(ArchiveEntry {
            policy: policy.clone(),
            values: ValueFunction(values.to_vec()),
        });
        true
    }

    pub(crate) fn into_sorted(mut self) -> Vec<ArchiveEntry> {
        self.entries.sort_by(|a, b| lex_cmp(&a.values, &b.values));
        self.entries
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Evaluates every grid policy and keeps the non-dominated values.
pub fn build_archive(game: &Game, config: &OracleConfig) -> Result<ParetoArchive> {
    let grid_spec = GridSpec::for_game(game, config.resolution)?;
    let mut front = Front::default();
    let mut se_upper = vec![f64::NEG_INFINITY; game.num_states];
    let mut evaluated = 0u64;
    for f in enumerate_grid(game, config.resolution, config.cap)? {
        let (v, _) = leader_dagger_value_with(game, &f, config.tie_break)?;
        for (m, x) in se_upper.iter_mut().zip(v.iter()) {
            *m = m.max(*x);
        }
        front.insert(&f, &v);
        evaluated += 1;
    }
    Ok(ParetoArchive {
        entries: front.into_sorted(),
        grid_spec,
        se_upper: ValueFunction(se_upper),
        evaluated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SseVerdict {
    /// One Pareto value on the grid, and it attains `se_upper`.
    SseLikely,
    NoSseOnGrid,
}

impl std::fmt::Display for SseVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SseVerdict::SseLikely => "SSE-LIKELY",
            SseVerdict::NoSseOnGrid => "NO-SSE-ON-GRID",
        })
    }
}

/// Grid-level evidence for the existence of a stationary strong Stackelberg
/// equilibrium: the Pareto set is a singleton exactly when one policy attains
/// the SE value everywhere.
pub fn check_singleton_pareto(archive: &ParetoArchive) -> SseVerdict {
    let singleton = archive.entries.windows(2).all(|w| {
        compare_unchecked(&w[0].values, &w[1].values, ETA) == Dominance::Equal
    });
    let attains = archive
        .entries
        .first()
        .is_some_and(|e| compare_unchecked(&e.values, &archive.se_upper, ETA) == Dominance::Equal);
    if singleton && attains {
        SseVerdict::SseLikely
    } else {
        SseVerdict::NoSseOnGrid
    }
}

impl ParetoArchive {
    /// CSV with one row per entry: per-state values, then the flattened
    /// policy. `se_upper` and the grid size go in leading comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let upper: Vec<String> = self.se_upper.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(out, "# se_upper: {}", upper.join(","));
        let _ = writeln!(
            out,
            "# resolution: {}, policies evaluated: {}",
            self.grid_spec.resolution, self.evaluated
        );
        let mut header: Vec<String> = (0..self.grid_spec.num_states).map(|s| format!("v_{s}")).collect();
        for s in 0..self.grid_spec.num_states {
            for a in 0..self.grid_spec.num_leader_actions {
                header.push(format!("f_{s}_{a}"));
            }
        }
        let _ = writeln!(out, "{}", header.join(","));
        for e in &self.entries {
            let row: Vec<String> = e
                .values
                .iter()
                .chain(e.policy.flatten().iter())
                .map(|&x| fmt_f64(x))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Entries whose value strictly dominates `v` with slack `eta`.
    pub fn dominating(&self, v: &[f64], eta: f64) -> Vec<&ArchiveEntry> {
        self.entries
            .iter()
            .filter(|e| compare_unchecked(&e.values, v, eta) == Dominance::StrictlyDominates)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::make_example_game;

    #[test]
    fn grid_counts() {
        let g = make_example_game(1.0, 3.0, 0.5, 0.9).unwrap();
        let all: Vec<_> = enumerate_grid(&g, 3, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0].probs, vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(all[1].probs, vec![vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(enumerate_grid(&g, 2, DEFAULT_ENUMERATION_CAP).unwrap().count(), 4);
        assert_eq!(GridSpec::new(3, 1, 3).unwrap().total, 6);
        assert!(matches!(
            enumerate_grid(&g, 41, 100),
            Err(Error::EnumerationCap { count: 1681, cap: 100 })
        ));
        assert!(enumerate_grid(&g, 1, DEFAULT_ENUMERATION_CAP).is_err());
    }

    #[test]
    fn front_keeps_first_equal_and_drops_dominated() {
        let p = LeaderPolicy::uniform(2, 2);
        let mut front = Front::default();
        assert!(front.insert(&p, &[1.0, 0.0]));
        assert!(!front.insert(&p, &[1.0, 0.0]));
        assert!(!front.insert(&p, &[0.5, 0.0]));
        assert!(front.insert(&p, &[0.0, 1.0]));
        assert!(front.insert(&p, &[2.0, 0.0]));
        let sorted = front.into_sorted();
        assert_eq!(sorted.len(), 2);
        assert_eq!(sorted[0].values.0, vec![0.0, 1.0]);
    }

    #[test]
    fn fixture_archive_has_two_pareto_points() {
        let g = make_example_game(1.0, 3.0, 0.5, 0.9).unwrap();
        let archive = build_archive(&g, &OracleConfig::with_resolution(11)).unwrap();
        assert_eq!(archive.entries.len(), 2);
        assert_eq!(check_singleton_pareto(&archive), SseVerdict::NoSseOnGrid);
        assert!(archive.se_upper.sup_distance(&ValueFunction(vec![2.0, 2.0])) < 1e-9);
    }
}

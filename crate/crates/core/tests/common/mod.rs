//! Independent oracles for the integration tests. Nothing here calls the
//! library's solvers: values come from a hand-written Gaussian elimination
//! over marginals built straight from the game tensors.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use ssg::game::{FollowerPolicy, Game, LeaderPolicy};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// `V = (I − γP)^{-1} r` for the pair `(f, g)`, for the leader (`true`) or
/// the follower.
pub fn value_of_pair(game: &Game, f: &LeaderPolicy, g: &[usize], leader: bool) -> Vec<f64> {
    let n = game.num_states;
    let (rewards, gamma) = if leader {
        (&game.reward_leader, game.gamma_leader)
    } else {
        (&game.reward_follower, game.gamma_follower)
    };
    let mut a = vec![vec![0.0; n]; n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        a[s][s] = 1.0;
        for (act, p) in f.probs[s].iter().enumerate() {
            r[s] += p * rewards[s][act][g[s]];
            for t in 0..n {
                a[s][t] -= gamma * p * game.transition[s][act][g[s]][t];
            }
        }
    }
    solve(a, r)
}

/// All `|B|^|S|` deterministic follower policies.
pub fn all_follower_policies(num_states: usize, num_actions: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..num_states {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..num_actions).map(move |b| {
                    let mut q = p.clone();
                    q.push(b);
                    q
                })
            })
            .collect();
    }
    out
}

/// Pointwise maximum of the follower's value over every deterministic
/// policy, which is the optimal follower value.
pub fn follower_optimum(game: &Game, f: &LeaderPolicy) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; game.num_states];
    for g in all_follower_policies(game.num_states, game.num_follower_actions) {
        let v = value_of_pair(game, f, &g, false);
        for (m, x) in best.iter_mut().zip(v) {
            *m = m.max(x);
        }
    }
    best
}

pub fn to_follower(g: &FollowerPolicy) -> Vec<usize> {
    g.actions.clone()
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                let digest = Sha256::digest(&bytes);
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, hex);
            }
        }
    }
    out
}

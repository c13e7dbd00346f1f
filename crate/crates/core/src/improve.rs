//! Policy-improvement conditions for the leader.
//!
//! With `V = V_A^{f'†}` the dagger value of a reference policy `f'`, a
//! candidate `f` has one-step value `Q(s, f) = r_A(s, f(s), R_B^*(s, f)) +
//! γ_A E[V(s')]`. Candidates with `Q ⪰ V` never make the leader worse off,
//! which is what policy iteration exploits. The checkers for the necessary
//! and sufficient Pareto-optimality conditions quantify over an explicit
//! finite probe set, and their verdicts say so.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{compare_unchecked, Dominance, Game, LeaderPolicy, ValueFunction, ETA};
use crate::mdp::{check_values, dot, induced_kernel, Probe, TieBreak};

/// Mass mixed into zero weights so every state keeps a positive weight.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// A weighted-sum scalarization `L[v] = Σ_s α_s v(s)` with `α_s > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalarization {
    pub weights: Vec<f64>,
}

impl Scalarization {
    /// Strictly positive weights summing to one within `1e-12`.
    pub fn new(weights: Vec<f64>) -> Result<Scalarization> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter(
                "scalarization weights must be positive and finite".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "scalarization weights must sum to 1, sum is {sum}"
            )));
        }
        Ok(Scalarization { weights })
    }

    pub fn uniform(n: usize) -> Scalarization {
        Scalarization {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes non-negative weights; if any weight is zero, mixes in
    /// [`WEIGHT_FLOOR`] of the uniform vector and renormalizes.
    pub fn from_nonnegative(weights: &[f64]) -> Result<Scalarization> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "weights must be non-negative and finite".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidParameter("weights must not all be zero".into()));
        }
        let n = weights.len() as f64;
        let mut w: Vec<f64> = weights.iter().map(|x| x / sum).collect();
        if w.iter().any(|&x| x == 0.0) {
            w.iter_mut()
                .for_each(|x| *x = (1.0 - WEIGHT_FLOOR) * *x + WEIGHT_FLOOR / n);
        }
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= sum);
        Ok(Scalarization { weights: w })
    }

    /// The policy-teaching preset: weights equal to the initial distribution
    /// (mixed with the uniform vector where it has zeros).
    pub fn from_initial_distribution(game: &Game) -> Scalarization {
        Scalarization::from_nonnegative(&game.initial_distribution)
            .expect("a validated initial distribution is a distribution")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub(crate) fn apply(&self, v: &[f64]) -> f64 {
        dot(&self.weights, v)
    }
}

/// `Σ_s α_s v(s)`.
pub fn scalarize(l: &Scalarization, v: &[f64]) -> Result<f64> {
    if l.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: l.len(),
            found: v.len(),
        });
    }
    Ok(l.apply(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCertificate {
    /// `Q_A^{f'†}(·, f)`
    pub q_values: ValueFunction,
    /// `V_A^{f'†}`
    pub reference_values: ValueFunction,
    /// `compare(q_values, reference_values, η)`
    pub relation: Dominance,
    /// `δ(f, f')`
    pub delta: f64,
    /// A state where `Q(s) < V(s) - γ_A/(1-γ_A)·δ`, if any (the state with
    /// the widest margin).
    pub sufficient_gap_state: Option<usize>,
}

impl ImprovementCertificate {
    fn build(game: &Game, v_ref: &[f64], probe: &Probe) -> ImprovementCertificate {
        let q = probe.q(game, v_ref);
        let delta = delta_of(game, v_ref, probe, &q);
        let relation = compare_unchecked(&q, v_ref, ETA);
        let sufficient_gap_state = sufficient_gap(game, v_ref, &q, delta);
        ImprovementCertificate {
            q_values: q,
            reference_values: ValueFunction(v_ref.to_vec()),
            relation,
            delta,
            sufficient_gap_state,
        }
    }

    /// Membership in `W_≽(f')`.
    pub fn improves(&self) -> bool {
        self.relation.weakly_dominates()
    }
}

fn delta_of(game: &Game, v_ref: &[f64], probe: &Probe, q: &[f64]) -> f64 {
    let gap: Vec<f64> = q.iter().zip(v_ref).map(|(a, b)| a - b).collect();
    induced_kernel(game, &probe.policy, &probe.response)
        .iter()
        .map(|row| dot(row, &gap))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn sufficient_gap(game: &Game, v_ref: &[f64], q: &[f64], delta: f64) -> Option<usize> {
    let g = game.gamma_leader;
    let shift = g / (1.0 - g) * delta;
    let mut best: Option<(usize, f64)> = None;
    for s in 0..q.len() {
        let margin = (v_ref[s] - shift) - q[s];
        if margin > ETA && best.map_or(true, |(_, m)| margin > m) {
            best = Some((s, margin));
        }
    }
    best.map(|(s, _)| s)
}

/// Tests `f ∈ W_≽(f_t)`: `Q_A^{f_t†}(s, f) ≥ V_A^{f_t†}(s) - η` for all `s`.
pub fn in_improving_set(
    game: &Game,
    f_t_values: &ValueFunction,
    f: &LeaderPolicy,
    tie: TieBreak,
) -> Result<(bool, ImprovementCertificate)> {
    check_values(game, f_t_values)?;
    let probe = Probe::new(game, f.clone(), tie)?;
    let cert = ImprovementCertificate::build(game, f_t_values, &probe);
    Ok((cert.improves(), cert))
}

/// `δ(f, f') = max_s E_{s'∼p(·|s,f(s),R_B^*(s,f))}[Q(s', f) − V(s')]`.
pub fn delta(
    game: &Game,
    f_t_values: &ValueFunction,
    f: &LeaderPolicy,
    tie: TieBreak,
) -> Result<f64> {
    check_values(game, f_t_values)?;
    let probe = Probe::new(game, f.clone(), tie)?;
    let q = probe.q(game, f_t_values);
    Ok(delta_of(game, f_t_values, &probe, &q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum NecessaryVerdict {
    /// Candidate `candidate` satisfies `Q ⪰ V` and its dagger value
    /// strictly dominates the reference, so the reference is not Pareto
    /// optimal.
    Fails {
        candidate: usize,
        candidate_values: ValueFunction,
    },
    /// No probe violates the condition; this is not a proof over all
    /// leader policies.
    InconclusivePass,
}

/// Checks `Q ⪰ V ⟹ V^{f†} ≐ V^{f'†}` over the candidates.
pub fn check_necessary_condition(
    game: &Game,
    f_prime: &LeaderPolicy,
    candidates: &[LeaderPolicy],
    tie: TieBreak,
) -> Result<NecessaryVerdict> {
    let reference = Probe::new(game, f_prime.clone(), tie)?;
    let probes = candidates
        .iter()
        .map(|f| Probe::new(game, f.clone(), tie))
        .collect::<Result<Vec<_>>>()?;
    necessary_over_probes(game, &reference, &probes)
}

pub(crate) fn necessary_over_probes(
    game: &Game,
    reference: &Probe,
    probes: &[Probe],
) -> Result<NecessaryVerdict> {
    let v = reference.dagger_value(game)?;
    for (i, p) in probes.iter().enumerate() {
        let q = p.q(game, &v);
        if !compare_unchecked(&q, &v, ETA).weakly_dominates() {
            continue;
        }
        let vf = p.dagger_value(game)?;
        if compare_unchecked(&vf, &v, ETA) == Dominance::StrictlyDominates {
            return Ok(NecessaryVerdict::Fails {
                candidate: i,
                candidate_values: vf,
            });
        }
    }
    Ok(NecessaryVerdict::InconclusivePass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum SufficientVerdict {
    /// Every probe satisfies `Q ≐ V` or the gap condition. This would
    /// certify Pareto optimality only if the probes covered every leader
    /// policy.
    CertifiedOverProbes,
    /// Indices of probes meeting neither condition.
    NotCertified { offenders: Vec<usize> },
}

impl SufficientVerdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, SufficientVerdict::CertifiedOverProbes)
    }
}

/// For each candidate checks (i) `Q ≐ V` or (ii) `∃s: Q(s) < V(s) −
/// γ_A/(1−γ_A)·δ(f, f')`.
pub fn check_sufficient_condition(
    game: &Game,
    f_prime: &LeaderPolicy,
    candidates: &[LeaderPolicy],
    tie: TieBreak,
) -> Result<SufficientVerdict> {
    let reference = Probe::new(game, f_prime.clone(), tie)?;
    let v = reference.dagger_value(game)?;
    let probes = candidates
        .iter()
        .map(|f| Probe::new(game, f.clone(), tie))
        .collect::<Result<Vec<_>>>()?;
    Ok(sufficient_over_probes(game, &v, &probes))
}

pub(crate) fn sufficient_over_probes(game: &Game, v: &[f64], probes: &[Probe]) -> SufficientVerdict {
    let offenders: Vec<usize> = probes
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let cert = ImprovementCertificate::build(game, v, p);
            cert.relation != Dominance::Equal && cert.sufficient_gap_state.is_none()
        })
        .map(|(i, _)| i)
        .collect();
    if offenders.is_empty() {
        SufficientVerdict::CertifiedOverProbes
    } else {
        SufficientVerdict::NotCertified { offenders }
    }
}

//! Divergences, surrogate objectives and policy-improvement lower bounds.
//!
//! Every function here evaluates its quantity exactly on the tabular model and
//! returns both sides of the inequality so callers can check validity directly.
//! KL divergences are always `KL(old || new)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    discounted_visitation, dot, expected_shaped_residual, value_functions, Mdp, ShapingFunction,
    TabularPolicy, ValueFunctions, Visitation,
};

/// Expected shaped TD residuals of `f` under a new policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TdResidualProfile {
    /// `E_{a ~ pi', s'}[R + gamma f(s') - f(s) | s]`.
    pub per_state: Vec<f64>,
    /// `max_s |per_state(s)|`.
    pub eps: f64,
    /// `max_{s,a} |E_{s'}[R + gamma f(s') - f(s)]|`; independent of the policy.
    pub eps_sa: f64,
}

pub fn td_residual_profile(
    mdp: &Mdp,
    f: &ShapingFunction,
    new_policy: &TabularPolicy,
) -> Result<TdResidualProfile> {
    new_policy.check_shape(mdp)?;
    let residual = expected_shaped_residual(mdp, f)?;
    let n = mdp.num_actions();
    let per_state: Vec<f64> = residual
        .chunks(n)
        .zip(new_policy.rows())
        .map(|(res, row)| dot(row, res))
        .collect();
    Ok(TdResidualProfile {
        eps: max_abs(&per_state),
        eps_sa: max_abs(&residual),
        per_state,
    })
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `(1/2) sum_a |p(a) - q(a)|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `sum_a p(a) ln(p(a) / q(a))` with `0 ln 0 = 0`; `+inf` when `q` misses
/// part of the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| match (a > 0.0, b > 0.0) {
            (false, _) => 0.0,
            (true, false) => f64::INFINITY,
            (true, true) => a * (a / b).ln(),
        })
        .sum::<f64>()
        .max(0.0)
}

/// Per-state and visitation-averaged divergences between two policies.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceProfile {
    /// `D_TV(new || old)[s]`.
    pub tv_per_state: Vec<f64>,
    /// `E_{s ~ d^old}[D_TV]`.
    pub tv_avg: f64,
    pub tv_max: f64,
    /// `D_KL(old || new)[s]`.
    pub kl_per_state: Vec<f64>,
    /// `E_{s ~ d^old}[D_KL(old || new)[s]]`; `+inf` when support is not included.
    pub kl_avg: f64,
    /// `E_{s ~ d^old}[sqrt(D_KL(old || new)[s] / 2)]`.
    pub pinsker_avg: f64,
    /// False when the new policy misses part of the old policy's support on a
    /// visited state.
    pub kl_supported: bool,
}

impl DivergenceProfile {
    /// `sqrt(kl_avg / 2)`.
    pub fn pinsker_bound(&self) -> f64 {
        (self.kl_avg / 2.0).sqrt()
    }
}

pub fn divergence_profile(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
) -> Result<DivergenceProfile> {
    new_policy.check_shape(mdp)?;
    let d = discounted_visitation(mdp, old_policy)?;
    Ok(divergences_under(&d, old_policy, new_policy))
}

pub(crate) fn divergences_under(
    d: &Visitation,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
) -> DivergenceProfile {
    let tv_per_state: Vec<f64> = old_policy
        .rows()
        .zip(new_policy.rows())
        .map(|(p, q)| tv_distance(q, p))
        .collect();
    let kl_per_state: Vec<f64> = old_policy
        .rows()
        .zip(new_policy.rows())
        .map(|(p, q)| kl_divergence(p, q))
        .collect();
    let weighted = |v: &[f64]| -> f64 {
        d.dist()
            .iter()
            .zip(v)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, x)| w * x)
            .sum()
    };
    let kl_avg = weighted(&kl_per_state);
    let root_half: Vec<f64> = kl_per_state.iter().map(|k| (k / 2.0).sqrt()).collect();
    DivergenceProfile {
        tv_avg: weighted(&tv_per_state),
        tv_max: tv_per_state.iter().copied().fold(0.0, f64::max),
        pinsker_avg: weighted(&root_half),
        kl_supported: kl_avg.is_finite(),
        kl_avg,
        tv_per_state,
        kl_per_state,
    }
}

/// Importance-weighted surrogate
/// `L_{pi,f}(pi') = E_{d^pi, pi, P}[(pi'(a|s)/pi(a|s) - 1)(R + gamma f(s') - f(s))]`.
pub fn surrogate(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    f: &ShapingFunction,
    new_policy: &TabularPolicy,
) -> Result<f64> {
    new_policy.check_shape(mdp)?;
    let d = discounted_visitation(mdp, old_policy)?;
    let residual = expected_shaped_residual(mdp, f)?;
    surrogate_under(&d, old_policy, new_policy, &residual)
}

pub(crate) fn surrogate_under(
    d: &Visitation,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
    residual: &[f64],
) -> Result<f64> {
    let n = old_policy.num_actions();
    let mut total = 0.0;
    for (s, (p, q)) in old_policy.rows().zip(new_policy.rows()).enumerate() {
        let mut inner = 0.0;
        for a in 0..n {
            if p[a] == 0.0 {
                if q[a] > 0.0 {
                    return Err(Error::SupportViolation {
                        state: s,
                        action: a,
                        mass: q[a],
                    });
                }
                continue;
            }
            inner += p[a] * (q[a] / p[a] - 1.0) * residual[s * n + a];
        }
        total += d.dist()[s] * inner;
    }
    Ok(total)
}

/// Both sides of `||d^new - d^old||_1 <= (2 gamma / (1 - gamma)) E_{d^old}[D_TV]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitationShift {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn visitation_shift_bound(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
) -> Result<VisitationShift> {
    let d_old = discounted_visitation(mdp, old_policy)?;
    let d_new = discounted_visitation(mdp, new_policy)?;
    let div = divergences_under(&d_old, old_policy, new_policy);
    let gamma = mdp.gamma();
    Ok(VisitationShift {
        lhs: d_new.l1_distance(&d_old),
        rhs: 2.0 * gamma / (1.0 - gamma) * div.tv_avg,
    })
}

/// An advantage estimator `A_hat(s, a)` together with its per-state error
/// `c(s) = max_a |A^pi(s,a) - A_hat(s,a)|` against the exact advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    num_actions: usize,
    a_hat: Vec<f64>,
    c_per_state: Vec<f64>,
}

impl AdvantageEstimate {
    /// Wraps a flattened `[s][a]` estimate and measures its error against `A^pi`.
    pub fn new(mdp: &Mdp, policy: &TabularPolicy, a_hat: Vec<f64>) -> Result<Self> {
        let vf = value_functions(mdp, policy)?;
        Self::against(&vf, mdp.num_actions(), a_hat)
    }

    pub fn against(vf: &ValueFunctions, num_actions: usize, a_hat: Vec<f64>) -> Result<Self> {
        let expected = vf.adv_table().len();
        if a_hat.len() != expected {
            return Err(Error::Dimension {
                what: "advantage estimate",
                expected,
                actual: a_hat.len(),
            });
        }
        if let Some(i) = a_hat.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "advantage estimate",
                index: i,
            });
        }
        let c_per_state = a_hat
            .chunks(num_actions)
            .zip(vf.adv_table().chunks(num_actions))
            .map(|(est, exact)| {
                est.iter()
                    .zip(exact)
                    .fold(0.0f64, |m, (e, x)| m.max((e - x).abs()))
            })
            .collect();
        Ok(Self {
            num_actions,
            a_hat,
            c_per_state,
        })
    }

    /// The exact advantage of `vf`, with zero error.
    pub fn exact(vf: &ValueFunctions, num_actions: usize) -> Self {
        Self {
            num_actions,
            a_hat: vf.adv_table().to_vec(),
            c_per_state: vec![0.0; vf.v().len()],
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.a_hat[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn a_hat(&self) -> &[f64] {
        &self.a_hat
    }

    pub fn c_per_state(&self) -> &[f64] {
        &self.c_per_state
    }

    pub fn num_states(&self) -> usize {
        self.c_per_state.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Which improvement lower bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// Shaped surrogate penalized by the exact TV distance between visitations.
    StateTv,
    /// Shaped surrogate penalized by the visitation-averaged policy TV.
    PolicyTv,
    /// Expected advantage of the new policy penalized by the averaged policy TV.
    Advantage,
    /// Like `Advantage` but with an arbitrary estimator and a per-state
    /// coefficient inflated by the estimator error.
    EstimatedAdvantage,
    /// `Advantage` with the averaged TV replaced by `sqrt(kl_avg / 2)`.
    KlPinsker,
}

impl BoundVariant {
    pub const ALL: [BoundVariant; 5] = [
        BoundVariant::StateTv,
        BoundVariant::PolicyTv,
        BoundVariant::Advantage,
        BoundVariant::EstimatedAdvantage,
        BoundVariant::KlPinsker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundVariant::StateTv => "state_tv",
            BoundVariant::PolicyTv => "policy_tv",
            BoundVariant::Advantage => "advantage",
            BoundVariant::EstimatedAdvantage => "estimated_advantage",
            BoundVariant::KlPinsker => "kl_pinsker",
        }
    }

    /// Variants that derive their own shaping function (`f = V^pi`).
    pub fn uses_advantage(self) -> bool {
        !matches!(self, BoundVariant::StateTv | BoundVariant::PolicyTv)
    }
}

impl fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown bound variant `{s}`")))
    }
}

/// Intermediate quantities of a bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Surrogate gain (before the `1/(1-gamma)` factor).
    pub surrogate: f64,
    pub epsilon: f64,
    /// The divergence the penalty multiplies.
    pub divergence: f64,
    /// Coefficient on `divergence`; for the estimated variant this is `max_s C(s)`.
    pub penalty_coefficient: f64,
    /// Total penalty subtracted from `surrogate`.
    pub penalty: f64,
    pub tv_avg: f64,
    pub tv_max: f64,
    pub kl_avg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub variant: BoundVariant,
    /// `J(new) - J(old)`.
    pub true_improvement: f64,
    pub rhs: f64,
    pub terms: BoundTerms,
}

impl BoundReport {
    /// `rhs <= lhs + tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.rhs <= self.true_improvement + tol
    }

    pub fn record(&self) -> BoundRecord {
        BoundRecord {
            variant: self.variant,
            lhs: self.true_improvement,
            rhs: self.rhs,
            surrogate: self.terms.surrogate,
            epsilon: self.terms.epsilon,
            tv_avg: self.terms.tv_avg,
            tv_max: self.terms.tv_max,
            kl_avg: self.terms.kl_avg,
            penalty_coefficient: self.terms.penalty_coefficient,
        }
    }
}

/// Flat serialized form of a [`BoundReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub variant: BoundVariant,
    pub lhs: f64,
    pub rhs: f64,
    #[serde(rename = "L")]
    pub surrogate: f64,
    pub epsilon: f64,
    pub tv_avg: f64,
    pub tv_max: f64,
    pub kl_avg: f64,
    pub penalty_coefficient: f64,
}

/// Evaluates the chosen lower bound on `J(new) - J(old)`.
///
/// `f` is only used by [`BoundVariant::StateTv`] and [`BoundVariant::PolicyTv`];
/// the advantage variants use `f = V^old`. `estimate` is required by
/// [`BoundVariant::EstimatedAdvantage`] and ignored otherwise.
pub fn improvement_bound(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
    f: &ShapingFunction,
    variant: BoundVariant,
    estimate: Option<&AdvantageEstimate>,
) -> Result<BoundReport> {
    evaluate_bound(mdp, old_policy, new_policy, f, variant, estimate, 1.0)
}

/// [`improvement_bound`] with every penalty multiplied by `penalty_scale`.
/// Scales below one break validity; this exists to exercise violation reporting.
#[doc(hidden)]
pub fn improvement_bound_with_penalty_scale(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
    f: &ShapingFunction,
    variant: BoundVariant,
    estimate: Option<&AdvantageEstimate>,
    penalty_scale: f64,
) -> Result<BoundReport> {
    evaluate_bound(
        mdp,
        old_policy,
        new_policy,
        f,
        variant,
        estimate,
        penalty_scale,
    )
}

/// `E_{a ~ new}[A^old(s, a)]` per state, evaluated as
/// `sum_a (new(a|s) - old(a|s)) A^old(s, a)` so that it is exactly zero when
/// the policies coincide.
pub fn advantage_gain(
    vf_old: &ValueFunctions,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
) -> Vec<f64> {
    old_policy
        .rows()
        .zip(new_policy.rows())
        .enumerate()
        .map(|(s, (p, q))| {
            vf_old
                .adv_row(s)
                .iter()
                .zip(p.iter().zip(q))
                .map(|(a, (p, q))| a * (q - p))
                .sum()
        })
        .collect()
}

/// `max_s |E_{a ~ new}[A^old(s, a)]|`.
pub fn expected_advantage_eps(
    vf_old: &ValueFunctions,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
) -> f64 {
    max_abs(&advantage_gain(vf_old, old_policy, new_policy))
}

fn scaled(coef: f64, divergence: f64) -> f64 {
    if coef == 0.0 {
        0.0
    } else {
        coef * divergence
    }
}

fn evaluate_bound(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
    f: &ShapingFunction,
    variant: BoundVariant,
    estimate: Option<&AdvantageEstimate>,
    penalty_scale: f64,
) -> Result<BoundReport> {
    old_policy.check_shape(mdp)?;
    new_policy.check_shape(mdp)?;
    let gamma = mdp.gamma();
    let horizon = 1.0 / (1.0 - gamma);
    let vf_old = value_functions(mdp, old_policy)?;
    let vf_new = value_functions(mdp, new_policy)?;
    let d_old = discounted_visitation(mdp, old_policy)?;
    let div = divergences_under(&d_old, old_policy, new_policy);
    let true_improvement = vf_new.ret() - vf_old.ret();
    let n = mdp.num_actions();

    let (surrogate, epsilon, divergence, penalty_coefficient, penalty) = match variant {
        BoundVariant::StateTv | BoundVariant::PolicyTv => {
            let residual = expected_shaped_residual(mdp, f)?;
            let surrogate = surrogate_under(&d_old, old_policy, new_policy, &residual)?;
            let eps = td_residual_profile(mdp, f, new_policy)?.eps;
            let (divergence, coef) = if variant == BoundVariant::StateTv {
                let d_new = discounted_visitation(mdp, new_policy)?;
                (0.5 * d_new.l1_distance(&d_old), 2.0 * eps)
            } else {
                (div.tv_avg, 2.0 * gamma * eps * horizon)
            };
            let coef = coef * penalty_scale;
            (surrogate, eps, divergence, coef, scaled(coef, divergence))
        }
        BoundVariant::Advantage | BoundVariant::KlPinsker => {
            let gain = advantage_gain(&vf_old, old_policy, new_policy);
            let surrogate = d_old.expect(&gain);
            let eps = max_abs(&gain);
            let coef = 2.0 * gamma * eps * horizon * penalty_scale;
            let divergence = if variant == BoundVariant::Advantage {
                div.tv_avg
            } else {
                div.pinsker_bound()
            };
            (surrogate, eps, divergence, coef, scaled(coef, divergence))
        }
        BoundVariant::EstimatedAdvantage => {
            let est = estimate.ok_or(Error::MissingEstimate)?;
            if est.num_states() != mdp.num_states() || est.num_actions() != n {
                return Err(Error::Dimension {
                    what: "advantage estimate",
                    expected: mdp.num_states() * n,
                    actual: est.a_hat().len(),
                });
            }
            let eps = expected_advantage_eps(&vf_old, old_policy, new_policy);
            let coefs: Vec<f64> = est
                .c_per_state()
                .iter()
                .map(|c| 2.0 * (c + gamma * eps * horizon) * penalty_scale)
                .collect();
            let per_state_gain: Vec<f64> = (0..mdp.num_states())
                .map(|s| dot(new_policy.row(s), est.row(s)) - dot(old_policy.row(s), est.row(s)))
                .collect();
            let per_state_penalty: Vec<f64> = coefs
                .iter()
                .zip(&div.tv_per_state)
                .map(|(c, tv)| scaled(*c, *tv))
                .collect();
            (
                d_old.expect(&per_state_gain),
                eps,
                div.tv_avg,
                coefs.iter().copied().fold(0.0, f64::max),
                d_old.expect(&per_state_penalty),
            )
        }
    };

    Ok(BoundReport {
        variant,
        true_improvement,
        rhs: horizon * (surrogate - penalty),
        terms: BoundTerms {
            surrogate,
            epsilon,
            divergence,
            penalty_coefficient,
            penalty,
            tv_avg: div.tv_avg,
            tv_max: div.tv_max,
            kl_avg: div.kl_avg,
        },
    })
}

/// Worst-case one-step change `-sqrt(2 delta) gamma eps / (1-gamma)^2` for a
/// trust-region step `old -> new` with `E_{d^old}[KL(old || new)] <= delta`.
///
/// The new policy must also be at least as good as `old` on the trust-region
/// objective `E_{d^old, new}[A^old]`, which any maximizer of that objective is.
pub fn trpo_worst_case(
    mdp: &Mdp,
    old_policy: &TabularPolicy,
    new_policy: &TabularPolicy,
    delta: f64,
) -> Result<f64> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::Config(format!(
            "trust-region radius must be >= 0, got {delta}"
        )));
    }
    new_policy.check_shape(mdp)?;
    let d_old = discounted_visitation(mdp, old_policy)?;
    let div = divergences_under(&d_old, old_policy, new_policy);
    if div.kl_avg > delta {
        return Err(Error::TrustRegion {
            kl: div.kl_avg,
            delta,
        });
    }
    let vf_old = value_functions(mdp, old_policy)?;
    let gain = advantage_gain(&vf_old, old_policy, new_policy);
    let expected_advantage = d_old.expect(&gain);
    if expected_advantage < -TRPO_OBJECTIVE_TOL {
        return Err(Error::NotAnImprovementStep { expected_advantage });
    }
    let gamma = mdp.gamma();
    let eps = max_abs(&gain);
    Ok(-(2.0 * delta).sqrt() * gamma * eps / ((1.0 - gamma) * (1.0 - gamma)))
}

/// Round-off allowance on the trust-region objective of the old policy itself.
pub const TRPO_OBJECTIVE_TOL: f64 = 1e-12;

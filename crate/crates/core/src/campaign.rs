//! Randomized verification trials shared by the CLI and the acceptance suite.
//!
//! A trial is fully determined by `(base seed, trial index)` plus the
//! campaign's fixed overrides, so any flagged row can be replayed exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    advantage_gain, divergence_profile, divergences_under, improvement_bound_with_penalty_scale,
    tv_distance, AdvantageEstimate, BoundVariant,
};
use crate::error::{Error, Result};
use crate::instances::{generate_garnet, random_policy, random_shaping, seeded_rng, GarnetSpec};
use crate::mdp::{discounted_visitation, value_functions, Mdp, TabularPolicy};
use crate::sampler::{corrupt_value_estimator, horizon_for_tolerance, mc_objective, mc_return};

/// Mixture weights `lambda` in `new = (1 - lambda) old + lambda rho`.
pub const MIXTURE_WEIGHTS: [f64; 4] = [0.01, 0.1, 0.5, 1.0];
pub const GAMMAS: [f64; 4] = [0.0, 0.5, 0.9, 0.99];
pub const NOISE_LEVELS: [f64; 3] = [0.0, 0.05, 0.2];

pub const VALIDITY_TOL: f64 = 1e-8;
pub const TIGHTNESS_TOL: f64 = 1e-12;
pub const ORDERING_TOL: f64 = 1e-12;
pub const PINSKER_TOL: f64 = 1e-12;
pub const EXACTNESS_TOL: f64 = 1e-9;

/// Fixed overrides for a bound campaign; `None` fields are drawn per trial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundCampaign {
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub branching: Option<usize>,
    pub gamma: Option<f64>,
    pub noise: Option<f64>,
    pub variant: Option<BoundVariant>,
    pub lambda: Option<f64>,
    /// Use this MDP in every trial instead of generating one.
    pub mdp: Option<Mdp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrial {
    pub trial: usize,
    pub seed: u64,
    pub garnet: GarnetSpec,
    pub lambda: f64,
    pub noise: f64,
    pub variant: BoundVariant,
    pub mdp: Option<Mdp>,
}

impl BoundCampaign {
    /// Draws trial `trial` of the campaign seeded by `seed`. Variants cycle
    /// with the trial index; noise levels cycle every five trials.
    pub fn trial(&self, seed: u64, trial: usize) -> BoundTrial {
        let mut rng = seeded_rng(seed, trial as u64);
        let fixed = self.mdp.as_ref();
        let num_states = fixed
            .map(Mdp::num_states)
            .or(self.states)
            .unwrap_or_else(|| rng.gen_range(2..=10));
        let num_actions = fixed
            .map(Mdp::num_actions)
            .or(self.actions)
            .unwrap_or_else(|| rng.gen_range(2..=5));
        let branching = self
            .branching
            .unwrap_or_else(|| rng.gen_range(1..=num_states))
            .clamp(1, num_states);
        let gamma = fixed
            .map(Mdp::gamma)
            .or(self.gamma)
            .unwrap_or_else(|| GAMMAS[rng.gen_range(0..GAMMAS.len())]);
        let lambda = self
            .lambda
            .unwrap_or_else(|| MIXTURE_WEIGHTS[rng.gen_range(0..MIXTURE_WEIGHTS.len())]);
        let garnet = GarnetSpec {
            num_states,
            num_actions,
            branching,
            reward_sparsity: 0.0,
            gamma,
            seed: rng.gen(),
        };
        BoundTrial {
            trial,
            seed,
            garnet,
            lambda,
            noise: self
                .noise
                .unwrap_or(NOISE_LEVELS[(trial / BoundVariant::ALL.len()) % NOISE_LEVELS.len()]),
            variant: self
                .variant
                .unwrap_or(BoundVariant::ALL[trial % BoundVariant::ALL.len()]),
            mdp: self.mdp.clone(),
        }
    }
}

/// One verified bound evaluation plus the side checks run on the same instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrialRow {
    pub trial: usize,
    pub seed: u64,
    pub garnet_seed: u64,
    pub states: usize,
    pub actions: usize,
    pub branching: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub noise: f64,
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
    /// `rhs <= lhs + 1e-8`.
    pub valid: bool,
    /// Both sides vanish at `new = old`.
    pub tight: bool,
    /// The exact-visitation bound dominates the averaged-policy bound.
    pub ordered: bool,
    /// `tv_avg <= E[sqrt(KL/2)] <= sqrt(kl_avg/2)`.
    pub pinsker: bool,
    /// The averaged-policy bound is exact with `f = V^new`.
    pub exact_at_new_value: bool,
    pub violation: bool,
}

/// The random instance behind a trial.
pub struct TrialInstance {
    pub mdp: Mdp,
    pub old: TabularPolicy,
    pub new: TabularPolicy,
    pub f: crate::mdp::ShapingFunction,
}

pub fn trial_instance(trial: &BoundTrial) -> Result<TrialInstance> {
    let mdp = match &trial.mdp {
        Some(mdp) => mdp.clone(),
        None => generate_garnet(&trial.garnet)?,
    };
    let mut rng = seeded_rng(trial.garnet.seed, 1);
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let old = random_policy(&mut rng, n, m);
    let rho = random_policy(&mut rng, n, m);
    let new = old.mix(&rho, trial.lambda)?;
    let f = random_shaping(&mut rng, n, 1.0 / (1.0 - mdp.gamma()));
    Ok(TrialInstance { mdp, old, new, f })
}

/// Runs one trial. `penalty_scale` other than 1 deliberately weakens every
/// penalty and exists only to exercise violation reporting.
pub fn run_bound_trial(trial: &BoundTrial, penalty_scale: f64) -> Result<BoundTrialRow> {
    let TrialInstance { mdp, old, new, f } = trial_instance(trial)?;
    let estimate = corrupt_value_estimator(&mdp, &old, trial.noise, trial.garnet.seed ^ 0xa5a5)?;
    let eval = |variant, new: &TabularPolicy, f| {
        improvement_bound_with_penalty_scale(
            &mdp,
            &old,
            new,
            f,
            variant,
            Some(&estimate),
            penalty_scale,
        )
    };

    let report = eval(trial.variant, &new, &f)?;
    let at_old = eval(trial.variant, &old, &f)?;
    let tight = at_old.true_improvement.abs() <= TIGHTNESS_TOL && at_old.rhs.abs() <= TIGHTNESS_TOL;
    let ordered = eval(BoundVariant::StateTv, &new, &f)?.rhs
        >= eval(BoundVariant::PolicyTv, &new, &f)?.rhs - ORDERING_TOL;
    let div = divergence_profile(&mdp, &old, &new)?;
    let pinsker = div.tv_avg <= div.pinsker_avg + PINSKER_TOL
        && div.pinsker_avg <= div.pinsker_bound() + PINSKER_TOL;
    let f_new = value_functions(&mdp, &new)?.value_shaping();
    let exact = eval(BoundVariant::PolicyTv, &new, &f_new)?;
    let exact_at_new_value = (exact.rhs - exact.true_improvement).abs() <= EXACTNESS_TOL;
    let valid = report.holds(VALIDITY_TOL);

    Ok(BoundTrialRow {
        trial: trial.trial,
        seed: trial.seed,
        garnet_seed: trial.garnet.seed,
        states: trial.garnet.num_states,
        actions: trial.garnet.num_actions,
        branching: trial.garnet.branching,
        gamma: trial.garnet.gamma,
        lambda: trial.lambda,
        noise: trial.noise,
        variant: trial.variant,
        lhs: report.true_improvement,
        rhs: report.rhs,
        surrogate: report.terms.surrogate,
        epsilon: report.terms.epsilon,
        tv_avg: report.terms.tv_avg,
        tv_max: report.terms.tv_max,
        kl_avg: report.terms.kl_avg,
        penalty_coefficient: report.terms.penalty_coefficient,
        valid,
        tight,
        ordered,
        pinsker,
        exact_at_new_value,
        violation: !(valid && tight && ordered && pinsker && exact_at_new_value),
    })
}

/// One accepted trust-region step and its worst-case check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrpoSample {
    pub kl_avg: f64,
    pub expected_advantage: f64,
    pub epsilon: f64,
    pub improvement: f64,
    pub bound: f64,
    pub violation: bool,
}

/// Tally of a trust-region sampling run on one MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrpoTally {
    pub accepted: Vec<TrpoSample>,
    /// The accepted policies, in the order of `accepted`.
    #[serde(skip)]
    pub policies: Vec<TabularPolicy>,
    /// Proposals outside the KL ball.
    pub rejected_radius: usize,
    /// Proposals with negative trust-region objective, which no maximizer has.
    pub rejected_objective: usize,
}

pub const TRPO_TOL: f64 = 1e-9;

/// Rejection-samples `count` policies inside the average-KL ball of radius
/// `delta` around `old` whose trust-region objective `E_{d^old, new}[A^old]`
/// is nonnegative, and checks the worst-case one-step bound on each.
///
/// Proposals are mixtures `(1 - lambda) old + lambda rho` with `lambda` uniform
/// on `[0, 2 lambda*)`, where `lambda*` is where the average KL along the
/// mixture path reaches `delta`; about half of them land outside the ball and
/// are rejected. The direction `rho` blends a random policy with the greedy
/// policy of `A^old` at a uniform weight, since purely random directions have
/// negative objective almost surely when `old` already favours good actions.
pub fn sample_trust_region<R: Rng>(
    mdp: &Mdp,
    old: &TabularPolicy,
    delta: f64,
    count: usize,
    rng: &mut R,
) -> Result<TrpoTally> {
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let d_old = discounted_visitation(mdp, old)?;
    let vf_old = value_functions(mdp, old)?;
    let gamma = mdp.gamma();
    let kl_of =
        |pi: &TabularPolicy| -> Result<f64> { Ok(divergences_under(&d_old, old, pi).kl_avg) };

    let mut tally = TrpoTally {
        accepted: Vec::with_capacity(count),
        policies: Vec::with_capacity(count),
        rejected_radius: 0,
        rejected_objective: 0,
    };
    let greedy: Vec<usize> = (0..n)
        .map(|s| {
            let adv = vf_old.adv_row(s);
            (0..m).fold(0, |best, a| if adv[a] > adv[best] { a } else { best })
        })
        .collect();
    let greedy = TabularPolicy::deterministic(m, &greedy)?;
    let mut proposals = 0usize;
    while tally.accepted.len() < count {
        proposals += 1;
        if proposals > 1000 * count.max(1) {
            return Err(Error::Numeric(format!(
                "trust-region sampler accepted {} of {count} after {proposals} proposals",
                tally.accepted.len()
            )));
        }
        let rho = random_policy(rng, n, m).mix(&greedy, rng.gen())?;
        // KL(old || mix) is increasing in lambda along the segment
        let (mut lo, mut hi) = (0.0, 1.0);
        if kl_of(&old.mix(&rho, 1.0)?)? <= delta {
            lo = 1.0;
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if kl_of(&old.mix(&rho, mid)?)? <= delta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let lambda = (2.0 * lo * rng.gen::<f64>()).min(1.0);
        let new = old.mix(&rho, lambda)?;
        let kl_avg = kl_of(&new)?;
        if kl_avg > delta {
            tally.rejected_radius += 1;
            continue;
        }
        let gain = advantage_gain(&vf_old, old, &new);
        let expected_advantage = d_old.expect(&gain);
        if expected_advantage < 0.0 {
            tally.rejected_objective += 1;
            continue;
        }
        let epsilon = gain.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        let bound = -(2.0 * delta).sqrt() * gamma * epsilon / ((1.0 - gamma) * (1.0 - gamma));
        let improvement = value_functions(mdp, &new)?.ret() - vf_old.ret();
        tally.accepted.push(TrpoSample {
            kl_avg,
            expected_advantage,
            epsilon,
            improvement,
            bound,
            violation: improvement < bound - TRPO_TOL,
        });
        tally.policies.push(new);
    }
    Ok(tally)
}

/// Monte-Carlo against exact agreement on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub instance_seed: u64,
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub noise: f64,
    pub sample_seed: u64,
    pub n: usize,
    pub return_mean: f64,
    pub return_std_error: f64,
    pub return_horizon: usize,
    pub return_truncation: f64,
    pub return_exact: f64,
    pub return_agrees: bool,
    pub objective_mean: f64,
    pub objective_std_error: f64,
    pub objective_horizon: usize,
    pub objective_truncation: f64,
    pub objective_exact: f64,
    pub objective_agrees: bool,
}

/// Standard-error multiplier of the agreement envelope.
pub const AGREEMENT_SIGMAS: f64 = 4.0;
pub const TRUNCATION_TOL: f64 = 1e-3;

/// Policies, estimate and penalty shared by every sampling seed of an instance.
pub struct EstimateInstance {
    pub mdp: Mdp,
    pub old: TabularPolicy,
    pub new: TabularPolicy,
    pub estimate: AdvantageEstimate,
    /// `C(s) = 2 (c(s) + gamma eps / (1 - gamma))`.
    pub penalty: Vec<f64>,
    pub return_exact: f64,
    pub objective_exact: f64,
    pub return_horizon: usize,
    pub objective_horizon: usize,
}

impl EstimateInstance {
    pub fn new(garnet: &GarnetSpec, noise: f64) -> Result<Self> {
        Self::for_mdp(generate_garnet(garnet)?, garnet.seed, noise)
    }

    /// Policies and estimate are drawn from `seed`.
    pub fn for_mdp(mdp: Mdp, seed: u64, noise: f64) -> Result<Self> {
        let mut rng = seeded_rng(seed, 2);
        let (n, m) = (mdp.num_states(), mdp.num_actions());
        let old = random_policy(&mut rng, n, m);
        let rho = random_policy(&mut rng, n, m);
        let new = old.mix(&rho, 0.5)?;
        let vf = value_functions(&mdp, &old)?;
        let estimate = corrupt_value_estimator(&mdp, &old, noise, seed ^ 0x5a5a)?;
        let gamma = mdp.gamma();
        let eps = vf.max_abs_advantage();
        let penalty: Vec<f64> = estimate
            .c_per_state()
            .iter()
            .map(|c| 2.0 * (c + gamma * eps / (1.0 - gamma)))
            .collect();

        let d = discounted_visitation(&mdp, &old)?;
        let per_state: Vec<f64> = (0..n)
            .map(|s| {
                let gain: f64 = new
                    .row(s)
                    .iter()
                    .zip(estimate.row(s))
                    .map(|(p, a)| p * a)
                    .sum();
                gain - penalty[s] * tv_distance(new.row(s), old.row(s))
            })
            .collect();
        let objective_exact = d.expect(&per_state) / (1.0 - gamma);

        // per-step magnitude bound of the importance-weighted term
        let magnitude = (0..n)
            .map(|s| {
                let weighted = (0..m)
                    .filter(|&a| old.prob(s, a) > 0.0)
                    .map(|a| (new.prob(s, a) / old.prob(s, a) * estimate.row(s)[a]).abs())
                    .fold(0.0f64, f64::max);
                weighted + penalty[s]
            })
            .fold(0.0f64, f64::max);
        Ok(Self {
            return_exact: vf.ret(),
            return_horizon: horizon_for_tolerance(gamma, mdp.reward_bound(), TRUNCATION_TOL),
            objective_horizon: horizon_for_tolerance(gamma, magnitude, TRUNCATION_TOL),
            objective_exact,
            mdp,
            old,
            new,
            estimate,
            penalty,
        })
    }

    pub fn sample(
        &self,
        instance_seed: u64,
        noise: f64,
        n: usize,
        seed: u64,
    ) -> Result<EstimateRow> {
        let ret = mc_return(&self.mdp, &self.old, n, self.return_horizon, seed)?;
        let obj = mc_objective(
            &self.mdp,
            &self.old,
            &self.new,
            &self.estimate,
            &self.penalty,
            n,
            self.objective_horizon,
            seed,
        )?;
        Ok(EstimateRow {
            instance_seed,
            states: self.mdp.num_states(),
            actions: self.mdp.num_actions(),
            gamma: self.mdp.gamma(),
            noise,
            sample_seed: seed,
            n,
            return_mean: ret.mean,
            return_std_error: ret.std_error,
            return_horizon: ret.horizon,
            return_truncation: ret.truncation_bound,
            return_exact: self.return_exact,
            return_agrees: ret.agrees_with(self.return_exact, AGREEMENT_SIGMAS),
            objective_mean: obj.mean,
            objective_std_error: obj.std_error,
            objective_horizon: obj.horizon,
            objective_truncation: obj.truncation_bound,
            objective_exact: self.objective_exact,
            objective_agrees: obj.agrees_with(self.objective_exact, AGREEMENT_SIGMAS),
        })
    }
}

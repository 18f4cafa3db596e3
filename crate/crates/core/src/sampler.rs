//! Seeded trajectory simulation and Monte-Carlo estimates.
//!
//! Trajectory `i` of an estimate with seed `k` is drawn from ChaCha8 stream
//! `(k, i)`, and per-trajectory results are reduced in index order, so serial
//! and parallel runs produce bit-identical estimates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{tv_distance, AdvantageEstimate};
use crate::error::{Error, Result};
use crate::instances::seeded_rng;
use crate::mdp::{q_from_values, value_functions, Mdp, TabularPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub next_states: Vec<usize>,
    pub rewards: Vec<f64>,
    pub horizon: usize,
    pub seed: u64,
}

impl Trajectory {
    /// `sum_t gamma^t R_t`.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut weight = 1.0;
        let mut total = 0.0;
        for r in &self.rewards {
            total += weight * r;
            weight *= gamma;
        }
        total
    }
}

/// A Monte-Carlo mean with its standard error and truncation allowance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub horizon: usize,
    /// `gamma^H M / (1 - gamma)` for per-step magnitude bound `M`.
    pub truncation_bound: f64,
    pub seed: u64,
}

impl SampleEstimate {
    /// `|mean - target| <= k * std_error + truncation_bound`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + self.truncation_bound
    }
}

/// Smallest `H >= 1` with `gamma^H magnitude / (1 - gamma) <= tol`.
pub fn horizon_for_tolerance(gamma: f64, magnitude: f64, tol: f64) -> usize {
    if gamma == 0.0 || magnitude == 0.0 {
        return 1;
    }
    let h = ((tol * (1.0 - gamma) / magnitude).ln() / gamma.ln()).ceil();
    if h.is_finite() && h > 1.0 {
        h as usize
    } else {
        1
    }
}

pub fn truncation_bound(gamma: f64, magnitude: f64, horizon: usize) -> f64 {
    gamma.powi(horizon as i32) * magnitude / (1.0 - gamma)
}

/// Cumulative tables for fast categorical draws.
struct Simulator<'a> {
    mdp: &'a Mdp,
    policy_cdf: Vec<f64>,
    transition_cdf: Vec<f64>,
    start_cdf: Vec<f64>,
}

fn cumulative(rows: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows.chunks(width) {
        let mut acc = 0.0;
        for p in row {
            acc += p;
            out.push(acc);
        }
    }
    out
}

/// Index of the first cumulative entry above `u`; round-off past the last
/// entry falls back to the last outcome with positive mass.
fn draw(cdf: &[f64], u: f64) -> usize {
    match cdf.iter().position(|&c| u < c) {
        Some(i) => i,
        None => {
            let mut last = cdf.len() - 1;
            while last > 0 && cdf[last] == cdf[last - 1] {
                last -= 1;
            }
            last
        }
    }
}

impl<'a> Simulator<'a> {
    fn new(mdp: &'a Mdp, policy: &TabularPolicy) -> Result<Self> {
        policy.check_shape(mdp)?;
        Ok(Self {
            mdp,
            policy_cdf: cumulative(policy.as_slice(), mdp.num_actions()),
            transition_cdf: cumulative(mdp.transition_flat(), mdp.num_states()),
            start_cdf: cumulative(mdp.start_dist(), mdp.num_states()),
        })
    }

    fn start(&self, rng: &mut ChaCha8Rng) -> usize {
        draw(&self.start_cdf, rng.gen())
    }

    /// Returns `(action, next_state)`.
    fn step(&self, s: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let (n, m) = (self.mdp.num_states(), self.mdp.num_actions());
        let a = draw(&self.policy_cdf[s * m..(s + 1) * m], rng.gen());
        let base = (s * m + a) * n;
        let next = draw(&self.transition_cdf[base..base + n], rng.gen());
        (a, next)
    }

    /// Discounted sum over `horizon` steps of `term(s, a, s')`.
    fn rollout<F: Fn(usize, usize, usize) -> f64>(
        &self,
        rng: &mut ChaCha8Rng,
        horizon: usize,
        term: F,
    ) -> f64 {
        let gamma = self.mdp.gamma();
        let mut s = self.start(rng);
        let mut weight = 1.0;
        let mut total = 0.0;
        for _ in 0..horizon {
            let (a, next) = self.step(s, rng);
            total += weight * term(s, a, next);
            weight *= gamma;
            s = next;
        }
        total
    }
}

/// Draws one trajectory of length `horizon` from stream 0 of `seed`.
pub fn sample_trajectory(
    mdp: &Mdp,
    policy: &TabularPolicy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Config(
            "trajectory horizon must be at least 1".into(),
        ));
    }
    let sim = Simulator::new(mdp, policy)?;
    let mut rng = seeded_rng(seed, 0);
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        next_states: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        horizon,
        seed,
    };
    let mut s = sim.start(&mut rng);
    for _ in 0..horizon {
        let (a, next) = sim.step(s, &mut rng);
        traj.states.push(s);
        traj.actions.push(a);
        traj.next_states.push(next);
        traj.rewards.push(mdp.reward(s, a, next));
        s = next;
    }
    Ok(traj)
}

#[cfg(feature = "parallel")]
fn per_trajectory<F: Fn(u64) -> f64 + Sync + Send>(n: usize, f: F) -> Vec<f64> {
    use rayon::prelude::*;
    (0..n as u64).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn per_trajectory<F: Fn(u64) -> f64>(n: usize, f: F) -> Vec<f64> {
    (0..n as u64).map(f).collect()
}

fn summarize(values: &[f64], horizon: usize, truncation_bound: f64, seed: u64) -> SampleEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    SampleEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
        horizon,
        truncation_bound,
        seed,
    }
}

fn check_count(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 trajectories, got {n}"
        )));
    }
    Ok(())
}

/// Monte-Carlo estimate of `J(pi)` from `n` truncated rollouts.
pub fn mc_return(
    mdp: &Mdp,
    policy: &TabularPolicy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<SampleEstimate> {
    check_count(n)?;
    let sim = Simulator::new(mdp, policy)?;
    let values = per_trajectory(n, |i| {
        let mut rng = seeded_rng(seed, i);
        sim.rollout(&mut rng, horizon, |s, a, next| mdp.reward(s, a, next))
    });
    let bound = truncation_bound(mdp.gamma(), mdp.reward_bound(), horizon);
    Ok(summarize(&values, horizon, bound, seed))
}

/// Monte-Carlo estimate, on trajectories of `old`, of
/// `E[sum_t gamma^t ((new/old)(a_t|s_t) A_hat(s_t,a_t) - C(s_t) D_TV(new||old)[s_t])]`.
///
/// The exact target is `(1/(1-gamma)) sum_s d^old(s) [E_{a ~ new}[A_hat] - C(s) D_TV[s]]`.
#[allow(clippy::too_many_arguments)]
pub fn mc_objective(
    mdp: &Mdp,
    old: &TabularPolicy,
    new: &TabularPolicy,
    estimate: &AdvantageEstimate,
    penalty: &[f64],
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<SampleEstimate> {
    check_count(n)?;
    new.check_shape(mdp)?;
    if penalty.len() != mdp.num_states() {
        return Err(Error::Dimension {
            what: "penalty coefficients",
            expected: mdp.num_states(),
            actual: penalty.len(),
        });
    }
    let m = mdp.num_actions();
    let sim = Simulator::new(mdp, old)?;
    // per-(s, a) step term; actions the old policy never takes are never sampled
    let mut term = vec![0.0; mdp.num_states() * m];
    let mut magnitude: f64 = 0.0;
    for s in 0..mdp.num_states() {
        let tv_pen = penalty[s] * tv_distance(new.row(s), old.row(s));
        for a in 0..m {
            let p = old.prob(s, a);
            if p > 0.0 {
                let t = new.prob(s, a) / p * estimate.row(s)[a] - tv_pen;
                term[s * m + a] = t;
                magnitude = magnitude.max(t.abs());
            }
        }
    }
    let values = per_trajectory(n, |i| {
        let mut rng = seeded_rng(seed, i);
        sim.rollout(&mut rng, horizon, |s, a, _| term[s * m + a])
    });
    let bound = truncation_bound(mdp.gamma(), magnitude, horizon);
    Ok(summarize(&values, horizon, bound, seed))
}

/// Advantage estimate `A_hat(s,a) = E_{s'}[R + gamma V_hat(s')] - V_hat(s)`
/// from `V_hat = V^pi + U[-noise_scale, noise_scale]`, with its exact error.
pub fn corrupt_value_estimator(
    mdp: &Mdp,
    policy: &TabularPolicy,
    noise_scale: f64,
    seed: u64,
) -> Result<AdvantageEstimate> {
    if noise_scale.is_nan() || noise_scale < 0.0 {
        return Err(Error::Config(format!(
            "noise scale {noise_scale} must be >= 0"
        )));
    }
    let vf = value_functions(mdp, policy)?;
    let mut rng = seeded_rng(seed, 0);
    let v_hat: Vec<f64> = vf
        .v()
        .iter()
        .map(|v| {
            if noise_scale == 0.0 {
                *v
            } else {
                v + rng.gen_range(-noise_scale..=noise_scale)
            }
        })
        .collect();
    advantage_from_values(mdp, policy, &v_hat)
}

/// `A_hat(s,a) = E_{s'}[R + gamma V_hat(s')] - V_hat(s)` for a given value table.
pub fn advantage_from_values(
    mdp: &Mdp,
    policy: &TabularPolicy,
    v_hat: &[f64],
) -> Result<AdvantageEstimate> {
    let vf = value_functions(mdp, policy)?;
    let m = mdp.num_actions();
    let a_hat = q_from_values(mdp, v_hat)
        .into_iter()
        .enumerate()
        .map(|(i, q)| q - v_hat[i / m])
        .collect();
    AdvantageEstimate::against(&vf, m, a_hat)
}

/// A scale for the advantage penalty when the exact `max |A|` is unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub value: f64,
    /// True when `value` provably bounds `max_{s,a} |A^pi(s,a)|`.
    pub certified: bool,
}

/// `2 R_max / (1 - gamma)`, which bounds every advantage.
pub fn worst_case_epsilon(mdp: &Mdp) -> EpsilonEstimate {
    EpsilonEstimate {
        value: 2.0 * mdp.reward_bound() / (1.0 - mdp.gamma()),
        certified: true,
    }
}

/// Largest `|A_hat|` over the state-action pairs visited by `trajectories`.
pub fn heuristic_epsilon(
    estimate: &AdvantageEstimate,
    trajectories: &[Trajectory],
) -> EpsilonEstimate {
    let value = trajectories
        .iter()
        .flat_map(|t| t.states.iter().zip(&t.actions))
        .map(|(&s, &a)| estimate.row(s)[a].abs())
        .fold(0.0, f64::max);
    EpsilonEstimate {
        value,
        certified: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::discounted_visitation;
    use crate::testutil::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_state_trajectory_is_constant() {
        let mdp = single_state(1.0, 0.9);
        let t = sample_trajectory(&mdp, &TabularPolicy::uniform(1, 1), 10, 3).unwrap();
        assert!(t.states.iter().all(|s| *s == 0));
        assert!(t.actions.iter().all(|a| *a == 0));
        assert!(t.rewards.iter().all(|r| *r == 1.0));
        assert_eq!(t.states.len(), 10);
    }

    #[test]
    fn trajectories_are_deterministic_in_the_seed() {
        let mut r = rng(1);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let a = sample_trajectory(&mdp, &pi, 50, 77).unwrap();
        assert_eq!(a, sample_trajectory(&mdp, &pi, 50, 77).unwrap());
        assert_ne!(a, sample_trajectory(&mdp, &pi, 50, 78).unwrap());
        for t in 0..50 {
            assert!(mdp.transition(a.states[t], a.actions[t], a.next_states[t]) > 0.0);
            if t + 1 < 50 {
                assert_eq!(a.next_states[t], a.states[t + 1]);
            }
        }
    }

    #[test]
    fn absorbing_chain_trajectory() {
        let mdp = absorbing_chain(0.9);
        for seed in 0..5 {
            let t = sample_trajectory(&mdp, &TabularPolicy::uniform(2, 1), 6, seed).unwrap();
            assert_eq!(t.states, vec![0, 1, 1, 1, 1, 1]);
        }
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let mdp = single_state(1.0, 0.9);
        assert!(sample_trajectory(&mdp, &TabularPolicy::uniform(1, 1), 0, 0).is_err());
    }

    #[test]
    fn deterministic_return_has_no_spread() {
        let mdp = single_state(1.0, 0.9);
        let est = mc_return(&mdp, &TabularPolicy::uniform(1, 1), 10, 200, 1).unwrap();
        assert_abs_diff_eq!(est.mean, (1.0 - 0.9f64.powi(200)) / 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(est.std_error, 0.0, epsilon = 1e-14);
        assert!((est.mean - 10.0).abs() <= est.truncation_bound + 1e-12);
    }

    #[test]
    fn zero_reward_estimates_zero() {
        let mut r = rng(2);
        let base = random_mdp(&mut r, 4, 2, 0.9);
        let mdp = Mdp::new(
            4,
            2,
            0.9,
            base.start_dist().to_vec(),
            base.transition_flat().to_vec(),
            vec![0.0; 32],
        )
        .unwrap();
        let est = mc_return(&mdp, &random_policy(&mut r, 4, 2), 100, 20, 5).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.truncation_bound, 0.0);
    }

    #[test]
    fn horizon_rule() {
        assert_eq!(horizon_for_tolerance(0.0, 1.0, 1e-3), 1);
        assert_eq!(horizon_for_tolerance(0.9, 0.0, 1e-3), 1);
        let h = horizon_for_tolerance(0.9, 1.0, 1e-3);
        assert!(truncation_bound(0.9, 1.0, h) <= 1e-3);
        assert!(truncation_bound(0.9, 1.0, h - 1) > 1e-3);
        assert!(truncation_bound(0.9, 1.0, h + 5) < truncation_bound(0.9, 1.0, h));
    }

    #[test]
    fn mc_return_agrees_with_exact_return() {
        let mut r = rng(3);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let h = horizon_for_tolerance(0.9, mdp.reward_bound(), 1e-3);
        let exact = value_functions(&mdp, &pi).unwrap().ret();
        let est = mc_return(&mdp, &pi, 20_000, h, 11).unwrap();
        assert!(est.agrees_with(exact, 4.0), "{est:?} vs {exact}");
    }

    #[test]
    fn mc_objective_at_old_policy_is_centered() {
        let mut r = rng(4);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let est = AdvantageEstimate::exact(&vf, 3);
        let h = horizon_for_tolerance(0.9, vf.max_abs_advantage(), 1e-3);
        let mc = mc_objective(&mdp, &pi, &pi, &est, &[0.7; 5], 20_000, h, 2).unwrap();
        assert!(mc.agrees_with(0.0, 4.0), "{mc:?}");
    }

    #[test]
    fn mc_objective_matches_exact_penalized_objective() {
        let mut r = rng(5);
        let mdp = random_mdp(&mut r, 5, 3, 0.8);
        let old = random_policy(&mut r, 5, 3);
        let new = old.mix(&random_policy(&mut r, 5, 3), 0.5).unwrap();
        let est = corrupt_value_estimator(&mdp, &old, 0.1, 9).unwrap();
        let penalty: Vec<f64> = (0..5).map(|s| 0.2 * s as f64).collect();
        let d = discounted_visitation(&mdp, &old).unwrap();
        let exact = exact_trajectory_objective(&mdp, d.dist(), &old, &new, est.a_hat(), &penalty);
        let h = horizon_for_tolerance(0.8, 5.0, 1e-3);
        let mc = mc_objective(&mdp, &old, &new, &est, &penalty, 20_000, h, 3).unwrap();
        assert!(mc.agrees_with(exact, 4.0), "{mc:?} vs {exact}");
    }

    #[test]
    fn noiseless_estimator_is_exact() {
        let mut r = rng(6);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let est = corrupt_value_estimator(&mdp, &pi, 0.0, 1).unwrap();
        assert_eq!(est.a_hat(), vf.adv_table());
        assert!(est.c_per_state().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn constant_value_offset_preserves_argmax() {
        let mut r = rng(7);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let shifted: Vec<f64> = vf.v().iter().map(|v| v + 3.0).collect();
        let est = advantage_from_values(&mdp, &pi, &shifted).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                assert_abs_diff_eq!(
                    est.row(s)[a],
                    vf.adv(s, a) + (0.9 - 1.0) * 3.0,
                    epsilon = 1e-12
                );
            }
            let argmax = |row: &[f64]| (0..3).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert_eq!(argmax(est.row(s)), argmax(vf.adv_row(s)));
        }
    }

    #[test]
    fn corrupted_error_matches_direct_max_abs_difference() {
        let mut r = rng(8);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let est = corrupt_value_estimator(&mdp, &pi, 0.1, 4).unwrap();
        for s in 0..5 {
            let direct = (0..3)
                .map(|a| (est.row(s)[a] - vf.adv(s, a)).abs())
                .fold(0.0, f64::max);
            assert_abs_diff_eq!(est.c_per_state()[s], direct, epsilon = 1e-12);
            assert!(est.c_per_state()[s] > 0.0);
        }
    }

    #[test]
    fn epsilon_estimates() {
        let mut r = rng(9);
        let mdp = random_mdp(&mut r, 5, 3, 0.9);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let worst = worst_case_epsilon(&mdp);
        assert!(worst.certified);
        assert!(worst.value >= vf.max_abs_advantage());
        let est = AdvantageEstimate::exact(&vf, 3);
        let trajs: Vec<_> = (0..10)
            .map(|i| sample_trajectory(&mdp, &pi, 30, i).unwrap())
            .collect();
        let heur = heuristic_epsilon(&est, &trajs);
        assert!(!heur.certified);
        assert!(heur.value <= vf.max_abs_advantage());
    }
}

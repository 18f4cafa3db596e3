//! Independent reference computations for tests.
//!
//! Nothing here shares a code path with the library: kernels are built with
//! explicit loops, visitations with truncated power series or explicit matrix
//! inverses, values with fixed-point iteration, and per-state policy steps with
//! a generic LP solver or grid search.

#![allow(clippy::needless_range_loop)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::instances::seeded_rng;
use crate::mdp::{Mdp, ShapingFunction, TabularPolicy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed, 0x5eed)
}

/// One state, one action, constant reward `r`.
pub fn single_state(r: f64, gamma: f64) -> Mdp {
    Mdp::new(1, 1, gamma, vec![1.0], vec![1.0], vec![r]).unwrap()
}

/// One state, two actions with rewards 1 and 0.
pub fn single_state_two_actions(gamma: f64) -> Mdp {
    Mdp::new(1, 2, gamma, vec![1.0], vec![1.0, 1.0], vec![1.0, 0.0]).unwrap()
}

/// Two states; action 0 stays, action 1 swaps. Reward 1 for landing in state 1.
pub fn stay_or_swap(gamma: f64) -> Mdp {
    let transition = vec![
        1.0, 0.0, // s0 stay
        0.0, 1.0, // s0 swap
        0.0, 1.0, // s1 stay
        1.0, 0.0, // s1 swap
    ];
    let reward = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    Mdp::new(2, 2, gamma, vec![1.0, 0.0], transition, reward).unwrap()
}

/// `s0 -> s1 -> s1 -> ...`, one action, starting in `s0`, reward 1 on arrival in `s1`.
pub fn absorbing_chain(gamma: f64) -> Mdp {
    Mdp::new(
        2,
        1,
        gamma,
        vec![1.0, 0.0],
        vec![0.0, 1.0, 0.0, 1.0],
        vec![0.0, 1.0, 0.0, 1.0],
    )
    .unwrap()
}

pub fn triple_loop_kernel(mdp: &Mdp, pi: &TabularPolicy) -> Vec<Vec<f64>> {
    let n = mdp.num_states();
    let mut k = vec![vec![0.0; n]; n];
    for s in 0..n {
        for (next, slot) in k[s].iter_mut().enumerate() {
            for a in 0..mdp.num_actions() {
                *slot += pi.prob(s, a) * mdp.transition(s, a, next);
            }
        }
    }
    k
}

/// `(1 - gamma) sum_{t <= horizon} gamma^t p_t`, with `p_t` propagated step by step.
pub fn power_series_visitation(mdp: &Mdp, pi: &TabularPolicy, horizon: usize) -> Vec<f64> {
    let k = triple_loop_kernel(mdp, pi);
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let mut p = mdp.start_dist().to_vec();
    let mut d = vec![0.0; n];
    let mut weight = 1.0 - gamma;
    for _ in 0..=horizon {
        for s in 0..n {
            d[s] += weight * p[s];
        }
        let mut next = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                next[t] += p[s] * k[s][t];
            }
        }
        p = next;
        weight *= gamma;
    }
    d
}

/// `J(pi)` from the truncated power series, with the horizon chosen so the
/// neglected tail is below `tol`.
pub fn series_return(mdp: &Mdp, pi: &TabularPolicy, tol: f64) -> f64 {
    let gamma = mdp.gamma();
    let scale = mdp.reward_bound().max(1e-300) / (1.0 - gamma);
    let horizon = if gamma == 0.0 {
        0
    } else {
        ((tol / scale).ln() / gamma.ln()).ceil().max(0.0) as usize
    };
    let d = power_series_visitation(mdp, pi, horizon);
    let mut total = 0.0;
    for (s, weight) in d.iter().enumerate() {
        for a in 0..mdp.num_actions() {
            for next in 0..mdp.num_states() {
                total +=
                    weight * pi.prob(s, a) * mdp.transition(s, a, next) * mdp.reward(s, a, next);
            }
        }
    }
    total / (1.0 - gamma)
}

/// Repeated Bellman expectation backups from zero.
pub fn iterate_policy_evaluation(mdp: &Mdp, pi: &TabularPolicy, sweeps: usize) -> Vec<f64> {
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    for _ in 0..sweeps {
        v = (0..n)
            .map(|s| {
                let mut total = 0.0;
                for a in 0..mdp.num_actions() {
                    for next in 0..n {
                        total += pi.prob(s, a)
                            * mdp.transition(s, a, next)
                            * (mdp.reward(s, a, next) + mdp.gamma() * v[next]);
                    }
                }
                total
            })
            .collect();
    }
    v
}

/// Optimal return `J* = <mu, V*>` by value iteration to a sup-norm change below `tol`.
pub fn optimal_return(mdp: &Mdp, tol: f64) -> f64 {
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.num_actions())
                    .map(|a| {
                        (0..n)
                            .map(|t| {
                                mdp.transition(s, a, t) * (mdp.reward(s, a, t) + mdp.gamma() * v[t])
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change * mdp.gamma() / (1.0 - mdp.gamma()).max(1e-300) <= tol || change == 0.0 {
            break;
        }
    }
    mdp.start_dist().iter().zip(&v).map(|(m, x)| m * x).sum()
}

/// Per-state expected residuals under `pi` and the `(s, a)` max, by explicit loops.
pub fn triple_loop_residuals(
    mdp: &Mdp,
    f: &ShapingFunction,
    pi: &TabularPolicy,
) -> (Vec<f64>, f64) {
    let n = mdp.num_states();
    let fv = f.values();
    let mut per_state = vec![0.0; n];
    let mut eps_sa: f64 = 0.0;
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let mut e = 0.0;
            for t in 0..n {
                e += mdp.transition(s, a, t) * (mdp.reward(s, a, t) + mdp.gamma() * fv[t] - fv[s]);
            }
            per_state[s] += pi.prob(s, a) * e;
            eps_sa = eps_sa.max(e.abs());
        }
    }
    (per_state, eps_sa)
}

/// `|| gamma Gbar Delta d ||_1` with `Gbar = (I - gamma P_new)^{-1}` and
/// `Delta = P_new - P_old`, in column-stochastic orientation and with an
/// explicit matrix inverse.
pub fn resolvent_visitation_gap(
    kernel_old: &DMatrix<f64>,
    kernel_new: &DMatrix<f64>,
    d_old: &[f64],
    gamma: f64,
) -> f64 {
    let n = d_old.len();
    let p_old = kernel_old.transpose();
    let p_new = kernel_new.transpose();
    let g_bar = (DMatrix::identity(n, n) - &p_new * gamma)
        .try_inverse()
        .expect("I - gamma P is invertible");
    let delta = p_new - p_old;
    let gap = g_bar * delta * DVector::from_column_slice(d_old) * gamma;
    gap.iter().map(|x| x.abs()).sum()
}

/// `sum_a x(a) adv(a) - sum_a pi(a) adv(a) - (c/2) sum_a |x(a) - pi(a)|`.
pub fn oracle_step_objective(adv: &[f64], pi: &[f64], x: &[f64], c: f64) -> f64 {
    let gain: f64 = adv
        .iter()
        .zip(x.iter().zip(pi))
        .map(|(a, (p, q))| a * (p - q))
        .sum();
    let tv: f64 = 0.5 * x.iter().zip(pi).map(|(p, q)| (p - q).abs()).sum::<f64>();
    gain - c * tv
}

/// Optimal value of the per-state penalized step, solved as a generic LP with
/// split variables `t(a) >= |x(a) - pi(a)|`.
pub fn step_lp_optimum(adv: &[f64], pi: &[f64], c: f64) -> f64 {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let xs: Vec<_> = adv
        .iter()
        .map(|&a| problem.add_var(a, (0.0, 1.0)))
        .collect();
    let ts: Vec<_> = adv
        .iter()
        .map(|_| problem.add_var(-c / 2.0, (0.0, f64::INFINITY)))
        .collect();
    let ones: Vec<_> = xs.iter().map(|&x| (x, 1.0)).collect();
    problem.add_constraint(&ones, ComparisonOp::Eq, 1.0);
    for ((&x, &t), &p) in xs.iter().zip(&ts).zip(pi) {
        problem.add_constraint([(t, 1.0), (x, -1.0)], ComparisonOp::Ge, -p);
        problem.add_constraint([(t, 1.0), (x, 1.0)], ComparisonOp::Ge, p);
    }
    let solution = problem.solve().expect("bounded feasible LP");
    let baseline: f64 = adv.iter().zip(pi).map(|(a, p)| a * p).sum();
    solution.objective() - baseline
}

/// Best objective over a grid of the 1-simplex (two actions) at the given resolution.
pub fn step_grid_optimum_two_actions(adv: &[f64], pi: &[f64], c: f64, resolution: f64) -> f64 {
    let steps = (1.0 / resolution).round() as usize;
    (0..=steps)
        .map(|i| {
            let x0 = i as f64 / steps as f64;
            oracle_step_objective(adv, pi, &[x0, 1.0 - x0], c)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(1/(1-gamma)) sum_s d(s) [sum_a new(a|s) a_hat(s,a) - c(s) D_TV(new||old)[s]]`,
/// the exact target of the trajectory-form penalized objective.
pub fn exact_trajectory_objective(
    mdp: &Mdp,
    d_old: &[f64],
    old: &TabularPolicy,
    new: &TabularPolicy,
    a_hat: &[f64],
    penalty: &[f64],
) -> f64 {
    let m = mdp.num_actions();
    let mut total = 0.0;
    for s in 0..mdp.num_states() {
        let mut gain = 0.0;
        let mut l1 = 0.0;
        for a in 0..m {
            gain += new.prob(s, a) * a_hat[s * m + a];
            l1 += (new.prob(s, a) - old.prob(s, a)).abs();
        }
        total += d_old[s] * (gain - penalty[s] * 0.5 * l1);
    }
    total / (1.0 - mdp.gamma())
}

//! Finite MDPs, tabular policies and their exact dynamic-programming solution.
//!
//! Every quantity here is computed in closed form with a dense LU solve. State
//! kernels are row-stochastic: row `s` holds the distribution of the successor
//! of `s`. Flattened tensors use `[s][a][s']` (transition, reward) and `[s][a]`
//! (policies, action values) row-major layouts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when validating probability vectors on construction.
pub const PROB_TOL: f64 = 1e-12;

pub(crate) fn check_distribution(what: &'static str, index: String, row: &[f64]) -> Result<()> {
    if let Some((i, p)) = row
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(Error::InvalidDistribution {
            what,
            index,
            detail: format!("entry {i} is {p}"),
        });
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution {
            what,
            index,
            detail: format!("entries sum to {total}"),
        });
    }
    Ok(())
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// A finite discounted MDP `(S, A, R, P, mu, gamma)` with rewards on full
/// `(s, a, s')` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    start_dist: Vec<f64>,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

impl Mdp {
    /// Builds a validated MDP from flattened `[s][a][s']` transition and reward tensors.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        start_dist: Vec<f64>,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::Config("an MDP needs at least one state".into()));
        }
        if num_actions == 0 {
            return Err(Error::Config("an MDP needs at least one action".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidDiscount(gamma));
        }
        let cube = num_states * num_actions * num_states;
        check_len("start distribution", num_states, start_dist.len())?;
        check_len("transition tensor", cube, transition.len())?;
        check_len("reward tensor", cube, reward.len())?;
        check_distribution("start_dist", String::new(), &start_dist)?;
        for s in 0..num_states {
            for a in 0..num_actions {
                let base = (s * num_actions + a) * num_states;
                check_distribution(
                    "transition",
                    format!("[{s}][{a}]"),
                    &transition[base..base + num_states],
                )?;
            }
        }
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite {
                what: "reward",
                index: i,
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            gamma,
            start_dist,
            transition,
            reward,
        })
    }

    /// Builds an MDP whose reward depends only on `(s, a)`.
    pub fn with_state_action_reward(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        start_dist: Vec<f64>,
        transition: Vec<f64>,
        reward_sa: &[f64],
    ) -> Result<Self> {
        check_len(
            "state-action reward",
            num_states * num_actions,
            reward_sa.len(),
        )?;
        let reward = reward_sa
            .iter()
            .flat_map(|&r| std::iter::repeat_n(r, num_states))
            .collect();
        Self::new(
            num_states,
            num_actions,
            gamma,
            start_dist,
            transition,
            reward,
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    /// `P(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    /// `R(s, a, .)`.
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.reward[base..base + self.num_states]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward_row(s, a)[next]
    }

    /// `E_{s' ~ P(.|s,a)}[R(s, a, s')]`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        dot(self.transition_row(s, a), self.reward_row(s, a))
    }

    /// `max |R(s, a, s')|` over reachable triples.
    pub fn reward_bound(&self) -> f64 {
        self.transition
            .iter()
            .zip(&self.reward)
            .filter(|(p, _)| **p > 0.0)
            .fold(0.0, |m, (_, r)| m.max(r.abs()))
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidDiscount(gamma));
        }
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    pub(crate) fn transition_flat(&self) -> &[f64] {
        &self.transition
    }

    pub(crate) fn reward_flat(&self) -> &[f64] {
        &self.reward
    }
}

/// A stochastic tabular policy `pi(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Builds a policy from a flattened `[s][a]` table, validating every row.
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("policy table", num_states * num_actions, probs.len())?;
        if num_actions == 0 {
            return Err(Error::Config("a policy needs at least one action".into()));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            check_distribution("policy", format!("[{s}]"), row)?;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        for row in &rows {
            check_len("policy row", num_actions, row.len())?;
        }
        Self::new(num_states, num_actions, rows.concat())
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Point mass on `actions[s]` in every state.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::Dimension {
                    what: "deterministic action index",
                    expected: num_actions,
                    actual: a,
                });
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self {
            num_states: actions.len(),
            num_actions,
            probs,
        })
    }

    /// Rows are assumed to already be valid distributions.
    pub(crate) fn from_rows_unchecked(num_actions: usize, probs: Vec<f64>) -> Self {
        Self {
            num_states: probs.len() / num_actions,
            num_actions,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(1 - weight) * self + weight * other`, row by row.
    pub fn mix(&self, other: &TabularPolicy, weight: f64) -> Result<Self> {
        check_len("policy states", self.num_states, other.num_states)?;
        check_len("policy actions", self.num_actions, other.num_actions)?;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (1.0 - weight) * p + weight * q)
            .collect();
        Ok(Self::from_rows_unchecked(self.num_actions, probs))
    }

    pub fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        check_len("policy states", mdp.num_states(), self.num_states)?;
        check_len("policy actions", mdp.num_actions(), self.num_actions)
    }
}

/// A real-valued state function `f : S -> R` used for reward shaping.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingFunction(Vec<f64>);

impl ShapingFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "shaping function",
                index: i,
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(num_states: usize) -> Self {
        Self(vec![0.0; num_states])
    }

    pub fn constant(num_states: usize, c: f64) -> Self {
        Self(vec![c; num_states])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        check_len("shaping function", mdp.num_states(), self.0.len())
    }
}

/// The normalized discounted state-visitation distribution `d^pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    dist: Vec<f64>,
}

impl Visitation {
    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    /// `E_{s ~ d}[values(s)]`.
    pub fn expect(&self, values: &[f64]) -> f64 {
        dot(&self.dist, values)
    }

    /// `sum_s |self(s) - other(s)|`.
    pub fn l1_distance(&self, other: &Visitation) -> f64 {
        self.dist
            .iter()
            .zip(&other.dist)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// `V^pi`, `Q^pi`, `A^pi` and `J(pi)` for a fixed MDP and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    num_actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
    adv: Vec<f64>,
    ret: f64,
}

impl ValueFunctions {
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn adv(&self, s: usize, a: usize) -> f64 {
        self.adv[s * self.num_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn adv_row(&self, s: usize) -> &[f64] {
        &self.adv[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Flattened `[s][a]` advantage table.
    pub fn adv_table(&self) -> &[f64] {
        &self.adv
    }

    /// `J(pi) = <mu, V^pi>`.
    pub fn ret(&self) -> f64 {
        self.ret
    }

    /// `max_{s,a} |A^pi(s, a)|`.
    pub fn max_abs_advantage(&self) -> f64 {
        self.adv.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn value_shaping(&self) -> ShapingFunction {
        ShapingFunction(self.v.clone())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(mdp: &Mdp, policy: &TabularPolicy) -> Result<()> {
    policy.check_shape(mdp)
}

/// Row-stochastic state kernel `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
pub fn transition_kernel(mdp: &Mdp, policy: &TabularPolicy) -> Result<DMatrix<f64>> {
    check_pair(mdp, policy)?;
    let n = mdp.num_states();
    let mut kernel = DMatrix::zeros(n, n);
    for s in 0..n {
        for (a, &pa) in policy.row(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                kernel[(s, next)] += pa * p;
            }
        }
    }
    Ok(kernel)
}

/// `r_pi(s) = sum_a pi(a|s) E_{s'}[R(s, a, s')]`.
pub fn expected_reward_under(mdp: &Mdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    check_pair(mdp, policy)?;
    Ok((0..mdp.num_states())
        .map(|s| {
            policy
                .row(s)
                .iter()
                .enumerate()
                .map(|(a, pa)| pa * mdp.expected_reward(s, a))
                .sum()
        })
        .collect())
}

fn solve(system: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    system
        .lu()
        .solve(&rhs)
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::Numeric("singular system (I - gamma P)".into()))
}

/// `d^pi = (1 - gamma) (I - gamma P_pi^T)^{-1} mu` for a row-stochastic kernel.
pub fn discounted_visitation(mdp: &Mdp, policy: &TabularPolicy) -> Result<Visitation> {
    let kernel = transition_kernel(mdp, policy)?;
    visitation_from_kernel(mdp, &kernel)
}

pub(crate) fn visitation_from_kernel(mdp: &Mdp, kernel: &DMatrix<f64>) -> Result<Visitation> {
    let gamma = mdp.gamma();
    if gamma == 0.0 {
        return Ok(Visitation {
            dist: mdp.start_dist().to_vec(),
        });
    }
    let n = mdp.num_states();
    let system = DMatrix::identity(n, n) - kernel.transpose() * gamma;
    let rhs = DVector::from_iterator(n, mdp.start_dist().iter().map(|m| (1.0 - gamma) * m));
    let mut dist = solve(system, rhs)?;
    // round-off can leave tiny negatives on unreachable states
    for d in &mut dist {
        if *d < 0.0 && *d > -1e-14 {
            *d = 0.0;
        }
    }
    Ok(Visitation { dist })
}

/// Exact policy evaluation: `V = (I - gamma P_pi)^{-1} r_pi`, then the one-step
/// backup for `Q` and `A = Q - V`.
pub fn value_functions(mdp: &Mdp, policy: &TabularPolicy) -> Result<ValueFunctions> {
    let kernel = transition_kernel(mdp, policy)?;
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let reward = expected_reward_under(mdp, policy)?;
    let system = DMatrix::identity(n, n) - kernel * gamma;
    let v = solve(system, DVector::from_vec(reward))?;
    let q = q_from_values(mdp, &v);
    let num_actions = mdp.num_actions();
    let adv: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, qsa)| qsa - v[i / num_actions])
        .collect();
    let ret = dot(mdp.start_dist(), &v);
    debug_assert!((0..n).all(|s| {
        let scale = 1.0 + v[s].abs();
        dot(policy.row(s), &adv[s * num_actions..(s + 1) * num_actions]).abs() <= 1e-9 * scale
    }));
    Ok(ValueFunctions {
        num_actions,
        v,
        q,
        adv,
        ret,
    })
}

/// `Q(s, a) = E_{s'}[R(s, a, s') + gamma values(s')]` for an arbitrary value table.
pub fn q_from_values(mdp: &Mdp, values: &[f64]) -> Vec<f64> {
    let gamma = mdp.gamma();
    let mut q = Vec::with_capacity(mdp.num_states() * mdp.num_actions());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            q.push(
                mdp.transition_row(s, a)
                    .iter()
                    .zip(mdp.reward_row(s, a))
                    .zip(values)
                    .map(|((p, r), v)| p * (r + gamma * v))
                    .sum(),
            );
        }
    }
    q
}

/// `J(pi)` via the visitation form `(1/(1-gamma)) E_{d^pi, pi, P}[R]`.
pub fn discounted_return(mdp: &Mdp, policy: &TabularPolicy) -> Result<f64> {
    let d = discounted_visitation(mdp, policy)?;
    let reward = expected_reward_under(mdp, policy)?;
    Ok(d.expect(&reward) / (1.0 - mdp.gamma()))
}

/// `E_{s'}[R(s,a,s') + gamma f(s') - f(s)]` as a flattened `[s][a]` table.
pub fn expected_shaped_residual(mdp: &Mdp, f: &ShapingFunction) -> Result<Vec<f64>> {
    f.check_shape(mdp)?;
    let values = f.values();
    let mut out = q_from_values(mdp, values);
    let num_actions = mdp.num_actions();
    for (i, x) in out.iter_mut().enumerate() {
        *x -= values[i / num_actions];
    }
    Ok(out)
}

/// `E_mu[f] + (1/(1-gamma)) E_{d^pi, pi, P}[R + gamma f(s') - f(s)]`, which
/// equals `J(pi)` for every `f`.
pub fn return_identity(mdp: &Mdp, policy: &TabularPolicy, f: &ShapingFunction) -> Result<f64> {
    check_pair(mdp, policy)?;
    let d = discounted_visitation(mdp, policy)?;
    let residual = expected_shaped_residual(mdp, f)?;
    let per_state: Vec<f64> = (0..mdp.num_states())
        .map(|s| {
            let n = mdp.num_actions();
            dot(policy.row(s), &residual[s * n..(s + 1) * n])
        })
        .collect();
    Ok(dot(mdp.start_dist(), f.values()) + d.expect(&per_state) / (1.0 - mdp.gamma()))
}

/// `(1-gamma) E_mu[f] + gamma E_{d^pi, pi, P}[f(s')] - E_{d^pi}[f]`, which is
/// zero for every `f` when `d^pi` is the exact discounted visitation.
pub fn visitation_balance_residual(
    mdp: &Mdp,
    policy: &TabularPolicy,
    f: &ShapingFunction,
) -> Result<f64> {
    f.check_shape(mdp)?;
    let kernel = transition_kernel(mdp, policy)?;
    let d = visitation_from_kernel(mdp, &kernel)?;
    let gamma = mdp.gamma();
    let values = f.values();
    let next_value = &kernel * DVector::from_column_slice(values);
    Ok(
        (1.0 - gamma) * dot(mdp.start_dist(), values) + gamma * d.expect(next_value.as_slice())
            - d.expect(values),
    )
}

/// Same MDP with reward `R(s,a,s') + gamma f(s') - f(s)`.
pub fn shaped_mdp(mdp: &Mdp, f: &ShapingFunction) -> Result<Mdp> {
    f.check_shape(mdp)?;
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let values = f.values();
    let reward = mdp
        .reward_flat()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = i / (n * mdp.num_actions());
            let next = i % n;
            r + gamma * values[next] - values[s]
        })
        .collect();
    Ok(Mdp {
        reward,
        ..mdp.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_state_kernel_is_identity() {
        let mdp = single_state(1.0, 0.9);
        let k = transition_kernel(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
    }

    #[test]
    fn stay_or_swap_uniform_policy_mixes_evenly() {
        let mdp = stay_or_swap(0.5);
        let k = transition_kernel(&mdp, &TabularPolicy::uniform(2, 2)).unwrap();
        for s in 0..2 {
            for next in 0..2 {
                assert_eq!(k[(s, next)], 0.5);
            }
        }
    }

    #[test]
    fn kernel_matches_triple_loop() {
        let mut rng = rng(11);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 4, 3, 0.8);
            let pi = random_policy(&mut rng, 4, 3);
            let k = transition_kernel(&mdp, &pi).unwrap();
            let oracle = triple_loop_kernel(&mdp, &pi);
            for s in 0..4 {
                for next in 0..4 {
                    assert_abs_diff_eq!(k[(s, next)], oracle[s][next], epsilon = 1e-14);
                }
                let row: f64 = (0..4).map(|n| k[(s, n)]).sum();
                assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mdp = stay_or_swap(0.5);
        let err = transition_kernel(&mdp, &TabularPolicy::uniform(3, 2)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn visitation_of_single_state_is_one() {
        let d =
            discounted_visitation(&single_state(1.0, 0.9), &TabularPolicy::uniform(1, 1)).unwrap();
        assert_eq!(d.dist(), &[1.0]);
    }

    #[test]
    fn myopic_visitation_is_start_distribution() {
        let mut rng = rng(5);
        let mdp = random_mdp(&mut rng, 5, 3, 0.0);
        let pi = random_policy(&mut rng, 5, 3);
        let d = discounted_visitation(&mdp, &pi).unwrap();
        assert_eq!(d.dist(), mdp.start_dist());
    }

    #[test]
    fn absorbing_chain_visitation_matches_power_series() {
        let mdp = absorbing_chain(0.5);
        let pi = TabularPolicy::uniform(2, 1);
        let d = discounted_visitation(&mdp, &pi).unwrap();
        let oracle = power_series_visitation(&mdp, &pi, 200);
        assert_abs_diff_eq!(oracle[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(oracle[1], 0.5, epsilon = 1e-10);
        for s in 0..2 {
            assert_abs_diff_eq!(d.dist()[s], oracle[s], epsilon = 1e-10);
        }
    }

    #[test]
    fn geometric_series_values() {
        let mdp = single_state(1.0, 0.9);
        let vf = value_functions(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_abs_diff_eq!(vf.v()[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vf.q(0, 0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vf.adv(0, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vf.ret(), 10.0, epsilon = 1e-12);
        let j = discounted_return(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_abs_diff_eq!(j, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn myopic_values_are_one_step_rewards() {
        let mut rng = rng(9);
        let mdp = random_mdp(&mut rng, 4, 3, 0.0);
        let pi = random_policy(&mut rng, 4, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        for s in 0..4 {
            let mut v = 0.0;
            for a in 0..3 {
                let q: f64 = (0..4)
                    .map(|n| mdp.transition(s, a, n) * mdp.reward(s, a, n))
                    .sum();
                assert_abs_diff_eq!(vf.q(s, a), q, epsilon = 1e-12);
                v += pi.prob(s, a) * q;
            }
            assert_abs_diff_eq!(vf.v()[s], v, epsilon = 1e-12);
        }
    }

    #[test]
    fn values_match_fixed_point_iteration() {
        let mut rng = rng(21);
        let mdp = random_mdp(&mut rng, 5, 3, 0.9);
        let pi = random_policy(&mut rng, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let oracle = iterate_policy_evaluation(&mdp, &pi, 500);
        for s in 0..5 {
            assert_abs_diff_eq!(vf.v()[s], oracle[s], epsilon = 1e-8);
            assert_abs_diff_eq!(dot(pi.row(s), vf.adv_row(s)), 0.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(vf.ret(), dot(mdp.start_dist(), vf.v()), epsilon = 1e-10);
        let j = discounted_return(&mdp, &pi).unwrap();
        assert_abs_diff_eq!(j, vf.ret(), epsilon = 1e-10);
    }

    #[test]
    fn constant_reward_return() {
        let mut rng = rng(3);
        let base = random_mdp(&mut rng, 4, 2, 0.75);
        let mdp = Mdp::new(
            4,
            2,
            0.75,
            base.start_dist().to_vec(),
            base.transition_flat().to_vec(),
            vec![-0.4; 32],
        )
        .unwrap();
        let j = discounted_return(&mdp, &random_policy(&mut rng, 4, 2)).unwrap();
        assert_abs_diff_eq!(j, -0.4 / 0.25, epsilon = 1e-12);
    }

    #[test]
    fn return_identity_special_cases() {
        let mut rng = rng(17);
        let mdp = random_mdp(&mut rng, 5, 3, 0.9);
        let pi = random_policy(&mut rng, 5, 3);
        let j = discounted_return(&mdp, &pi).unwrap();
        let zero = return_identity(&mdp, &pi, &ShapingFunction::zeros(5)).unwrap();
        assert_abs_diff_eq!(zero, j, epsilon = 1e-12);
        let vf = value_functions(&mdp, &pi).unwrap();
        let on_policy = return_identity(&mdp, &pi, &vf.value_shaping()).unwrap();
        assert_abs_diff_eq!(on_policy, dot(mdp.start_dist(), vf.v()), epsilon = 1e-10);
        for _ in 0..20 {
            let f = random_shaping(&mut rng, 5, 5.0);
            assert_abs_diff_eq!(return_identity(&mdp, &pi, &f).unwrap(), j, epsilon = 1e-9);
        }
    }

    #[test]
    fn balance_residual_vanishes() {
        let mut rng = rng(23);
        let mdp = random_mdp(&mut rng, 6, 2, 0.95);
        let pi = random_policy(&mut rng, 6, 2);
        assert_eq!(
            visitation_balance_residual(&mdp, &pi, &ShapingFunction::zeros(6)).unwrap(),
            0.0
        );
        let ones =
            visitation_balance_residual(&mdp, &pi, &ShapingFunction::constant(6, 1.0)).unwrap();
        assert_abs_diff_eq!(ones, 0.0, epsilon = 1e-12);
        for _ in 0..20 {
            let f = random_shaping(&mut rng, 6, 3.0);
            assert!(visitation_balance_residual(&mdp, &pi, &f).unwrap().abs() <= 1e-10);
        }
    }

    #[test]
    fn shaping_translates_every_return_by_start_value() {
        let mut rng = rng(29);
        let mdp = random_mdp(&mut rng, 5, 3, 0.9);
        assert_eq!(shaped_mdp(&mdp, &ShapingFunction::zeros(5)).unwrap(), mdp);
        let c = ShapingFunction::constant(5, 2.5);
        let shifted = shaped_mdp(&mdp, &c).unwrap();
        let f = random_shaping(&mut rng, 5, 2.0);
        let shaped = shaped_mdp(&mdp, &f).unwrap();
        let shift = dot(mdp.start_dist(), f.values());
        for _ in 0..10 {
            let pi = random_policy(&mut rng, 5, 3);
            let j = discounted_return(&mdp, &pi).unwrap();
            assert_abs_diff_eq!(
                discounted_return(&shifted, &pi).unwrap(),
                j - 2.5,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                discounted_return(&shaped, &pi).unwrap(),
                j - shift,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn invalid_rows_name_their_index() {
        let err = Mdp::new(
            2,
            1,
            0.5,
            vec![1.0, 0.0],
            vec![1.0, 0.0, 0.4, 0.5],
            vec![0.0; 4],
        )
        .unwrap_err();
        match err {
            Error::InvalidDistribution { index, .. } => assert_eq!(index, "[1][0]"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Mdp::new(1, 1, 1.0, vec![1.0], vec![1.0], vec![0.0]),
            Err(Error::InvalidDiscount(_))
        ));
        assert!(TabularPolicy::from_rows(vec![vec![0.5, 0.6]]).is_err());
    }
}

//! Monotonic policy iteration over tabular policies.
//!
//! Each iteration maximizes the penalized surrogate
//! `L_{pi_i,f}(pi') - E_{s ~ d^{pi_i}}[C(s) D_TV(pi' || pi_i)[s]]`
//! exactly. The objective separates over states, and each state's piece is a
//! linear program over the simplex with a closed-form maximizer
//! ([`per_state_step`]). The current policy is always feasible with objective
//! zero, so the chosen policy never has a lower exact return.

use serde::{Deserialize, Serialize};

use crate::bounds::{
    max_abs, surrogate_under, td_residual_profile, tv_distance, AdvantageEstimate,
};
use crate::error::{Error, Result};
use crate::mdp::{
    discounted_visitation, expected_shaped_residual, value_functions, Mdp, ShapingFunction,
    TabularPolicy,
};
use crate::sampler::corrupt_value_estimator;

/// How `f_i` (or the advantage estimate) is chosen at each iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapingMode {
    /// `f_i = V^{pi_i}`.
    ExactValue,
    /// The same caller-supplied `f` at every iteration.
    Supplied(ShapingFunction),
    /// Advantage estimates from a value table corrupted by uniform noise of
    /// the given scale; iteration `i` uses noise stream `seed + i`.
    Estimated { noise_scale: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// One coefficient for all states (the largest per-state value).
    Uniform,
    /// `C(s) = 2 (c(s) + gamma eps / (1 - gamma))`.
    PerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiConfig {
    pub max_iters: usize,
    /// Stop once an iteration improves the exact return by at most this much.
    pub stop_tol: f64,
    pub shaping_mode: ShapingMode,
    pub penalty_mode: PenaltyMode,
    /// Minimum probability of every action in every emitted policy.
    pub floor: f64,
}

impl Default for EmpiConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            stop_tol: 1e-8,
            shaping_mode: ShapingMode::ExactValue,
            penalty_mode: PenaltyMode::Uniform,
            floor: 1e-6,
        }
    }
}

impl EmpiConfig {
    pub fn validate(&self, num_actions: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            return Err(Error::Config(format!(
                "stop tolerance {} must be >= 0",
                self.stop_tol
            )));
        }
        if (self.floor.is_nan() || self.floor < 0.0) || self.floor * num_actions as f64 >= 1.0 {
            return Err(Error::Config(format!(
                "probability floor {} must lie in [0, 1/{num_actions})",
                self.floor
            )));
        }
        if let ShapingMode::Estimated { noise_scale, .. } = self.shaping_mode {
            if noise_scale.is_nan() || noise_scale < 0.0 {
                return Err(Error::Config(format!(
                    "noise scale {noise_scale} must be >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Penalty coefficient(s) applied in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Penalty {
    Uniform(f64),
    PerState(Vec<f64>),
}

impl Penalty {
    pub fn at(&self, s: usize) -> f64 {
        match self {
            Penalty::Uniform(c) => *c,
            Penalty::PerState(cs) => cs[s],
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Penalty::Uniform(c) => *c,
            Penalty::PerState(cs) => cs.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Penalized surrogate at the chosen policy; zero at the current policy.
    pub objective_value: f64,
    pub j_before: f64,
    pub j_after: f64,
    pub penalty: Penalty,
    pub tv_avg: f64,
    pub improved: bool,
}

impl IterationRecord {
    pub fn row(&self) -> IterationRow {
        IterationRow {
            iter: self.iter,
            j_before: self.j_before,
            j_after: self.j_after,
            objective_value: self.objective_value,
            penalty: self.penalty.max(),
            tv_avg: self.tv_avg,
            improved: self.improved,
        }
    }
}

/// One CSV row per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iter: usize,
    pub j_before: f64,
    pub j_after: f64,
    pub objective_value: f64,
    pub penalty: f64,
    pub tv_avg: f64,
    pub improved: bool,
}

/// `C = 2 gamma eps / (1 - gamma)` with `eps = max_{s,a} |E_{s'}[R + gamma f(s') - f(s)]|`.
pub fn penalty_coefficient(mdp: &Mdp, f: &ShapingFunction) -> Result<f64> {
    let residual = expected_shaped_residual(mdp, f)?;
    Ok(uniform_coefficient(mdp.gamma(), max_abs(&residual)))
}

fn uniform_coefficient(gamma: f64, eps: f64) -> f64 {
    2.0 * gamma * eps / (1.0 - gamma)
}

/// `sum_a (x(a) - pi(a)) adv(a) - c D_TV(x || pi)`.
pub fn step_objective(adv: &[f64], pi: &[f64], x: &[f64], c: f64) -> f64 {
    let gain: f64 = adv
        .iter()
        .zip(x.iter().zip(pi))
        .map(|(a, (p, q))| a * (p - q))
        .sum();
    let tv = tv_distance(x, pi);
    if c == 0.0 {
        gain
    } else {
        gain - c * tv
    }
}

/// Exact maximizer over the simplex of `sum_a x(a) adv(a) - c D_TV(x || pi)`.
///
/// Moving a unit of mass from `a` to `b` gains `adv(b) - adv(a)` and costs `c`,
/// so all mass of actions more than `c` below the best action moves onto it
/// and everything else stays. Ties in the best action go to the lowest index.
/// With `c = 0` the step is the greedy point mass, tied actions included.
pub fn per_state_step(adv: &[f64], pi: &[f64], c: f64) -> Vec<f64> {
    debug_assert_eq!(adv.len(), pi.len());
    let best = adv
        .iter()
        .enumerate()
        .fold(0, |best, (a, &v)| if v > adv[best] { a } else { best });
    let top = adv[best];
    let mut out = pi.to_vec();
    let mut moved = 0.0;
    for (a, x) in out.iter_mut().enumerate() {
        if a != best && (c == 0.0 || top - adv[a] > c) {
            moved += *x;
            *x = 0.0;
        }
    }
    out[best] += moved;
    out
}

/// Lifts every entry to at least `floor` by shrinking the excess of the other
/// entries proportionally. Rows already above the floor are returned unchanged.
pub fn apply_floor(row: &[f64], floor: f64) -> Vec<f64> {
    if floor <= 0.0 || row.iter().all(|&p| p >= floor) {
        return row.to_vec();
    }
    let excess: f64 = row.iter().map(|&p| (p - floor).max(0.0)).sum();
    let scale = (1.0 - floor * row.len() as f64) / excess;
    row.iter()
        .map(|&p| floor + (p - floor).max(0.0) * scale)
        .collect()
}

/// Shared per-state solve: `gains` is a flattened `[s][a]` table whose row-wise
/// differences drive the step (shaped residuals or advantage estimates).
fn improve(
    mdp: &Mdp,
    current: &TabularPolicy,
    gains: &[f64],
    penalty: Penalty,
    config: &EmpiConfig,
    iter: usize,
) -> Result<(TabularPolicy, IterationRecord)> {
    let m = mdp.num_actions();
    let d = discounted_visitation(mdp, current)?;
    let mut probs = Vec::with_capacity(current.as_slice().len());
    for s in 0..mdp.num_states() {
        let pi = current.row(s);
        if d.dist()[s] == 0.0 {
            probs.extend_from_slice(pi);
            continue;
        }
        let adv = &gains[s * m..(s + 1) * m];
        let c = penalty.at(s);
        let candidate = apply_floor(&per_state_step(adv, pi, c), config.floor);
        if step_objective(adv, pi, &candidate, c) < 0.0 {
            probs.extend_from_slice(pi);
        } else {
            probs.extend(candidate);
        }
    }
    let next = TabularPolicy::from_rows_unchecked(m, probs);

    let surrogate = surrogate_under(&d, current, &next, gains)?;
    let tv: Vec<f64> = current
        .rows()
        .zip(next.rows())
        .map(|(p, q)| tv_distance(q, p))
        .collect();
    let weighted_penalty: f64 = (0..tv.len())
        .map(|s| {
            let c = penalty.at(s);
            if c == 0.0 {
                0.0
            } else {
                d.dist()[s] * c * tv[s]
            }
        })
        .sum();
    let j_before = value_functions(mdp, current)?.ret();
    let j_after = value_functions(mdp, &next)?.ret();
    let record = IterationRecord {
        iter,
        objective_value: surrogate - weighted_penalty,
        j_before,
        j_after,
        penalty,
        tv_avg: d.expect(&tv),
        improved: j_after > j_before,
    };
    Ok((next, record))
}

fn check_floor(current: &TabularPolicy, config: &EmpiConfig) -> Result<()> {
    let min = current.min_prob();
    if min < config.floor * (1.0 - 1e-9) {
        return Err(Error::Config(format!(
            "current policy has probability {min} below the floor {}",
            config.floor
        )));
    }
    Ok(())
}

/// One exact iteration with shaping function `f`: uniform coefficient
/// `2 gamma eps / (1 - gamma)` from the `(s, a)`-max residual.
pub fn empi_iteration(
    mdp: &Mdp,
    current: &TabularPolicy,
    f: &ShapingFunction,
    config: &EmpiConfig,
) -> Result<(TabularPolicy, IterationRecord)> {
    iterate_exact(mdp, current, f, config, 0)
}

fn iterate_exact(
    mdp: &Mdp,
    current: &TabularPolicy,
    f: &ShapingFunction,
    config: &EmpiConfig,
    iter: usize,
) -> Result<(TabularPolicy, IterationRecord)> {
    current.check_shape(mdp)?;
    config.validate(mdp.num_actions())?;
    check_floor(current, config)?;
    let residual = expected_shaped_residual(mdp, f)?;
    let eps = td_residual_profile(mdp, f, current)?.eps_sa;
    let c = uniform_coefficient(mdp.gamma(), eps);
    let penalty = match config.penalty_mode {
        PenaltyMode::Uniform => Penalty::Uniform(c),
        PenaltyMode::PerState => Penalty::PerState(vec![c; mdp.num_states()]),
    };
    improve(mdp, current, &residual, penalty, config, iter)
}

/// One iteration driven by an advantage estimate, with per-state coefficients
/// `C(s) = 2 (c(s) + gamma eps / (1 - gamma))` and `eps = max_{s,a} |A^pi|`.
/// Monotonicity is still certified against the exact return.
pub fn empi_iteration_estimated(
    mdp: &Mdp,
    current: &TabularPolicy,
    estimate: &AdvantageEstimate,
    config: &EmpiConfig,
) -> Result<(TabularPolicy, IterationRecord)> {
    iterate_estimated(mdp, current, estimate, config, 0)
}

fn iterate_estimated(
    mdp: &Mdp,
    current: &TabularPolicy,
    estimate: &AdvantageEstimate,
    config: &EmpiConfig,
    iter: usize,
) -> Result<(TabularPolicy, IterationRecord)> {
    current.check_shape(mdp)?;
    config.validate(mdp.num_actions())?;
    check_floor(current, config)?;
    if estimate.num_states() != mdp.num_states() || estimate.num_actions() != mdp.num_actions() {
        return Err(Error::Dimension {
            what: "advantage estimate",
            expected: mdp.num_states() * mdp.num_actions(),
            actual: estimate.a_hat().len(),
        });
    }
    let vf = value_functions(mdp, current)?;
    let eps = vf.max_abs_advantage();
    let gamma = mdp.gamma();
    let per_state: Vec<f64> = estimate
        .c_per_state()
        .iter()
        .map(|c| 2.0 * (c + gamma * eps / (1.0 - gamma)))
        .collect();
    let penalty = match config.penalty_mode {
        PenaltyMode::PerState => Penalty::PerState(per_state),
        PenaltyMode::Uniform => Penalty::Uniform(per_state.iter().copied().fold(0.0, f64::max)),
    };
    improve(mdp, current, estimate.a_hat(), penalty, config, iter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiRun {
    pub records: Vec<IterationRecord>,
    pub policy: TabularPolicy,
}

impl EmpiRun {
    pub fn final_return(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.j_after)
    }
}

/// Iterates until `max_iters` records exist or an iteration improves the exact
/// return by at most `stop_tol`.
pub fn run_empi(mdp: &Mdp, initial: &TabularPolicy, config: &EmpiConfig) -> Result<EmpiRun> {
    config.validate(mdp.num_actions())?;
    let mut policy = initial.clone();
    let mut records = Vec::new();
    for iter in 0..config.max_iters {
        let (next, record) = match &config.shaping_mode {
            ShapingMode::ExactValue => {
                let f = value_functions(mdp, &policy)?.value_shaping();
                iterate_exact(mdp, &policy, &f, config, iter)?
            }
            ShapingMode::Supplied(f) => iterate_exact(mdp, &policy, f, config, iter)?,
            ShapingMode::Estimated { noise_scale, seed } => {
                let est = corrupt_value_estimator(
                    mdp,
                    &policy,
                    *noise_scale,
                    seed.wrapping_add(iter as u64),
                )?;
                iterate_estimated(mdp, &policy, &est, config, iter)?
            }
        };
        let done = record.j_after - record.j_before <= config.stop_tol;
        records.push(record);
        policy = next;
        if done {
            break;
        }
    }
    Ok(EmpiRun { records, policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn coefficient_vanishes_without_discount() {
        let mut r = rng(1);
        let mdp = random_mdp(&mut r, 4, 3, 0.0);
        let f = random_shaping(&mut r, 4, 1.0);
        assert_eq!(penalty_coefficient(&mdp, &f).unwrap(), 0.0);
    }

    #[test]
    fn coefficient_vanishes_on_single_state() {
        let mdp = single_state(1.0, 0.9);
        let vf = value_functions(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_abs_diff_eq!(
            penalty_coefficient(&mdp, &vf.value_shaping()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn coefficient_from_max_advantage() {
        let mut r = rng(2);
        let mdp = random_mdp(&mut r, 6, 3, 0.9);
        let pi = random_policy(&mut r, 6, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let c = penalty_coefficient(&mdp, &vf.value_shaping()).unwrap();
        assert_abs_diff_eq!(c, 2.0 * 0.9 * vf.max_abs_advantage() / 0.1, epsilon = 1e-10);
    }

    #[test]
    fn step_moves_all_mass_when_gap_exceeds_penalty() {
        let adv = [1.0, 0.0];
        let pi = [0.5, 0.5];
        let x = per_state_step(&adv, &pi, 0.4);
        assert_eq!(x, vec![1.0, 0.0]);
        assert_abs_diff_eq!(step_objective(&adv, &pi, &x, 0.4), 0.3, epsilon = 1e-15);
        let lp = step_lp_optimum(&adv, &pi, 0.4);
        let grid = step_grid_optimum_two_actions(&adv, &pi, 0.4, 1e-4);
        assert_abs_diff_eq!(lp, 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(grid, 0.3, epsilon = 1e-6);
    }

    #[test]
    fn step_stays_when_penalty_exceeds_gap() {
        let adv = [1.0, 0.0];
        let pi = [0.5, 0.5];
        let x = per_state_step(&adv, &pi, 2.5);
        assert_eq!(x, pi.to_vec());
        assert_eq!(step_objective(&adv, &pi, &x, 2.5), 0.0);
        assert_abs_diff_eq!(step_lp_optimum(&adv, &pi, 2.5), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            step_grid_optimum_two_actions(&adv, &pi, 2.5, 1e-4),
            0.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn unpenalized_step_is_greedy_with_lowest_index_ties() {
        assert_eq!(
            per_state_step(&[0.2, 0.7, 0.7], &[0.3, 0.3, 0.4], 0.0),
            vec![0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn floor_lifts_small_entries_and_keeps_valid_rows() {
        let row = apply_floor(&[1.0, 0.0, 0.0], 0.01);
        assert!(row.iter().all(|p| *p >= 0.01));
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(apply_floor(&[0.2, 0.8], 0.01), vec![0.2, 0.8]);
    }

    #[test]
    fn single_state_iteration_is_a_fixed_point() {
        let mdp = single_state(1.0, 0.9);
        let pi = TabularPolicy::uniform(1, 1);
        let f = value_functions(&mdp, &pi).unwrap().value_shaping();
        let (next, rec) = empi_iteration(&mdp, &pi, &f, &EmpiConfig::default()).unwrap();
        assert_eq!(next, pi);
        assert_eq!(rec.objective_value, 0.0);
        let run = run_empi(&mdp, &pi, &EmpiConfig::default()).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_abs_diff_eq!(
            run.records[0].j_after - run.records[0].j_before,
            0.0,
            epsilon = 1e-12
        );
    }

    /// Two states, action 0 pays 1, action 1 pays 0, both stay put.
    fn dominant_action(gamma: f64) -> Mdp {
        let transition = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        Mdp::with_state_action_reward(
            2,
            2,
            gamma,
            vec![0.5, 0.5],
            transition,
            &[1.0, 0.0, 1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn iteration_moves_toward_dominant_action() {
        let mdp = dominant_action(0.2);
        let pi = TabularPolicy::uniform(2, 2);
        let vf = value_functions(&mdp, &pi).unwrap();
        let c = penalty_coefficient(&mdp, &vf.value_shaping()).unwrap();
        let gap = vf.adv(0, 0) - vf.adv(0, 1);
        assert!(c < gap, "penalty {c} should be below the gap {gap}");
        let (next, rec) =
            empi_iteration(&mdp, &pi, &vf.value_shaping(), &EmpiConfig::default()).unwrap();
        assert!(next.prob(0, 0) > 0.99);
        assert!(rec.j_after > rec.j_before);
        assert!(rec.improved);
        assert!(rec.objective_value > 0.0);
    }

    #[test]
    fn large_penalty_keeps_policy() {
        let mdp = dominant_action(0.9);
        let pi = TabularPolicy::uniform(2, 2);
        let vf = value_functions(&mdp, &pi).unwrap();
        let (next, rec) =
            empi_iteration(&mdp, &pi, &vf.value_shaping(), &EmpiConfig::default()).unwrap();
        assert_eq!(next, pi);
        assert_eq!(rec.objective_value, 0.0);
        assert_eq!(rec.j_after, rec.j_before);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_iteration() {
        let mdp = dominant_action(0.2);
        let config = EmpiConfig {
            stop_tol: f64::INFINITY,
            ..EmpiConfig::default()
        };
        let run = run_empi(&mdp, &TabularPolicy::uniform(2, 2), &config).unwrap();
        assert_eq!(run.records.len(), 1);
    }

    #[test]
    fn runs_are_monotone_and_below_optimum() {
        let mut r = rng(3);
        for gamma in [0.1, 0.4, 0.9] {
            let mdp = generate_garnet(&GarnetSpec::new(8, 4, 3, gamma, r.gen())).unwrap();
            let run =
                run_empi(&mdp, &TabularPolicy::uniform(8, 4), &EmpiConfig::default()).unwrap();
            for rec in &run.records {
                assert!(rec.j_after >= rec.j_before - 1e-9);
                assert!(rec.objective_value >= -1e-12);
            }
            assert!(run.final_return() <= optimal_return(&mdp, 1e-12) + 1e-8);
        }
    }

    #[test]
    fn exact_estimate_matches_exact_iteration() {
        let mut r = rng(4);
        let mdp = random_mdp(&mut r, 5, 3, 0.3);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let est = AdvantageEstimate::exact(&vf, 3);
        let config = EmpiConfig::default();
        let (a, ra) = empi_iteration(&mdp, &pi, &vf.value_shaping(), &config).unwrap();
        let (b, rb) = empi_iteration_estimated(&mdp, &pi, &est, &config).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(ra.penalty.max(), rb.penalty.max(), epsilon = 1e-12);
    }

    #[test]
    fn state_shifts_in_the_estimate_do_not_change_the_step() {
        let mut r = rng(5);
        let mdp = random_mdp(&mut r, 5, 3, 0.3);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let kappa: Vec<f64> = (0..5).map(|s| 0.1 * s as f64 - 0.2).collect();
        let shifted: Vec<f64> = vf
            .adv_table()
            .iter()
            .enumerate()
            .map(|(i, a)| a + kappa[i / 3])
            .collect();
        let est = AdvantageEstimate::against(&vf, 3, shifted).unwrap();
        for s in 0..5 {
            assert_abs_diff_eq!(est.c_per_state()[s], kappa[s].abs(), epsilon = 1e-12);
            let c = 1.0;
            assert_eq!(
                per_state_step(est.row(s), pi.row(s), c),
                per_state_step(vf.adv_row(s), pi.row(s), c)
            );
        }
    }

    #[test]
    fn corrupted_estimate_keeps_policy() {
        let mut r = rng(6);
        let mdp = random_mdp(&mut r, 5, 3, 0.3);
        let pi = random_policy(&mut r, 5, 3);
        let vf = value_functions(&mdp, &pi).unwrap();
        let noisy: Vec<f64> = vf
            .adv_table()
            .iter()
            .map(|a| a + r.gen_range(-50.0..50.0))
            .collect();
        let est = AdvantageEstimate::against(&vf, 3, noisy).unwrap();
        let config = EmpiConfig {
            penalty_mode: PenaltyMode::PerState,
            ..EmpiConfig::default()
        };
        let (next, rec) = empi_iteration_estimated(&mdp, &pi, &est, &config).unwrap();
        assert_eq!(next, pi);
        assert!(rec.j_after >= rec.j_before - 1e-9);
    }

    #[test]
    fn rejects_policies_below_the_floor() {
        let mdp = dominant_action(0.2);
        let pi = TabularPolicy::deterministic(2, &[0, 0]).unwrap();
        let f = ShapingFunction::zeros(2);
        assert!(matches!(
            empi_iteration(&mdp, &pi, &f, &EmpiConfig::default()),
            Err(Error::Config(_))
        ));
        let bad = EmpiConfig {
            floor: 0.5,
            ..EmpiConfig::default()
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn disabled_floor_propagates_support_violations() {
        let mdp = dominant_action(0.0);
        let pi = TabularPolicy::deterministic(2, &[1, 1]).unwrap();
        let config = EmpiConfig {
            floor: 0.0,
            ..EmpiConfig::default()
        };
        let f = ShapingFunction::zeros(2);
        assert!(matches!(
            empi_iteration(&mdp, &pi, &f, &config),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn floored_policies_respect_the_floor() {
        let mut r = rng(7);
        let mdp = random_mdp(&mut r, 6, 3, 0.2);
        let config = EmpiConfig {
            floor: 0.05,
            ..EmpiConfig::default()
        };
        let run = run_empi(&mdp, &TabularPolicy::uniform(6, 3), &config).unwrap();
        assert!(run.policy.min_prob() >= 0.05 - 1e-15);
        for rec in &run.records {
            assert!(rec.j_after >= rec.j_before - 1e-9);
        }
    }
}

//! Exact policy-improvement bounds and monotonic policy iteration on finite MDPs.
//!
//! The crate solves tabular MDPs in closed form and evaluates both sides of
//! every improvement inequality it implements, so each bound can be checked
//! against the true change in return rather than trusted.
//!
//! * [`mdp`]: models, policies, visitation distributions, value functions.
//! * [`bounds`]: divergences, surrogates and the improvement lower bounds.
//! * [`empi`]: penalized-surrogate policy iteration with an exact per-state solver.
//! * [`sampler`]: seeded rollouts and Monte-Carlo estimates.
//! * [`instances`]: Garnet MDPs and random policies.
//! * [`campaign`]: randomized verification trials.
//! * [`document`]: the JSON MDP file format.

#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod bounds;
pub mod campaign;
pub mod document;
pub mod empi;
mod error;
pub mod instances;
pub mod mdp;
pub mod sampler;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use bounds::{
    divergence_profile, improvement_bound, surrogate, td_residual_profile, trpo_worst_case,
    visitation_shift_bound, AdvantageEstimate, BoundReport, BoundVariant, DivergenceProfile,
    TdResidualProfile,
};
pub use empi::{
    empi_iteration, empi_iteration_estimated, penalty_coefficient, per_state_step, run_empi,
    EmpiConfig, EmpiRun, IterationRecord, PenaltyMode, ShapingMode,
};
pub use error::{Error, Result};
pub use instances::{generate_garnet, GarnetSpec};
pub use mdp::{
    discounted_return, discounted_visitation, return_identity, shaped_mdp, transition_kernel,
    value_functions, visitation_balance_residual, Mdp, ShapingFunction, TabularPolicy,
    ValueFunctions, Visitation,
};
pub use sampler::{
    corrupt_value_estimator, mc_objective, mc_return, sample_trajectory, SampleEstimate, Trajectory,
};

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use empi_core::campaign::{
    run_bound_trial, sample_trust_region, BoundCampaign, BoundTrialRow, EstimateInstance,
    EstimateRow,
};
use empi_core::document::{mdp_to_json, parse_mdp};
use empi_core::instances::{random_policy, seeded_rng};
use empi_core::{
    generate_garnet, run_empi, BoundVariant, EmpiConfig, GarnetSpec, Mdp, PenaltyMode, ShapingMode,
    TabularPolicy,
};

/// Tolerances for flagging an EMPI iteration as non-monotone.
const MONOTONE_TOL: f64 = 1e-9;
const OBJECTIVE_TOL: f64 = 1e-12;

#[derive(Parser)]
#[command(
    name = "empi",
    version,
    about = "Policy-improvement bound checks and monotonic policy iteration on tabular MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized validity, tightness, ordering and Pinsker checks of every bound variant.
    VerifyBounds(VerifyArgs),
    /// Run penalized-surrogate policy iteration and emit one CSV row per iteration.
    RunEmpi(EmpiArgs),
    /// Sample policies inside an average-KL ball and check the worst-case one-step bound.
    TrpoCheck(TrpoArgs),
    /// Compare Monte-Carlo return and objective estimates with their exact values.
    Estimate(EstimateArgs),
    /// Write a Garnet MDP in the JSON MDP format.
    GenMdp(GenArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Number of states (drawn per trial in campaigns when omitted).
    #[arg(long)]
    states: Option<usize>,
    /// Number of actions (drawn per trial in campaigns when omitted).
    #[arg(long)]
    actions: Option<usize>,
    /// Successors per state-action pair.
    #[arg(long)]
    branching: Option<usize>,
    /// Discount factor in [0, 1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Load the MDP from a JSON file instead of generating one.
    #[arg(long, value_name = "PATH")]
    mdp_file: Option<PathBuf>,
}

#[derive(Args)]
struct OutputArgs {
    /// CSV report path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Value-estimate corruption; cycles through 0, 0.05, 0.2 when omitted.
    #[arg(long)]
    noise: Option<f64>,
    /// Restrict the campaign to one bound variant.
    #[arg(long)]
    variant: Option<BoundVariant>,
    #[command(flatten)]
    output: OutputArgs,
    #[cfg(debug_assertions)]
    #[arg(long, hide = true, value_parser = ["halve-penalty"])]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct EmpiArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum number of iterations.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Stop once an iteration improves the return by at most this much.
    #[arg(long, default_value_t = 1e-8)]
    alpha: f64,
    /// Use corrupted advantage estimates with this noise scale instead of exact values.
    #[arg(long)]
    noise: Option<f64>,
    /// Per-state penalty coefficients in estimated mode.
    #[arg(long)]
    per_state_penalty: bool,
    /// Minimum action probability of every emitted policy.
    #[arg(long, default_value_t = 1e-6)]
    floor: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TrpoArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Accepted policies to check.
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Average-KL radius.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Number of sampling seeds.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectories per estimate.
    #[arg(long, default_value_t = 20000)]
    samples: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of rewards set to zero.
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    /// Output path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::VerifyBounds(args) => verify_bounds(args),
        Command::RunEmpi(args) => run_empi_cmd(args),
        Command::TrpoCheck(args) => trpo_check(args),
        Command::Estimate(args) => estimate(args),
        Command::GenMdp(args) => gen_mdp(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn load_mdp(path: &Path) -> Result<Mdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mdp(&text).with_context(|| format!("loading {}", path.display()))
}

/// The single MDP a non-campaign command works on.
fn single_mdp(args: &InstanceArgs, seed: u64, defaults: (usize, usize, usize, f64)) -> Result<Mdp> {
    if let Some(path) = &args.mdp_file {
        let mdp = load_mdp(path)?;
        return match args.gamma {
            Some(gamma) => Ok(mdp.with_gamma(gamma)?),
            None => Ok(mdp),
        };
    }
    let spec = GarnetSpec::new(
        args.states.unwrap_or(defaults.0),
        args.actions.unwrap_or(defaults.1),
        args.branching.unwrap_or(defaults.2),
        args.gamma.unwrap_or(defaults.3),
        seed,
    );
    Ok(generate_garnet(&spec)?)
}

/// Writes CSV rows to `--out` (summary to stdout) or to stdout (summary to stderr).
fn report<T: Serialize>(out: &OutputArgs, rows: &[T], summary: serde_json::Value) -> Result<()> {
    let summary = serde_json::to_string_pretty(&summary)?;
    match &out.out {
        Some(path) => {
            let file =
                fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(file, rows)?;
            println!("{summary}");
        }
        None => {
            write_csv(io::stdout().lock(), rows)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn write_csv<W: Write, T: Serialize>(sink: W, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn verify_bounds(args: VerifyArgs) -> Result<bool> {
    #[cfg(debug_assertions)]
    let penalty_scale = if args.inject_fault.is_some() {
        0.5
    } else {
        1.0
    };
    #[cfg(not(debug_assertions))]
    let penalty_scale = 1.0;

    let campaign = BoundCampaign {
        states: args.instance.states,
        actions: args.instance.actions,
        branching: args.instance.branching,
        gamma: args.instance.gamma,
        noise: args.noise,
        variant: args.variant,
        lambda: None,
        mdp: match &args.instance.mdp_file {
            Some(path) => Some(load_mdp(path)?),
            None => None,
        },
    };
    let rows: Vec<BoundTrialRow> = (0..args.trials)
        .into_par_iter()
        .map(|t| run_bound_trial(&campaign.trial(args.seed, t), penalty_scale))
        .collect::<empi_core::Result<_>>()?;

    let violations = rows.iter().filter(|r| r.violation).count();
    let per_variant: serde_json::Map<String, serde_json::Value> = BoundVariant::ALL
        .iter()
        .map(|v| {
            let of_variant = rows.iter().filter(|r| r.variant == *v);
            let trials = of_variant.clone().count();
            let flagged = of_variant.filter(|r| r.violation).count();
            (
                v.to_string(),
                json!({ "trials": trials, "violations": flagged }),
            )
        })
        .collect();
    let summary = json!({
        "command": "verify-bounds",
        "seed": args.seed,
        "trials": rows.len(),
        "violations": violations,
        "penalty_scale": penalty_scale,
        "mdp_file": args.instance.mdp_file,
        "variants": per_variant,
    });
    report(&args.output, &rows, summary)?;
    Ok(violations == 0)
}

fn run_empi_cmd(args: EmpiArgs) -> Result<bool> {
    let mdp = single_mdp(&args.instance, args.seed, (8, 4, 3, 0.9))?;
    let config = EmpiConfig {
        max_iters: args.iters,
        stop_tol: args.alpha,
        shaping_mode: match args.noise {
            Some(noise_scale) => ShapingMode::Estimated {
                noise_scale,
                seed: args.seed,
            },
            None => ShapingMode::ExactValue,
        },
        penalty_mode: if args.per_state_penalty {
            PenaltyMode::PerState
        } else {
            PenaltyMode::Uniform
        },
        floor: args.floor,
    };
    let initial = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let run = run_empi(&mdp, &initial, &config)?;
    let rows: Vec<_> = run.records.iter().map(|r| r.row()).collect();
    let non_monotone = rows
        .iter()
        .filter(|r| r.j_after < r.j_before - MONOTONE_TOL || r.objective_value < -OBJECTIVE_TOL)
        .count();
    let summary = json!({
        "command": "run-empi",
        "seed": args.seed,
        "mode": if args.noise.is_some() { "estimated" } else { "exact" },
        "states": mdp.num_states(),
        "actions": mdp.num_actions(),
        "gamma": mdp.gamma(),
        "iterations": rows.len(),
        "initial_return": rows.first().map(|r| r.j_before),
        "final_return": run.final_return(),
        "non_monotone_iterations": non_monotone,
        "final_policy": run.policy.as_slice(),
    });
    report(&args.output, &rows, summary)?;
    Ok(non_monotone == 0)
}

#[derive(Serialize)]
struct TrpoRow {
    sample: usize,
    seed: u64,
    delta: f64,
    kl_avg: f64,
    expected_advantage: f64,
    epsilon: f64,
    improvement: f64,
    bound: f64,
    violation: bool,
}

fn trpo_check(args: TrpoArgs) -> Result<bool> {
    anyhow::ensure!(args.delta > 0.0, "--delta must be positive");
    let mdp = single_mdp(&args.instance, args.seed, (6, 3, 3, 0.9))?;
    let mut rng = seeded_rng(args.seed, 1);
    let old = random_policy(&mut rng, mdp.num_states(), mdp.num_actions());
    let tally = sample_trust_region(&mdp, &old, args.delta, args.trials, &mut rng)?;
    let rows: Vec<TrpoRow> = tally
        .accepted
        .iter()
        .enumerate()
        .map(|(i, s)| TrpoRow {
            sample: i,
            seed: args.seed,
            delta: args.delta,
            kl_avg: s.kl_avg,
            expected_advantage: s.expected_advantage,
            epsilon: s.epsilon,
            improvement: s.improvement,
            bound: s.bound,
            violation: s.violation,
        })
        .collect();
    let violations = rows.iter().filter(|r| r.violation).count();
    let summary = json!({
        "command": "trpo-check",
        "seed": args.seed,
        "delta": args.delta,
        "gamma": mdp.gamma(),
        "accepted": rows.len(),
        "rejected_outside_radius": tally.rejected_radius,
        "rejected_negative_objective": tally.rejected_objective,
        "violations": violations,
    });
    report(&args.output, &rows, summary)?;
    Ok(violations == 0)
}

/// Fraction of seeds that must land inside the agreement envelope.
const AGREEMENT_RATE: f64 = 0.95;

fn estimate(args: EstimateArgs) -> Result<bool> {
    let mdp = single_mdp(&args.instance, args.seed, (5, 3, 2, 0.9))?;
    let instance = EstimateInstance::for_mdp(mdp, args.seed, args.noise)?;
    let rows: Vec<EstimateRow> = (0..args.trials as u64)
        .map(|k| instance.sample(args.seed, args.noise, args.samples, k))
        .collect::<empi_core::Result<_>>()?;
    let returns = rows.iter().filter(|r| r.return_agrees).count();
    let objectives = rows.iter().filter(|r| r.objective_agrees).count();
    let needed = (AGREEMENT_RATE * rows.len() as f64).ceil() as usize;
    let summary = json!({
        "command": "estimate",
        "seed": args.seed,
        "samples": args.samples,
        "noise": args.noise,
        "seeds": rows.len(),
        "return_exact": instance.return_exact,
        "objective_exact": instance.objective_exact,
        "return_agreements": returns,
        "objective_agreements": objectives,
        "required": needed,
    });
    report(&args.output, &rows, summary)?;
    Ok(returns >= needed && objectives >= needed)
}

fn gen_mdp(args: GenArgs) -> Result<bool> {
    let spec = GarnetSpec {
        num_states: args.states,
        num_actions: args.actions,
        branching: args.branching,
        reward_sparsity: args.sparsity,
        gamma: args.gamma,
        seed: args.seed,
    };
    let text = mdp_to_json(&generate_garnet(&spec)?);
    match &args.out {
        Some(path) => {
            fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{text}"),
    }
    Ok(true)
}

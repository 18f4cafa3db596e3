//! Seeded random instances: Garnet MDPs, policies and shaping functions.
//!
//! All randomness comes from ChaCha8 streams. A `(seed, stream)` pair always
//! yields the same sequence regardless of platform or thread count.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, ShapingFunction, TabularPolicy};

/// Sub-stream `stream` of the generator seeded by `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parameters of a Garnet random MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub num_states: usize,
    pub num_actions: usize,
    /// Number of reachable successors per `(s, a)`.
    pub branching: usize,
    /// Probability that a reachable reward entry is zero.
    pub reward_sparsity: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl GarnetSpec {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        branching: usize,
        gamma: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_states,
            num_actions,
            branching,
            reward_sparsity: 0.0,
            gamma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::Config(
                "Garnet needs at least one state and one action".into(),
            ));
        }
        if self.branching == 0 || self.branching > self.num_states {
            return Err(Error::Config(format!(
                "branching factor {} must lie in 1..={}",
                self.branching, self.num_states
            )));
        }
        if !(0.0..=1.0).contains(&self.reward_sparsity) {
            return Err(Error::Config(format!(
                "reward sparsity {} must lie in [0, 1]",
                self.reward_sparsity
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidDiscount(self.gamma));
        }
        Ok(())
    }
}

/// `n` strictly positive weights from a uniform random cut of `[0, 1]`.
fn random_cut<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        let parts: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
        if parts.iter().all(|p| *p > 0.0) {
            return normalize(parts);
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Generates a Garnet MDP. Each `(s, a)` reaches exactly `branching` distinct
/// successors; rewards are uniform on `[-1, 1]`, zeroed with probability
/// `reward_sparsity`; the start distribution has full support.
pub fn generate_garnet(spec: &GarnetSpec) -> Result<Mdp> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, 0);
    let (n, m) = (spec.num_states, spec.num_actions);
    let mut transition = vec![0.0; n * m * n];
    let mut reward = vec![0.0; n * m * n];
    for s in 0..n {
        for a in 0..m {
            let base = (s * m + a) * n;
            let successors = sample(&mut rng, n, spec.branching);
            let probs = random_cut(&mut rng, spec.branching);
            for (next, p) in successors.iter().zip(probs) {
                transition[base + next] = p;
            }
            for next in 0..n {
                let sparse = spec.reward_sparsity > 0.0 && rng.gen::<f64>() < spec.reward_sparsity;
                let r = rng.gen_range(-1.0..=1.0);
                reward[base + next] = if sparse { 0.0 } else { r };
            }
        }
    }
    let start = random_cut(&mut rng, n);
    Mdp::new(n, m, spec.gamma, start, transition, reward)
}

/// Dense random MDP drawn from `rng` (every successor reachable).
pub fn random_mdp<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize, gamma: f64) -> Mdp {
    let spec = GarnetSpec::new(num_states, num_actions, num_states, gamma, rng.gen());
    generate_garnet(&spec).expect("dense Garnet spec is valid")
}

/// Strictly positive random distribution over `n` outcomes.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // normalized exponentials are uniform on the simplex
    normalize(
        (0..n)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-12)
            .collect(),
    )
}

/// Strictly positive random policy.
pub fn random_policy<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize) -> TabularPolicy {
    let probs = (0..num_states)
        .flat_map(|_| random_distribution(rng, num_actions))
        .collect();
    TabularPolicy::new(num_states, num_actions, probs).expect("random rows are normalized")
}

/// Random deterministic policy.
pub fn random_deterministic_policy<R: Rng>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
) -> TabularPolicy {
    let actions: Vec<usize> = (0..num_states)
        .map(|_| rng.gen_range(0..num_actions))
        .collect();
    TabularPolicy::deterministic(num_actions, &actions).expect("actions in range")
}

/// Shaping function with entries uniform on `[-scale, scale]`.
pub fn random_shaping<R: Rng>(rng: &mut R, num_states: usize, scale: f64) -> ShapingFunction {
    ShapingFunction::new(
        (0..num_states)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect(),
    )
    .expect("finite entries")
}

//! Browser bindings: each export takes a JSON parameter object and returns a
//! JSON document ready for plotting. The `*_json` functions are the same
//! operations without the JS boundary.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use empi_core::campaign::sample_trust_region;
use empi_core::empi::IterationRow;
use empi_core::instances::{random_policy, seeded_rng};
use empi_core::{
    corrupt_value_estimator, generate_garnet, improvement_bound, run_empi, value_functions,
    visitation_shift_bound, BoundVariant, EmpiConfig, GarnetSpec, Mdp, PenaltyMode,
    ShapingFunction, ShapingMode, TabularPolicy,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct InstanceParams {
    pub states: usize,
    pub actions: usize,
    pub branching: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            states: 6,
            actions: 3,
            branching: 2,
            gamma: 0.3,
            seed: 1,
        }
    }
}

impl InstanceParams {
    fn mdp(&self) -> Result<Mdp, String> {
        let spec = GarnetSpec::new(
            self.states,
            self.actions,
            self.branching,
            self.gamma,
            self.seed,
        );
        generate_garnet(&spec).map_err(|e| e.to_string())
    }
}

fn parse<'a, T: Deserialize<'a>>(params: &'a str) -> Result<T, String> {
    serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))
}

fn emit<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct EmpiParams {
    #[serde(flatten)]
    pub instance: InstanceParams,
    pub iters: usize,
    pub alpha: f64,
    /// Corrupt advantage estimates with this noise scale instead of using exact values.
    pub noise: Option<f64>,
    pub per_state_penalty: bool,
}

impl Default for EmpiParams {
    fn default() -> Self {
        Self {
            instance: InstanceParams::default(),
            iters: 50,
            alpha: 1e-8,
            noise: None,
            per_state_penalty: false,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EmpiCurve {
    /// `J` before the first iteration and after each one.
    pub returns: Vec<f64>,
    pub iterations: Vec<IterationRow>,
    pub final_policy: Vec<Vec<f64>>,
}

pub fn empi_curve_json(params: &str) -> Result<String, String> {
    let p: EmpiParams = parse(params)?;
    let mdp = p.instance.mdp()?;
    let config = EmpiConfig {
        max_iters: p.iters,
        stop_tol: p.alpha,
        shaping_mode: match p.noise {
            Some(noise_scale) => ShapingMode::Estimated {
                noise_scale,
                seed: p.instance.seed,
            },
            None => ShapingMode::ExactValue,
        },
        penalty_mode: if p.per_state_penalty {
            PenaltyMode::PerState
        } else {
            PenaltyMode::Uniform
        },
        ..EmpiConfig::default()
    };
    let initial = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let run = run_empi(&mdp, &initial, &config).map_err(|e| e.to_string())?;
    let iterations: Vec<IterationRow> = run.records.iter().map(|r| r.row()).collect();
    let mut returns = vec![iterations[0].j_before];
    returns.extend(iterations.iter().map(|r| r.j_after));
    emit(&EmpiCurve {
        returns,
        iterations,
        final_policy: run.policy.rows().map(<[f64]>::to_vec).collect(),
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    #[serde(flatten)]
    pub instance: InstanceParams,
    /// Number of mixture weights on `[0, 1]`.
    pub points: usize,
    pub noise: f64,
    /// `"value"` shapes with `V^old`, `"zero"` with `f = 0`.
    pub shaping: String,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            instance: InstanceParams::default(),
            points: 41,
            noise: 0.05,
            shaping: "value".into(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct VariantCurve {
    pub variant: BoundVariant,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct BoundSweep {
    pub lambda: Vec<f64>,
    pub improvement: Vec<f64>,
    pub variants: Vec<VariantCurve>,
    pub visitation_shift: Vec<f64>,
    pub visitation_shift_bound: Vec<f64>,
}

/// Every bound along `new = (1 - lambda) old + lambda rho` for random `old`, `rho`.
pub fn bound_sweep_json(params: &str) -> Result<String, String> {
    let p: SweepParams = parse(params)?;
    if p.points < 2 {
        return Err("points must be at least 2".into());
    }
    let mdp = p.instance.mdp()?;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let mut rng = seeded_rng(p.instance.seed, 1);
    let old = random_policy(&mut rng, n, m);
    let rho = random_policy(&mut rng, n, m);
    let f = match p.shaping.as_str() {
        "value" => value_functions(&mdp, &old)
            .map_err(|e| e.to_string())?
            .value_shaping(),
        "zero" => ShapingFunction::zeros(n),
        other => return Err(format!("unknown shaping {other:?}")),
    };
    let estimate =
        corrupt_value_estimator(&mdp, &old, p.noise, p.instance.seed).map_err(|e| e.to_string())?;

    let lambda: Vec<f64> = (0..p.points)
        .map(|i| i as f64 / (p.points - 1) as f64)
        .collect();
    let mut sweep = BoundSweep {
        lambda: lambda.clone(),
        improvement: Vec::new(),
        variants: BoundVariant::ALL
            .iter()
            .map(|&variant| VariantCurve {
                variant,
                rhs: Vec::new(),
            })
            .collect(),
        visitation_shift: Vec::new(),
        visitation_shift_bound: Vec::new(),
    };
    for &l in &lambda {
        let new = old.mix(&rho, l).map_err(|e| e.to_string())?;
        for curve in &mut sweep.variants {
            let report = improvement_bound(&mdp, &old, &new, &f, curve.variant, Some(&estimate))
                .map_err(|e| e.to_string())?;
            curve.rhs.push(report.rhs);
            if curve.variant == BoundVariant::StateTv {
                sweep.improvement.push(report.true_improvement);
            }
        }
        let shift = visitation_shift_bound(&mdp, &old, &new).map_err(|e| e.to_string())?;
        sweep.visitation_shift.push(shift.lhs);
        sweep.visitation_shift_bound.push(shift.rhs);
    }
    emit(&sweep)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TrustParams {
    #[serde(flatten)]
    pub instance: InstanceParams,
    pub delta: f64,
    pub samples: usize,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            instance: InstanceParams::default(),
            delta: 0.01,
            samples: 200,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrustPoint {
    pub kl_avg: f64,
    pub improvement: f64,
    pub bound: f64,
}

#[derive(Debug, Serialize)]
pub struct TrustRegionScatter {
    pub delta: f64,
    pub points: Vec<TrustPoint>,
    pub rejected_radius: usize,
    pub rejected_objective: usize,
    pub violations: usize,
}

/// Accepted trust-region steps with their true improvement and worst-case bound.
pub fn trust_region_json(params: &str) -> Result<String, String> {
    let p: TrustParams = parse(params)?;
    if p.delta.is_nan() || p.delta <= 0.0 {
        return Err("delta must be positive".into());
    }
    let mdp = p.instance.mdp()?;
    let mut rng = seeded_rng(p.instance.seed, 1);
    let old = random_policy(&mut rng, mdp.num_states(), mdp.num_actions());
    let tally =
        sample_trust_region(&mdp, &old, p.delta, p.samples, &mut rng).map_err(|e| e.to_string())?;
    emit(&TrustRegionScatter {
        delta: p.delta,
        violations: tally.accepted.iter().filter(|s| s.violation).count(),
        points: tally
            .accepted
            .iter()
            .map(|s| TrustPoint {
                kl_avg: s.kl_avg,
                improvement: s.improvement,
                bound: s.bound,
            })
            .collect(),
        rejected_radius: tally.rejected_radius,
        rejected_objective: tally.rejected_objective,
    })
}

#[wasm_bindgen(js_name = empiCurve)]
pub fn empi_curve(params: &str) -> Result<String, JsError> {
    empi_curve_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = boundSweep)]
pub fn bound_sweep(params: &str) -> Result<String, JsError> {
    bound_sweep_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = trustRegion)]
pub fn trust_region(params: &str) -> Result<String, JsError> {
    trust_region_json(params).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn empi_curve_is_monotone() {
        let out: Value = serde_json::from_str(&empi_curve_json("{}").unwrap()).unwrap();
        let returns: Vec<f64> = serde_json::from_value(out["returns"].clone()).unwrap();
        assert!(returns.len() >= 2);
        assert!(returns.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn sweep_bounds_lie_below_the_improvement() {
        let json = bound_sweep_json(r#"{"points": 11, "gamma": 0.5}"#).unwrap();
        let out: Value = serde_json::from_str(&json).unwrap();
        let improvement: Vec<f64> = serde_json::from_value(out["improvement"].clone()).unwrap();
        assert_eq!(improvement.len(), 11);
        assert_eq!(improvement[0], 0.0);
        for curve in out["variants"].as_array().unwrap() {
            let rhs: Vec<f64> = serde_json::from_value(curve["rhs"].clone()).unwrap();
            assert!(
                rhs.iter().zip(&improvement).all(|(r, i)| *r <= i + 1e-8),
                "{curve}"
            );
        }
    }

    #[test]
    fn trust_region_scatter_has_no_violations() {
        let out: Value =
            serde_json::from_str(&trust_region_json(r#"{"samples": 30}"#).unwrap()).unwrap();
        assert_eq!(out["points"].as_array().unwrap().len(), 30);
        assert_eq!(out["violations"], 0);
    }

    #[test]
    fn bad_parameters_are_reported() {
        assert!(bound_sweep_json(r#"{"points": 1}"#).is_err());
        assert!(empi_curve_json(r#"{"gamma": 1.0}"#).is_err());
        assert!(trust_region_json(r#"{"delta": "x"}"#).is_err());
        assert!(bound_sweep_json(r#"{"shaping": "other"}"#).is_err());
    }
}

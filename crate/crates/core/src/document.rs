//! JSON interchange format for MDPs.
//!
//! ```json
//! { "num_states": 2, "num_actions": 1, "gamma": 0.9,
//!   "start_dist": [1.0, 0.0],
//!   "transition": [[[0.0, 1.0]], [[0.0, 1.0]]],
//!   "reward":     [[[0.0, 1.0]], [[0.0, 1.0]]] }
//! ```
//!
//! `transition[s][a][s']` and `reward[s][a][s']`. Probabilities are validated
//! on load; errors name the offending index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub start_dist: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
}

fn flatten(
    what: &'static str,
    tensor: &[Vec<Vec<f64>>],
    num_states: usize,
    num_actions: usize,
) -> Result<Vec<f64>> {
    let shape_err = |index: String, detail: String| Error::InvalidDistribution {
        what,
        index,
        detail,
    };
    if tensor.len() != num_states {
        return Err(shape_err(
            String::new(),
            format!("expected {num_states} state rows, found {}", tensor.len()),
        ));
    }
    let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
    for (s, per_action) in tensor.iter().enumerate() {
        if per_action.len() != num_actions {
            return Err(shape_err(
                format!("[{s}]"),
                format!(
                    "expected {num_actions} action rows, found {}",
                    per_action.len()
                ),
            ));
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != num_states {
                return Err(shape_err(
                    format!("[{s}][{a}]"),
                    format!("expected {num_states} entries, found {}", row.len()),
                ));
            }
            flat.extend_from_slice(row);
        }
    }
    Ok(flat)
}

impl MdpDocument {
    pub fn into_mdp(self) -> Result<Mdp> {
        let transition = flatten(
            "transition",
            &self.transition,
            self.num_states,
            self.num_actions,
        )?;
        let reward = flatten("reward", &self.reward, self.num_states, self.num_actions)?;
        Mdp::new(
            self.num_states,
            self.num_actions,
            self.gamma,
            self.start_dist,
            transition,
            reward,
        )
    }

    pub fn from_mdp(mdp: &Mdp) -> Self {
        let nest = |row: &dyn Fn(usize, usize) -> Vec<f64>| -> Vec<Vec<Vec<f64>>> {
            (0..mdp.num_states())
                .map(|s| (0..mdp.num_actions()).map(|a| row(s, a)).collect())
                .collect()
        };
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            gamma: mdp.gamma(),
            start_dist: mdp.start_dist().to_vec(),
            transition: nest(&|s, a| mdp.transition_row(s, a).to_vec()),
            reward: nest(&|s, a| mdp.reward_row(s, a).to_vec()),
        }
    }
}

pub fn parse_mdp(json: &str) -> Result<Mdp> {
    let doc: MdpDocument = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    doc.into_mdp()
}

pub fn mdp_to_json(mdp: &Mdp) -> String {
    serde_json::to_string_pretty(&MdpDocument::from_mdp(mdp)).expect("MDP documents serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_garnet, GarnetSpec};

    #[test]
    fn round_trip() {
        let mdp = generate_garnet(&GarnetSpec::new(4, 3, 2, 0.9, 12)).unwrap();
        assert_eq!(parse_mdp(&mdp_to_json(&mdp)).unwrap(), mdp);
    }

    #[test]
    fn documented_example_loads() {
        let json = r#"{ "num_states": 2, "num_actions": 1, "gamma": 0.9,
            "start_dist": [1.0, 0.0],
            "transition": [[[0.0, 1.0]], [[0.0, 1.0]]],
            "reward": [[[0.0, 1.0]], [[0.0, 1.0]]] }"#;
        let mdp = parse_mdp(json).unwrap();
        assert_eq!(mdp.num_states(), 2);
        assert_eq!(mdp.transition(0, 0, 1), 1.0);
    }

    #[test]
    fn bad_probability_names_index() {
        let json = r#"{ "num_states": 2, "num_actions": 1, "gamma": 0.9,
            "start_dist": [1.0, 0.0],
            "transition": [[[0.0, 1.0]], [[0.3, 0.3]]],
            "reward": [[[0.0, 1.0]], [[0.0, 1.0]]] }"#;
        let err = parse_mdp(json).unwrap_err();
        assert!(err.to_string().contains("[1][0]"), "{err}");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let json = r#"{ "num_states": 2, "num_actions": 1, "gamma": 0.9,
            "start_dist": [1.0, 0.0],
            "transition": [[[0.0, 1.0]], [[1.0]]],
            "reward": [[[0.0, 1.0]], [[0.0, 1.0]]] }"#;
        assert!(parse_mdp(json).unwrap_err().to_string().contains("[1][0]"));
        assert!(matches!(parse_mdp("{"), Err(Error::Parse(_))));
    }
}

//! Scenario files: a JSON description of a run (model, topology, per-client
//! programs in a tiny `W <var> <int>` / `R <var>` language, seed, and fault
//! schedule) plus validation.

use crate::engine::EngineKind;
use crate::sim::SimConfig;
use crate::types::{OpKind, Operation, ReplicaId, Value};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario field `{field}`: {detail}")]
    Invalid { field: &'static str, detail: String },
    #[error("bad program token `{token}` (expected `W <var> <int>` or `R <var>`)")]
    BadToken { token: String },
}

fn default_max_latency() -> u64 {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub model: EngineKind,
    pub n: usize,
    /// One program per client, as `"W x 3"` / `"R x"` tokens.
    pub programs: Vec<Vec<String>>,
    pub seed: u64,
    #[serde(default = "default_max_latency")]
    pub max_latency: u64,
    /// Event-count triggers for checkpoint initiations (strictly increasing).
    #[serde(default)]
    pub checkpoint_at: Vec<u64>,
    /// Event-count trigger for the whole-system crash.
    #[serde(default)]
    pub crash_at: Option<u64>,
    #[serde(default)]
    pub initiator: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n == 0 {
            return Err(ScenarioError::Invalid {
                field: "n",
                detail: "node count must be at least 1".into(),
            });
        }
        if self.initiator >= self.n {
            return Err(ScenarioError::Invalid {
                field: "initiator",
                detail: format!("initiator {} out of range for n = {}", self.initiator, self.n),
            });
        }
        if self.programs.len() > self.n {
            return Err(ScenarioError::Invalid {
                field: "programs",
                detail: format!("{} programs for {} clients", self.programs.len(), self.n),
            });
        }
        if self.max_latency == 0 {
            return Err(ScenarioError::Invalid {
                field: "max_latency",
                detail: "latency bound must be at least 1 tick".into(),
            });
        }
        let mut triggers = self.checkpoint_at.clone();
        if let Some(c) = self.crash_at {
            triggers.push(c);
        }
        if !triggers.windows(2).all(|w| w[0] < w[1]) {
            return Err(ScenarioError::Invalid {
                field: "checkpoint_at",
                detail: "triggers (including crash_at) must be strictly increasing".into(),
            });
        }
        for prog in &self.programs {
            for tok in prog {
                parse_op(tok, 0)?;
            }
        }
        Ok(())
    }

    /// Parsed per-client programs with op indices assigned.
    pub fn parsed_programs(&self) -> Result<Vec<Vec<Operation>>, ScenarioError> {
        self.programs
            .iter()
            .map(|prog| {
                prog.iter()
                    .enumerate()
                    .map(|(i, tok)| parse_op(tok, i))
                    .collect()
            })
            .collect()
    }

    pub fn to_sim_config(&self) -> Result<SimConfig, ScenarioError> {
        self.validate()?;
        let mut cfg = SimConfig::new(self.model, self.n, self.parsed_programs()?, self.seed);
        cfg.max_latency = self.max_latency;
        cfg.checkpoint_at = self.checkpoint_at.clone();
        cfg.crash_at = self.crash_at;
        cfg.initiator = ReplicaId(self.initiator);
        Ok(cfg)
    }
}

fn parse_op(token: &str, op_index: usize) -> Result<Operation, ScenarioError> {
    let bad = || ScenarioError::BadToken { token: token.to_string() };
    let mut parts = token.split_whitespace();
    let kind = match parts.next().ok_or_else(bad)? {
        "W" => {
            let var = parts.next().ok_or_else(bad)?.to_string();
            let value: Value = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            OpKind::Write { var, value }
        }
        "R" => OpKind::Read { var: parts.next().ok_or_else(bad)?.to_string() },
        _ => return Err(bad()),
    };
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(Operation { kind, op_index })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let sc: Scenario = serde_json::from_str(&text)?;
    sc.validate()?;
    Ok(sc)
}

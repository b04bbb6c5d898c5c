//! Synthesis strategies over the shared value-pool and cost machinery.

mod costs;
mod enumerate;
mod guided;
mod pool;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{evaluate, Expr};
use crate::nn::{MultiLabelModel, SeqModel};
use crate::ops::Registry;
use crate::tensor::Tensor;

pub use costs::{
    assign_op_costs, predicted_ops, CostTable, PREDICT_THRESHOLD, REWEIGHT_MULTIPLIER,
};
pub use enumerate::{enumerate, partition};
pub use guided::{frame_plans, rank_sequences, synth_first_of_seq, synth_full_seq, FramePlan};
pub use pool::{base_values, param_candidates, BaseValues, ValuePool, CONSTANTS};

/// A single input/output example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct TaskSpec {
    pub inputs: Vec<Tensor>,
    pub output: Tensor,
}

#[derive(Deserialize)]
struct RawSpec {
    inputs: Vec<Tensor>,
    output: Tensor,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("a task needs 1 to 3 inputs, got {0}")]
    InputCount(usize),
}

impl TryFrom<RawSpec> for TaskSpec {
    type Error = SpecError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        TaskSpec::new(raw.inputs, raw.output)
    }
}

impl TaskSpec {
    pub fn new(inputs: Vec<Tensor>, output: Tensor) -> Result<Self, SpecError> {
        if inputs.is_empty() || inputs.len() > 3 {
            return Err(SpecError::InputCount(inputs.len()));
        }
        Ok(TaskSpec { inputs, output })
    }

    /// True when `program` reproduces the output exactly.
    pub fn is_solved_by(&self, program: &Expr) -> bool {
        evaluate(program, &self.inputs).is_ok_and(|v| v == self.output)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Limits {
    pub timeout: Duration,
    pub max_cost: u32,
    /// Beam width for sequence prediction.
    pub beam_width: usize,
    /// Maximum number of predicted steps.
    pub max_steps: usize,
    /// Frontier states expanded by first-of-sequence search.
    pub node_budget: usize,
    /// Fall back to plain enumeration when a guided strategy fails.
    pub fallback: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            timeout: Duration::from_secs(120),
            max_cost: 400,
            beam_width: 3,
            max_steps: 3,
            node_budget: 500,
            fallback: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Found,
    NotFound,
    Timeout,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub candidates: u64,
    pub model_invocations: u64,
    pub pool_size: usize,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub status: Status,
    pub program: Option<Expr>,
    pub cost: Option<u32>,
    pub stats: SearchStats,
}

impl SearchResult {
    pub fn found(&self) -> bool {
        self.status == Status::Found
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "enum")]
    Enum,
    #[serde(rename = "multilabel")]
    MultiLabel,
    #[serde(rename = "full-seq")]
    FullSeq,
    #[serde(rename = "fos")]
    FirstOfSeq,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Enum,
        Strategy::MultiLabel,
        Strategy::FullSeq,
        Strategy::FirstOfSeq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Enum => "enum",
            Strategy::MultiLabel => "multilabel",
            Strategy::FullSeq => "full-seq",
            Strategy::FirstOfSeq => "fos",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown strategy `{0}` (expected enum, multilabel, full-seq or fos)")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enum" => Ok(Strategy::Enum),
            "multilabel" => Ok(Strategy::MultiLabel),
            "full-seq" => Ok(Strategy::FullSeq),
            "fos" | "first-of-seq" => Ok(Strategy::FirstOfSeq),
            other => Err(UnknownStrategy(other.to_string())),
        }
    }
}

/// Trained models available to the model-backed strategies.
#[derive(Clone, Copy, Debug, Default)]
pub struct Models<'a> {
    pub seq: Option<&'a SeqModel<f32>>,
    pub multilabel: Option<&'a MultiLabelModel<f32>>,
}

#[derive(Debug, Error)]
#[error("strategy `{0}` needs a trained {1} model")]
pub struct MissingModel(pub Strategy, pub &'static str);

/// Runs one strategy on a spec.
pub fn synthesize(
    spec: &TaskSpec,
    strategy: Strategy,
    registry: &Registry,
    models: Models<'_>,
    limits: &Limits,
) -> Result<SearchResult, MissingModel> {
    let preset = CostTable::preset();
    Ok(match strategy {
        Strategy::Enum => enumerate(spec, registry, &preset, limits),
        Strategy::MultiLabel => {
            let model = models
                .multilabel
                .ok_or(MissingModel(strategy, "multilabel"))?;
            let started = crate::clock::Instant::now();
            let costs = assign_op_costs(spec, &preset, Some(model));
            let mut r = enumerate(spec, registry, &costs, limits);
            r.stats.model_invocations += 1;
            r.stats.elapsed_secs = started.elapsed().as_secs_f64();
            r
        }
        Strategy::FullSeq => synth_full_seq(
            spec,
            models.seq.ok_or(MissingModel(strategy, "sequence"))?,
            limits,
        ),
        Strategy::FirstOfSeq => synth_first_of_seq(
            spec,
            models.seq.ok_or(MissingModel(strategy, "sequence"))?,
            limits,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_schema() {
        let json = r#"{"inputs":[{"dtype":"int","shape":[2],"data":[2,3]}],
                       "output":{"dtype":"int","shape":[2],"data":[4,9]}}"#;
        let spec: TaskSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.inputs.len(), 1);
        assert!(spec.is_solved_by(&"mul(in1, in1)".parse().unwrap()));
        assert!(!spec.is_solved_by(&"add(in1, in1)".parse().unwrap()));
        let empty = r#"{"inputs":[], "output":{"dtype":"int","shape":[],"data":[1]}}"#;
        assert!(serde_json::from_str::<TaskSpec>(empty).is_err());
    }
}

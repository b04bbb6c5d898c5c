use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TaskSpec;
use crate::nn::MultiLabelModel;
use crate::ops::{OpCode, ALL_OPS};

/// Factor applied to the cost of operations the classifier deems likely.
pub const REWEIGHT_MULTIPLIER: f64 = 0.5;
/// Probability at or above which an op counts as predicted.
pub const PREDICT_THRESHOLD: f32 = 0.5;
/// Fallback when fewer than two ops clear the threshold.
pub const FALLBACK_TOP: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub op_cost: BTreeMap<OpCode, u32>,
    pub base_value_cost: u32,
    pub literal_cost: u32,
}

impl CostTable {
    /// Hand-set costs: common elementwise and shape ops are cheap, stacking
    /// and contraction are expensive.
    pub fn preset() -> Self {
        let op_cost = ALL_OPS
            .iter()
            .map(|&op| {
                let c = match op {
                    OpCode::Add
                    | OpCode::Mul
                    | OpCode::Eq
                    | OpCode::Gt
                    | OpCode::Lt
                    | OpCode::Ne
                    | OpCode::Any
                    | OpCode::Unsqueeze
                    | OpCode::Transpose => 20,
                    OpCode::Where
                    | OpCode::MaskedSelect
                    | OpCode::Matmul
                    | OpCode::Expand
                    | OpCode::Bincount => 28,
                    OpCode::Stack | OpCode::Tensordot => 36,
                };
                (op, c)
            })
            .collect();
        CostTable {
            op_cost,
            base_value_cost: 4,
            literal_cost: 4,
        }
    }

    pub fn op_cost(&self, op: OpCode) -> u32 {
        self.op_cost[&op]
    }

    /// Multiplies an op's cost, rounding up to a multiple of 4 with a floor of 4.
    pub fn discount(&mut self, op: OpCode, multiplier: f64) {
        let c = self.op_cost(op) as f64 * multiplier;
        let rounded = ((c / 4.0).ceil() as u32 * 4).max(4);
        self.op_cost.insert(op, rounded);
    }
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable::preset()
    }
}

/// Ops to discount given per-op probabilities: all at or above the
/// threshold, or the top five when fewer than two clear it.
pub fn predicted_ops(probs: &[(OpCode, f32)]) -> Vec<OpCode> {
    let clear: Vec<OpCode> = probs
        .iter()
        .filter(|(_, p)| *p >= PREDICT_THRESHOLD)
        .map(|(op, _)| *op)
        .collect();
    if clear.len() >= 2 {
        return clear;
    }
    let mut ranked = probs.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(FALLBACK_TOP)
        .map(|(op, _)| op)
        .collect()
}

/// Starts from the preset table and, given a classifier, discounts the ops
/// it predicts for this task.
pub fn assign_op_costs(
    spec: &TaskSpec,
    costs: &CostTable,
    model: Option<&MultiLabelModel>,
) -> CostTable {
    let mut table = costs.clone();
    if let Some(model) = model {
        if let Ok(probs) = model.predict(&spec.inputs, &spec.output) {
            for op in predicted_ops(&probs) {
                table.discount(op, REWEIGHT_MULTIPLIER);
            }
        }
    }
    table
}

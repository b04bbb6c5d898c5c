use crate::clock::Instant;

use super::pool::{base_values, param_candidates, PoolNode, ValuePool};
use super::{CostTable, Limits, SearchResult, SearchStats, Status, TaskSpec};
use crate::ops::{apply, Registry};
use crate::tensor::Tensor;

/// Every cost in the search is a multiple of this.
pub const COST_STEP: u32 = 4;

const TIMEOUT_CHECK_EVERY: u64 = 1024;

/// Ordered `n`-tuples of multiples of four, each at least `min_cost`,
/// summing to `budget`.
pub fn partition(budget: u32, n: usize, min_cost: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if n == 0 {
        if budget == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let min_cost = min_cost.max(COST_STEP).div_ceil(COST_STEP) * COST_STEP;
    if !budget.is_multiple_of(COST_STEP) || (budget as u64) < min_cost as u64 * n as u64 {
        return out;
    }
    let mut first = min_cost;
    while first as u64 + min_cost as u64 * (n as u64 - 1) <= budget as u64 {
        for mut rest in partition(budget - first, n - 1, min_cost) {
            rest.insert(0, first);
            out.push(rest);
        }
        first += COST_STEP;
    }
    out
}

pub(crate) struct Deadline {
    start: Instant,
    limit: std::time::Duration,
}

impl Deadline {
    pub(crate) fn new(limits: &Limits) -> Self {
        Deadline {
            start: Instant::now(),
            limit: limits.timeout,
        }
    }

    pub(crate) fn expired(&self) -> bool {
        self.start.elapsed() >= self.limit
    }

    pub(crate) fn elapsed_secs(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Seeds a pool with the base values of `spec`, each at the base value cost.
pub(crate) fn seeded_pool(spec: &TaskSpec, costs: &CostTable) -> (ValuePool, Vec<i64>) {
    let base = base_values(spec);
    let mut pool = ValuePool::new();
    for (expr, value) in base.values {
        pool.insert(value, PoolNode::Base(expr), costs.base_value_cost);
    }
    (pool, base.literals)
}

/// Weighted bottom-up enumeration: grows the value pool one cost level at a
/// time and stops at the first value equal to the output.
pub fn enumerate(
    spec: &TaskSpec,
    registry: &Registry,
    costs: &CostTable,
    limits: &Limits,
) -> SearchResult {
    let deadline = Deadline::new(limits);
    let mut stats = SearchStats::default();
    let result = enumerate_within(
        spec,
        registry,
        costs,
        limits.max_cost,
        &deadline,
        &mut stats,
    );
    stats.elapsed_secs = deadline.elapsed_secs();
    SearchResult { stats, ..result }
}

pub(crate) fn enumerate_within(
    spec: &TaskSpec,
    registry: &Registry,
    costs: &CostTable,
    max_cost: u32,
    deadline: &Deadline,
    stats: &mut SearchStats,
) -> SearchResult {
    let (mut pool, literals) = seeded_pool(spec, costs);
    let finish = |status, pool: &ValuePool, hit: Option<&Tensor>, stats: &mut SearchStats| {
        stats.pool_size = pool.len();
        let found = hit.and_then(|t| pool.lookup(t));
        SearchResult {
            status,
            cost: found.as_ref().map(|(_, c)| *c),
            program: found.map(|(e, _)| e),
            stats: stats.clone(),
        }
    };
    if pool.contains(&spec.output) {
        return finish(Status::Found, &pool, Some(&spec.output), stats);
    }

    let mut budget = costs.base_value_cost.max(COST_STEP) + COST_STEP;
    while budget <= max_cost {
        for &op in registry.ops() {
            let fixed = costs.op_cost(op) + costs.literal_cost * op.param_schema().len() as u32;
            let arity = op.arity();
            if budget < fixed + costs.base_value_cost * arity as u32 {
                continue;
            }
            for parts in partition(budget - fixed, arity, costs.base_value_cost) {
                let choices: Vec<Vec<usize>> = parts
                    .iter()
                    .map(|&c| pool.ids_with_cost(c).to_vec())
                    .collect();
                if choices.iter().any(Vec::is_empty) {
                    continue;
                }
                let mut idx = vec![0usize; arity];
                'tuples: loop {
                    let ids: Vec<usize> = idx.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
                    let mut produced: Vec<(Tensor, Vec<crate::ops::Literal>)> = Vec::new();
                    {
                        let arg_buf: Vec<&Tensor> =
                            ids.iter().map(|&id| &*pool.entry(id).value).collect();
                        for params in param_candidates(op, &arg_buf, &literals, &spec.output) {
                            stats.candidates += 1;
                            if stats.candidates.is_multiple_of(TIMEOUT_CHECK_EVERY)
                                && deadline.expired()
                            {
                                return finish(Status::Timeout, &pool, None, stats);
                            }
                            if let Ok(value) = apply(op, &arg_buf, &params) {
                                if !pool.contains(&value) {
                                    produced.push((value, params));
                                }
                            }
                        }
                    }
                    for (value, params) in produced {
                        let hit = value == spec.output;
                        let node = PoolNode::Call {
                            op,
                            args: ids.clone(),
                            params,
                        };
                        if pool.insert(value, node, budget).is_some() && hit {
                            return finish(Status::Found, &pool, Some(&spec.output), stats);
                        }
                    }
                    for k in (0..arity).rev() {
                        idx[k] += 1;
                        if idx[k] < choices[k].len() {
                            continue 'tuples;
                        }
                        idx[k] = 0;
                    }
                    break;
                }
            }
        }
        if deadline.expired() {
            return finish(Status::Timeout, &pool, None, stats);
        }
        budget += COST_STEP;
    }
    finish(Status::NotFound, &pool, None, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions() {
        assert_eq!(partition(8, 2, 4), vec![vec![4, 4]]);
        assert_eq!(partition(12, 2, 4), vec![vec![4, 8], vec![8, 4]]);
        assert!(partition(4, 2, 4).is_empty());
        assert_eq!(partition(12, 1, 4), vec![vec![12]]);
        assert_eq!(partition(16, 3, 4).len(), 3);
    }

    #[test]
    fn base_hit() {
        let x = Tensor::vector(&[1, 2]);
        let spec = TaskSpec::new(vec![x.clone()], x).unwrap();
        let r = enumerate(
            &spec,
            &Registry::core16(),
            &CostTable::preset(),
            &Limits::default(),
        );
        assert_eq!(r.status, Status::Found);
        assert_eq!(r.program.unwrap().render(), "in1");
        assert_eq!(r.cost, Some(4));
    }

    #[test]
    fn square() {
        let spec = TaskSpec::new(vec![Tensor::vector(&[2, 3])], Tensor::vector(&[4, 9])).unwrap();
        let reg = Registry::parse("mul,add").unwrap();
        let r = enumerate(&spec, &reg, &CostTable::preset(), &Limits::default());
        assert_eq!(r.program.unwrap().render(), "mul(in1, in1)");
        assert_eq!(r.cost, Some(28));
    }

    #[test]
    fn figure_one_stack() {
        let x = Tensor::int(&[2, 2], &[1, 2, 3, 4]).unwrap();
        let out = Tensor::int(&[2, 2, 2], &[1, 1, 2, 2, 3, 3, 4, 4]).unwrap();
        let spec = TaskSpec::new(vec![x], out).unwrap();
        let reg = Registry::parse("stack").unwrap();
        let r = enumerate(&spec, &reg, &CostTable::preset(), &Limits::default());
        assert_eq!(r.cost, Some(48));
        assert!(spec.is_solved_by(r.program.as_ref().unwrap()));
    }

    #[test]
    fn exhausted_budget() {
        let spec =
            TaskSpec::new(vec![Tensor::vector(&[2, 3])], Tensor::vector(&[7, 7, 7])).unwrap();
        let limits = Limits {
            max_cost: 40,
            ..Limits::default()
        };
        let r = enumerate(
            &spec,
            &Registry::parse("add").unwrap(),
            &CostTable::preset(),
            &limits,
        );
        assert_eq!(r.status, Status::NotFound);
        assert!(r.program.is_none());
    }
}

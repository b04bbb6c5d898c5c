use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::enumerate::{enumerate_within, Deadline};
use super::pool::{base_values, param_candidates};
use super::{CostTable, Limits, SearchResult, SearchStats, Status, TaskSpec};
use crate::encoding::{encode_spec, SlotInput};
use crate::expr::Expr;
use crate::nn::{Frame, Hypothesis, SeqModel};
use crate::ops::{apply, OpCode};
use crate::tensor::Tensor;

const TIMEOUT_CHECK_EVERY: u64 = 256;

/// Which spec inputs the first two steps see. The second step also sees the
/// carried value as a masked slot; later steps see only that slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FramePlan {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl FramePlan {
    pub fn frames<'a>(&self, inputs: &'a [Tensor]) -> Vec<Frame<'a>> {
        let first = self
            .first
            .iter()
            .map(|&i| SlotInput::Tensor(&inputs[i]))
            .collect();
        let mut second = vec![SlotInput::Masked];
        second.extend(self.second.iter().map(|&i| SlotInput::Tensor(&inputs[i])));
        vec![first, second, vec![SlotInput::Masked]]
    }
}

/// Ordered selections of distinct items from `0..n` with length in `lo..=hi`.
fn arrangements(n: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(cur) = stack.pop() {
        if cur.len() >= lo {
            out.push(cur.clone());
        }
        if cur.len() < hi {
            for i in (0..n).rev() {
                if !cur.contains(&i) {
                    let mut next = cur.clone();
                    next.push(i);
                    stack.push(next);
                }
            }
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

/// Every way to show `n` inputs to the first two steps such that each
/// input is seen at least once.
pub fn frame_plans(n: usize) -> Vec<FramePlan> {
    let mut plans = Vec::new();
    for first in arrangements(n, 1, n) {
        for second in arrangements(n, 0, 2) {
            let covered = (0..n).all(|i| first.contains(&i) || second.contains(&i));
            if covered {
                plans.push(FramePlan {
                    first: first.clone(),
                    second,
                });
            }
        }
    }
    plans
}

struct Filler<'a> {
    spec: &'a TaskSpec,
    base: Vec<(Expr, Tensor)>,
    literals: Vec<i64>,
    deadline: &'a Deadline,
}

enum Flow {
    Continue,
    Stop,
}

impl Filler<'_> {
    /// Applies `op` to every argument tuple drawn from the base values plus
    /// `prev` (which must be used when given), calling `visit` on each
    /// successful result. Returns false on timeout.
    fn fill(
        &self,
        op: OpCode,
        prev: Option<&(Expr, Tensor)>,
        stats: &mut SearchStats,
        mut visit: impl FnMut(Expr, Tensor) -> Flow,
    ) -> Result<Flow, Status> {
        let mut pool: Vec<&(Expr, Tensor)> = self.base.iter().collect();
        if let Some(p) = prev {
            pool.push(p);
        }
        let prev_idx = prev.map(|_| pool.len() - 1);
        let arity = op.arity();
        let mut idx = vec![0usize; arity];
        loop {
            if prev_idx.is_none_or(|p| idx.contains(&p)) {
                let args: Vec<&Tensor> = idx.iter().map(|&i| &pool[i].1).collect();
                for params in param_candidates(op, &args, &self.literals, &self.spec.output) {
                    stats.candidates += 1;
                    if stats.candidates.is_multiple_of(TIMEOUT_CHECK_EVERY)
                        && self.deadline.expired()
                    {
                        return Err(Status::Timeout);
                    }
                    if let Ok(value) = apply(op, &args, &params) {
                        let expr = Expr::Call {
                            op,
                            args: idx.iter().map(|&i| pool[i].0.clone()).collect(),
                            params: params.clone(),
                        };
                        if let Flow::Stop = visit(expr, value) {
                            return Ok(Flow::Stop);
                        }
                    }
                }
            }
            let mut k = arity;
            loop {
                if k == 0 {
                    return Ok(Flow::Continue);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < pool.len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Executes `ops` step by step over all argument fills, keeping distinct
    /// intermediate values. Returns the first program matching the output.
    fn run_sequence(
        &self,
        ops: &[OpCode],
        stats: &mut SearchStats,
    ) -> Result<Option<Expr>, Status> {
        let mut frontier: Vec<Option<(Expr, Tensor)>> = vec![None];
        for (t, &op) in ops.iter().enumerate() {
            let last = t + 1 == ops.len();
            let mut next: Vec<Option<(Expr, Tensor)>> = Vec::new();
            let mut seen: HashSet<Tensor> = HashSet::new();
            let mut hit = None;
            for state in &frontier {
                let flow = self.fill(op, state.as_ref(), stats, |expr, value| {
                    if value == self.spec.output {
                        hit = Some(expr);
                        return Flow::Stop;
                    }
                    if !last && !seen.contains(&value) {
                        seen.insert(value.clone());
                        next.push(Some((expr, value)));
                    }
                    Flow::Continue
                })?;
                if let Flow::Stop = flow {
                    return Ok(hit);
                }
            }
            if last || next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(None)
    }
}

fn finish(
    status: Status,
    program: Option<Expr>,
    mut stats: SearchStats,
    deadline: &Deadline,
) -> SearchResult {
    stats.elapsed_secs = deadline.elapsed_secs();
    let cost = program.as_ref().map(|p| p.cost(&CostTable::preset()));
    SearchResult {
        status,
        program,
        cost,
        stats,
    }
}

fn fallback(
    spec: &TaskSpec,
    model: &SeqModel<f32>,
    limits: &Limits,
    deadline: &Deadline,
    mut stats: SearchStats,
) -> SearchResult {
    let r = enumerate_within(
        spec,
        &model.registry,
        &CostTable::preset(),
        limits.max_cost,
        deadline,
        &mut stats,
    );
    finish(r.status, r.program, stats, deadline)
}

fn base_hit(spec: &TaskSpec) -> Option<Expr> {
    base_values(spec)
        .values
        .into_iter()
        .find(|(_, v)| *v == spec.output)
        .map(|(e, _)| e)
}

/// Distinct step encodings shared by many queries.
#[derive(Default)]
struct StepTable {
    rows: Vec<Vec<f32>>,
    index: HashMap<(Lead, Vec<usize>), Option<usize>>,
}

/// What precedes the spec inputs in a frame.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Lead {
    Nothing,
    Masked,
    /// The current intermediate value of a search state.
    Value,
}

impl StepTable {
    /// Row of the frame showing `inputs` after `lead`, or None when it
    /// cannot be encoded.
    fn intern(
        &mut self,
        spec: &TaskSpec,
        lead: Lead,
        current: Option<&Tensor>,
        inputs: &[usize],
    ) -> Option<usize> {
        let key = (lead, inputs.to_vec());
        if let Some(&row) = self.index.get(&key) {
            return row;
        }
        let mut frame: Frame<'_> = Vec::new();
        match (lead, current) {
            (Lead::Masked, _) => frame.push(SlotInput::Masked),
            (Lead::Value, Some(v)) => frame.push(SlotInput::Tensor(v)),
            _ => {}
        }
        frame.extend(inputs.iter().map(|&i| SlotInput::Tensor(&spec.inputs[i])));
        let row = encode_spec(&frame, &spec.output).ok().map(|e| {
            self.rows.push(e.into_vec());
            self.rows.len() - 1
        });
        self.index.insert(key, row);
        row
    }

    /// Queries for a search state. Without a current value these are the
    /// frame plans; with one, the value leads the first frame and any
    /// selection of at most two inputs may follow it in either step.
    fn queries(&mut self, spec: &TaskSpec, current: Option<&Tensor>) -> Vec<[usize; 3]> {
        let n = spec.inputs.len();
        let pairs: Vec<(Lead, Vec<usize>, Vec<usize>)> = match current {
            None => frame_plans(n)
                .into_iter()
                .map(|p| (Lead::Nothing, p.first, p.second))
                .collect(),
            Some(_) => {
                let subsets = arrangements(n, 0, 2);
                subsets
                    .iter()
                    .flat_map(|a| {
                        subsets
                            .iter()
                            .map(move |b| (Lead::Value, a.clone(), b.clone()))
                    })
                    .collect()
            }
        };
        let mut out = Vec::new();
        for (lead, first, second) in pairs {
            let a = self.intern(spec, lead, current, &first);
            let b = self.intern(spec, Lead::Masked, current, &second);
            let c = self.intern(spec, Lead::Masked, current, &[]);
            if let (Some(a), Some(b), Some(c)) = (a, b, c) {
                out.push([a, b, c]);
            }
        }
        out
    }
}

/// Ranked op sequences for a spec: beam search under every frame plan,
/// merged by best log-probability.
pub fn rank_sequences(
    spec: &TaskSpec,
    model: &SeqModel<f32>,
    beam: usize,
    stats: &mut SearchStats,
) -> Vec<Hypothesis> {
    let mut table = StepTable::default();
    let queries = table.queries(spec, None);
    stats.model_invocations += queries.len() as u64;
    let rows: Vec<&[f32]> = table.rows.iter().map(Vec::as_slice).collect();
    let mut best: HashMap<Vec<OpCode>, f64> = HashMap::new();
    for lp in model.log_probs_shared(&rows, &queries) {
        for h in model.beam_from_log_probs(&lp, beam) {
            let e = best.entry(h.ops).or_insert(f64::NEG_INFINITY);
            *e = e.max(h.log_prob);
        }
    }
    let mut ranked: Vec<Hypothesis> = best
        .into_iter()
        .map(|(ops, log_prob)| Hypothesis { ops, log_prob })
        .collect();
    ranked.sort_by(|a, b| {
        b.log_prob.total_cmp(&a.log_prob).then_with(|| {
            let an: Vec<&str> = a.ops.iter().map(|o| o.name()).collect();
            let bn: Vec<&str> = b.ops.iter().map(|o| o.name()).collect();
            an.cmp(&bn)
        })
    });
    ranked
}

/// Predicts whole op sequences and searches only over their arguments and
/// parameters, trying sequences in rank order.
pub fn synth_full_seq(spec: &TaskSpec, model: &SeqModel<f32>, limits: &Limits) -> SearchResult {
    let deadline = Deadline::new(limits);
    let mut stats = SearchStats::default();
    if let Some(e) = base_hit(spec) {
        return finish(Status::Found, Some(e), stats, &deadline);
    }
    let base = base_values(spec);
    let filler = Filler {
        spec,
        base: base.values,
        literals: base.literals,
        deadline: &deadline,
    };
    for hyp in rank_sequences(spec, model, limits.beam_width, &mut stats) {
        match filler.run_sequence(&hyp.ops, &mut stats) {
            Ok(Some(program)) => return finish(Status::Found, Some(program), stats, &deadline),
            Ok(None) => {}
            Err(status) => return finish(status, None, stats, &deadline),
        }
    }
    if limits.fallback {
        return fallback(spec, model, limits, &deadline, stats);
    }
    finish(Status::NotFound, None, stats, &deadline)
}

struct Node {
    log_prob: f64,
    order: u64,
    depth: usize,
    value: Option<(Expr, Tensor)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: higher log-prob first, then earlier insertion
        self.log_prob
            .total_cmp(&other.log_prob)
            .then(other.order.cmp(&self.order))
    }
}

/// Frames for predicting the next op from a state: the current value (if
/// any) followed by ordered selections of the inputs.
/// Best-first search that predicts one op at a time from the concrete
/// intermediate value, executes it and re-queries the model.
pub fn synth_first_of_seq(spec: &TaskSpec, model: &SeqModel<f32>, limits: &Limits) -> SearchResult {
    let deadline = Deadline::new(limits);
    let mut stats = SearchStats::default();
    if let Some(e) = base_hit(spec) {
        return finish(Status::Found, Some(e), stats, &deadline);
    }
    let base = base_values(spec);
    let filler = Filler {
        spec,
        base: base.values,
        literals: base.literals,
        deadline: &deadline,
    };
    let mut order = 0u64;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        log_prob: 0.0,
        order,
        depth: 0,
        value: None,
    });
    let mut visited: HashSet<Tensor> = filler.base.iter().map(|(_, v)| v.clone()).collect();
    let mut expansions = 0usize;
    while let Some(node) = heap.pop() {
        if expansions >= limits.node_budget {
            break;
        }
        if deadline.expired() {
            return finish(Status::Timeout, None, stats, &deadline);
        }
        let mut table = StepTable::default();
        let queries = table.queries(spec, node.value.as_ref().map(|(_, v)| v));
        if queries.is_empty() {
            continue;
        }
        expansions += 1;
        stats.model_invocations += 1;
        let rows: Vec<&[f32]> = table.rows.iter().map(Vec::as_slice).collect();
        let mut scores = vec![0.0f64; model.registry.len()];
        for lp in model.log_probs_shared(&rows, &queries) {
            for (op, p) in model.first_from_log_probs(&lp[0], model.registry.len()) {
                let k = model.registry.index_of(op).expect("registry op");
                scores[k] = scores[k].max(p);
            }
        }
        let mut ranked: Vec<(OpCode, f64)> =
            model.registry.ops().iter().copied().zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.name().cmp(b.0.name())));
        for (op, p) in ranked.into_iter().take(limits.beam_width.max(1)) {
            let mut hit = None;
            let mut children = Vec::new();
            let flow = filler.fill(op, node.value.as_ref(), &mut stats, |expr, value| {
                if value == spec.output {
                    hit = Some(expr);
                    return Flow::Stop;
                }
                if !visited.contains(&value) {
                    visited.insert(value.clone());
                    children.push((expr, value));
                }
                Flow::Continue
            });
            match flow {
                Err(status) => return finish(status, None, stats, &deadline),
                Ok(Flow::Stop) => return finish(Status::Found, hit, stats, &deadline),
                Ok(Flow::Continue) => {}
            }
            if node.depth + 1 < limits.max_steps {
                let log_prob = node.log_prob + p.max(f64::MIN_POSITIVE).ln();
                for child in children {
                    order += 1;
                    heap.push(Node {
                        log_prob,
                        order,
                        depth: node.depth + 1,
                        value: Some(child),
                    });
                }
            }
        }
    }
    if limits.fallback {
        return fallback(spec, model, limits, &deadline, stats);
    }
    finish(Status::NotFound, None, stats, &deadline)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_counts() {
        assert_eq!(frame_plans(1).len(), 2);
        assert_eq!(frame_plans(2).len(), 16);
        for p in frame_plans(3) {
            assert!((0..3).all(|i| p.first.contains(&i) || p.second.contains(&i)));
            assert!(p.second.len() <= 2);
        }
    }

    #[test]
    fn arrangement_order() {
        assert_eq!(
            arrangements(2, 0, 2),
            vec![vec![], vec![0], vec![1], vec![0, 1], vec![1, 0]]
        );
    }
}

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::TaskSpec;
use crate::expr::Expr;
use crate::ops::{Literal, OpCode, ParamKind};
use crate::tensor::{Tensor, MAX_RANK};

/// Integer constants every search starts with.
pub const CONSTANTS: [i64; 5] = [0, -1, 1, 2, 3];

/// Starting values of a search: tensor-valued leaves and the integer literals
/// that may fill axis and shape parameters.
#[derive(Clone, Debug)]
pub struct BaseValues {
    /// Inputs first, then constants not equal to any input.
    pub values: Vec<(Expr, Tensor)>,
    /// Constants, then every distinct dimension extent and rank of the inputs
    /// and output, deduplicated.
    pub literals: Vec<i64>,
}

pub fn base_values(spec: &TaskSpec) -> BaseValues {
    let mut values: Vec<(Expr, Tensor)> = Vec::new();
    for (i, t) in spec.inputs.iter().enumerate() {
        if !values.iter().any(|(_, v)| v == t) {
            values.push((Expr::Input(i), t.clone()));
        }
    }
    for c in CONSTANTS {
        let t = Tensor::scalar(c);
        if !values.iter().any(|(_, v)| *v == t) {
            values.push((Expr::Const(c), t));
        }
    }
    let mut literals: Vec<i64> = CONSTANTS.to_vec();
    let mut extra: Vec<i64> = spec
        .inputs
        .iter()
        .chain(std::iter::once(&spec.output))
        .flat_map(|t| {
            t.shape()
                .iter()
                .map(|&d| d as i64)
                .chain(std::iter::once(t.rank() as i64))
                .collect::<Vec<_>>()
        })
        .filter(|v| !CONSTANTS.contains(v))
        .collect();
    extra.sort_unstable();
    extra.dedup();
    literals.extend(extra);
    BaseValues { values, literals }
}

fn axis_candidates(literals: &[i64], rank: usize) -> Vec<i64> {
    let r = rank.max(1) as i64;
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for &l in literals {
        if l >= -r && l < r {
            let norm = if l < 0 { l + r } else { l };
            if !seen.contains(&norm) {
                seen.push(norm);
                out.push(l);
            }
        }
    }
    out
}

fn insert_axis_candidates(literals: &[i64], rank: usize) -> Vec<i64> {
    let r = rank as i64 + 1;
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for &l in literals {
        if l >= -r && l < r {
            let norm = if l < 0 { l + r } else { l };
            if !seen.contains(&norm) {
                seen.push(norm);
                out.push(l);
            }
        }
    }
    out
}

fn shape_candidates(arg: &[usize], literals: &[i64], output: &Tensor) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut push = |s: Vec<usize>| {
        if s.len() <= MAX_RANK && s.as_slice() != arg && !out.contains(&s) {
            out.push(s);
        }
    };
    push(output.shape().to_vec());
    let positive: Vec<usize> = literals
        .iter()
        .filter(|&&l| l > 1)
        .map(|&l| l as usize)
        .collect();
    for &d in &positive {
        let mut s = vec![d];
        s.extend_from_slice(arg);
        push(s);
    }
    for (k, &extent) in arg.iter().enumerate() {
        if extent == 1 {
            for &d in &positive {
                let mut s = arg.to_vec();
                s[k] = d;
                push(s);
            }
        }
    }
    out
}

/// Parameter tuples to try for `op` given its tensor arguments. Axes that
/// normalize to the same position are tried once; transposes only try each
/// unordered pair of distinct axes.
pub fn param_candidates(
    op: OpCode,
    args: &[&Tensor],
    literals: &[i64],
    output: &Tensor,
) -> Vec<Vec<Literal>> {
    let schema = op.param_schema();
    if schema.is_empty() {
        return vec![vec![]];
    }
    let rank = args[0].rank();
    match op {
        OpCode::Transpose => {
            let axes = axis_candidates(literals, rank);
            let r = rank.max(1) as i64;
            let norm = |l: i64| if l < 0 { l + r } else { l };
            let mut out = Vec::new();
            for (i, &a) in axes.iter().enumerate() {
                for &b in &axes[i + 1..] {
                    if norm(a) != norm(b) {
                        out.push(vec![Literal::Int(a), Literal::Int(b)]);
                    }
                }
            }
            out
        }
        OpCode::Any => axis_candidates(literals, rank)
            .into_iter()
            .map(|a| vec![Literal::Int(a)])
            .collect(),
        OpCode::Unsqueeze | OpCode::Stack => insert_axis_candidates(literals, rank)
            .into_iter()
            .map(|a| vec![Literal::Int(a)])
            .collect(),
        OpCode::Expand => shape_candidates(args[0].shape(), literals, output)
            .into_iter()
            .map(|s| vec![Literal::Shape(s)])
            .collect(),
        _ => {
            debug_assert!(schema.iter().all(|k| *k == ParamKind::Axis));
            vec![vec![]]
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum PoolNode {
    Base(Expr),
    Call {
        op: OpCode,
        args: Vec<usize>,
        params: Vec<Literal>,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct PoolEntry {
    pub value: Rc<Tensor>,
    pub node: PoolNode,
    pub cost: u32,
}

/// Distinct values discovered so far, each with its cheapest expression.
#[derive(Debug, Default)]
pub struct ValuePool {
    entries: Vec<PoolEntry>,
    index: HashMap<Rc<Tensor>, usize>,
    by_cost: BTreeMap<u32, Vec<usize>>,
}

impl ValuePool {
    pub fn new() -> Self {
        ValuePool::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        self.index.contains_key(t)
    }

    pub(crate) fn entry(&self, id: usize) -> &PoolEntry {
        &self.entries[id]
    }

    pub(crate) fn ids_with_cost(&self, cost: u32) -> &[usize] {
        self.by_cost.get(&cost).map_or(&[], Vec::as_slice)
    }

    /// Inserts a value unless already present. Returns the new id.
    pub(crate) fn insert(&mut self, value: Tensor, node: PoolNode, cost: u32) -> Option<usize> {
        if self.index.contains_key(&value) {
            return None;
        }
        let id = self.entries.len();
        let value = Rc::new(value);
        self.index.insert(Rc::clone(&value), id);
        self.by_cost.entry(cost).or_default().push(id);
        self.entries.push(PoolEntry { value, node, cost });
        Some(id)
    }

    pub fn lookup(&self, t: &Tensor) -> Option<(Expr, u32)> {
        self.index
            .get(t)
            .map(|&id| (self.expr(id), self.entries[id].cost))
    }

    /// Rebuilds the expression tree of an entry.
    pub fn expr(&self, id: usize) -> Expr {
        match &self.entries[id].node {
            PoolNode::Base(e) => e.clone(),
            PoolNode::Call { op, args, params } => Expr::Call {
                op: *op,
                args: args.iter().map(|&a| self.expr(a)).collect(),
                params: params.clone(),
            },
        }
    }

    /// `(value, expression, recorded cost)` for every entry, in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, Expr, u32)> + '_ {
        (0..self.entries.len()).map(|id| {
            (
                &*self.entries[id].value,
                self.expr(id),
                self.entries[id].cost,
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_include_dims() {
        let spec = TaskSpec::new(
            vec![Tensor::int(&[3, 2], &[0; 6]).unwrap()],
            Tensor::int(&[2, 3, 2], &[0; 12]).unwrap(),
        )
        .unwrap();
        let base = base_values(&spec);
        assert!(base.literals.contains(&3));
        assert!(base.literals.contains(&2));
        let mut sorted = base.literals.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), base.literals.len());
        assert!(base.values.len() >= 6);
        assert_eq!(base.values[0].0, Expr::Input(0));
    }

    #[test]
    fn scalar_inputs_shadow_constants() {
        let spec = TaskSpec::new(
            vec![Tensor::vector(&[5]), Tensor::scalar(1)],
            Tensor::scalar(0),
        )
        .unwrap();
        let base = base_values(&spec);
        assert_eq!(base.values.len(), 2 + 4);
        assert!(!base.values.iter().any(|(e, _)| *e == Expr::Const(1)));
    }

    #[test]
    fn param_candidates_dedupe_axes() {
        let m = Tensor::int(&[2, 3], &[0; 6]).unwrap();
        let lits = [0, -1, 1, 2, 3];
        let any = param_candidates(OpCode::Any, &[&m], &lits, &m);
        assert_eq!(any, vec![vec![Literal::Int(0)], vec![Literal::Int(-1)]]);
        let tr = param_candidates(OpCode::Transpose, &[&m], &lits, &m);
        assert_eq!(tr, vec![vec![Literal::Int(0), Literal::Int(-1)]]);
        let un = param_candidates(OpCode::Unsqueeze, &[&m], &lits, &m);
        assert_eq!(un.len(), 3);
        let v = Tensor::vector(&[1, 2, 3]);
        let exp = param_candidates(OpCode::Expand, &[&v], &[0, 1, 2, 3], &m);
        assert!(exp.contains(&vec![Literal::Shape(vec![2, 3])]));
    }

    #[test]
    fn pool_dedups_values() {
        let mut pool = ValuePool::new();
        let a = pool.insert(Tensor::scalar(1), PoolNode::Base(Expr::Const(1)), 4);
        let b = pool.insert(Tensor::scalar(1), PoolNode::Base(Expr::Input(0)), 4);
        assert_eq!(a, Some(0));
        assert_eq!(b, None);
        assert_eq!(pool.lookup(&Tensor::scalar(1)), Some((Expr::Const(1), 4)));
        assert_eq!(pool.ids_with_cost(4), &[0]);
        assert!(pool.ids_with_cost(8).is_empty());
    }
}

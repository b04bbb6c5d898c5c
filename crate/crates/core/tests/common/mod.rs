//! Independent brute-force oracle over programs of depth at most two.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use tensynth::ops::ParamKind;
use tensynth::{apply, Expr, Literal, OpCode, TaskSpec, Tensor};

pub const LEAVES: [i64; 5] = [0, -1, 1, 2, 3];

pub fn op_cost(op: OpCode) -> u32 {
    match op.name() {
        "stack" | "tensordot" => 36,
        "where" | "masked_select" | "matmul" | "expand" | "bincount" => 28,
        _ => 20,
    }
}

fn leaves(spec: &TaskSpec) -> Vec<(Expr, Tensor, u32)> {
    let mut out: Vec<(Expr, Tensor, u32)> = spec
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| (Expr::Input(i), t.clone(), 4))
        .collect();
    out.extend(
        LEAVES
            .iter()
            .map(|&c| (Expr::Const(c), Tensor::scalar(c), 4)),
    );
    out
}

fn param_tuples(op: OpCode) -> Vec<Vec<Literal>> {
    let mut out = vec![vec![]];
    for kind in op.param_schema() {
        assert_eq!(
            *kind,
            ParamKind::Axis,
            "oracle only handles axis parameters"
        );
        out = out
            .into_iter()
            .flat_map(|p| {
                (-4..=3).map(move |a| {
                    let mut q = p.clone();
                    q.push(Literal::Int(a));
                    q
                })
            })
            .collect();
    }
    out
}

/// Every argument tuple of length `arity` over `pool`.
fn tuples(pool_len: usize, arity: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..pool_len).map(move |i| {
                    let mut u = t.clone();
                    u.push(i);
                    u
                })
            })
            .collect();
    }
    out
}

/// One level of calls: each op applied to every tuple from `pool` in which
/// at least one argument index is `>= fresh_from`.
fn level(
    pool: &[(Expr, Tensor, u32)],
    fresh_from: usize,
    ops: &[OpCode],
) -> Vec<(Expr, Tensor, u32)> {
    let mut out = Vec::new();
    for &op in ops {
        for args in tuples(pool.len(), op.arity()) {
            if !args.iter().any(|&i| i >= fresh_from) {
                continue;
            }
            let tensors: Vec<&Tensor> = args.iter().map(|&i| &pool[i].1).collect();
            for params in param_tuples(op) {
                let Ok(v) = apply(op, &tensors, &params) else {
                    continue;
                };
                let cost = op_cost(op)
                    + args.iter().map(|&i| pool[i].2).sum::<u32>()
                    + 4 * params.len() as u32;
                let expr = Expr::call(
                    op,
                    args.iter().map(|&i| pool[i].0.clone()).collect(),
                    params,
                );
                out.push((expr, v, cost));
            }
        }
    }
    out
}

/// All values reachable with depth at most two and the cheapest program for
/// each. Leaves are the inputs and the fixed constants.
pub fn reachable(spec: &TaskSpec, ops: &[OpCode]) -> HashMap<Tensor, (Expr, u32)> {
    let mut best: HashMap<Tensor, (Expr, u32)> = HashMap::new();
    let keep = |list: &[(Expr, Tensor, u32)], best: &mut HashMap<Tensor, (Expr, u32)>| {
        for (e, t, c) in list {
            match best.get(t) {
                Some((_, old)) if *old <= *c => {}
                _ => {
                    best.insert(t.clone(), (e.clone(), *c));
                }
            }
        }
    };
    let l0 = leaves(spec);
    keep(&l0, &mut best);
    let l1 = level(&l0, 0, ops);
    keep(&l1, &mut best);
    let mut pool = l0.clone();
    let fresh = pool.len();
    pool.extend(l1);
    keep(&level(&pool, fresh, ops), &mut best);
    best
}

pub fn brute_force(spec: &TaskSpec, ops: &[OpCode]) -> Option<(Expr, u32)> {
    reachable(spec, ops).remove(&spec.output)
}

fn random_input<R: Rng>(rng: &mut R) -> Tensor {
    let shape: &[usize] = [&[3][..], &[2, 2][..], &[2, 3][..], &[1, 3][..]]
        .choose(rng)
        .unwrap();
    let n: usize = shape.iter().product();
    let data: Vec<i64> = (0..n).map(|_| rng.gen_range(-2..5)).collect();
    Tensor::int(shape, &data).unwrap()
}

/// A spec whose output is a random non-input value reachable at depth two.
pub fn random_spec<R: Rng>(ops: &[OpCode], rng: &mut R) -> TaskSpec {
    loop {
        let inputs: Vec<Tensor> = (0..rng.gen_range(1..=2))
            .map(|_| random_input(rng))
            .collect();
        let probe = TaskSpec {
            inputs: inputs.clone(),
            output: Tensor::scalar(0),
        };
        let mut values: Vec<Tensor> = reachable(&probe, ops)
            .into_iter()
            .filter(|(t, (e, _))| {
                matches!(e, Expr::Call { .. }) && !inputs.contains(t) && t.numel() > 1
            })
            .map(|(t, _)| t)
            .collect();
        if values.is_empty() {
            continue;
        }
        values.sort();
        let output = values.choose(rng).unwrap().clone();
        return TaskSpec { inputs, output };
    }
}

pub fn depth(e: &Expr) -> usize {
    match e {
        Expr::Call { args, .. } => 1 + args.iter().map(depth).max().unwrap_or(0),
        _ => 0,
    }
}

pub fn micro_registries() -> Vec<Vec<OpCode>> {
    ["add,mul", "mul,eq,unsqueeze", "add,gt,transpose"]
        .iter()
        .map(|s| tensynth::Registry::parse(s).unwrap().ops().to_vec())
        .collect()
}

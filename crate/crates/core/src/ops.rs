//! The API operation registry and the semantics of each operation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{broadcast_index_map, broadcast_shapes, DType, Tensor, MAX_RANK};

/// Largest dimension extent any operation may produce.
pub const MAX_EXTENT: usize = 64;
/// Largest element count any operation may produce.
pub const MAX_NUMEL: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpCode {
    Add,
    Any,
    Bincount,
    Eq,
    Expand,
    Gt,
    Lt,
    MaskedSelect,
    Matmul,
    Mul,
    Ne,
    Stack,
    Tensordot,
    Transpose,
    Unsqueeze,
    Where,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Axis,
    ShapeTuple,
}

/// A non-tensor parameter value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Shape(Vec<usize>),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Shape(dims) => {
                f.write_str("(")?;
                for (i, d) in dims.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{d}")?;
                }
                if dims.len() == 1 {
                    f.write_str(",")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpError {
    #[error("{op}: expected {expected} tensor args and {params} params")]
    Arity {
        op: OpCode,
        expected: usize,
        params: usize,
    },
    #[error("{0}: shapes do not match")]
    ShapeMismatch(OpCode),
    #[error("{0}: axis {1} out of range")]
    AxisOutOfRange(OpCode, i64),
    #[error("{0}: result rank exceeds {MAX_RANK}")]
    RankOverflow(OpCode),
    #[error("{0}: unsupported dtype")]
    DtypeMismatch(OpCode),
    #[error("{0}: {1}")]
    ValueError(OpCode, &'static str),
    #[error("{0}: result exceeds size limits")]
    SizeLimit(OpCode),
}

pub const ALL_OPS: [OpCode; 16] = [
    OpCode::Add,
    OpCode::Any,
    OpCode::Bincount,
    OpCode::Eq,
    OpCode::Expand,
    OpCode::Gt,
    OpCode::Lt,
    OpCode::MaskedSelect,
    OpCode::Matmul,
    OpCode::Mul,
    OpCode::Ne,
    OpCode::Stack,
    OpCode::Tensordot,
    OpCode::Transpose,
    OpCode::Unsqueeze,
    OpCode::Where,
];

impl OpCode {
    pub fn name(self) -> &'static str {
        match self {
            OpCode::Add => "add",
            OpCode::Any => "any",
            OpCode::Bincount => "bincount",
            OpCode::Eq => "eq",
            OpCode::Expand => "expand",
            OpCode::Gt => "gt",
            OpCode::Lt => "lt",
            OpCode::MaskedSelect => "masked_select",
            OpCode::Matmul => "matmul",
            OpCode::Mul => "mul",
            OpCode::Ne => "ne",
            OpCode::Stack => "stack",
            OpCode::Tensordot => "tensordot",
            OpCode::Transpose => "transpose",
            OpCode::Unsqueeze => "unsqueeze",
            OpCode::Where => "where",
        }
    }

    /// Number of tensor argument slots.
    pub fn arity(self) -> usize {
        match self {
            OpCode::Any
            | OpCode::Bincount
            | OpCode::Expand
            | OpCode::Transpose
            | OpCode::Unsqueeze => 1,
            OpCode::Where => 3,
            _ => 2,
        }
    }

    pub fn param_schema(self) -> &'static [ParamKind] {
        match self {
            OpCode::Any | OpCode::Stack | OpCode::Unsqueeze => &[ParamKind::Axis],
            OpCode::Transpose => &[ParamKind::Axis, ParamKind::Axis],
            OpCode::Expand => &[ParamKind::ShapeTuple],
            _ => &[],
        }
    }

    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            OpCode::Add | OpCode::Mul | OpCode::Eq | OpCode::Gt | OpCode::Lt | OpCode::Ne
        )
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown operation `{0}`")]
pub struct UnknownOp(pub String);

impl FromStr for OpCode {
    type Err = UnknownOp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_OPS
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| UnknownOp(s.to_string()))
    }
}

/// An ordered set of operations. Order fixes search tie-breaking and model
/// class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    ops: Vec<OpCode>,
}

impl Registry {
    pub fn core16() -> Self {
        Registry {
            ops: ALL_OPS.to_vec(),
        }
    }

    /// Builds a registry from op names, keeping the canonical op order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, UnknownOp> {
        let mut ops = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<OpCode>, _>>()?;
        ops.sort();
        ops.dedup();
        Ok(Registry { ops })
    }

    /// Parses `core16` or a comma-separated op list.
    pub fn parse(spec: &str) -> Result<Self, UnknownOp> {
        if spec == "core16" {
            return Ok(Registry::core16());
        }
        let names: Vec<&str> = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        Registry::from_names(&names)
    }

    pub fn ops(&self) -> &[OpCode] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn index_of(&self, op: OpCode) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }

    pub fn contains(&self, op: OpCode) -> bool {
        self.ops.contains(&op)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ops.iter().map(|o| o.name()).collect()
    }

    /// Short stable digest of the op list, stored alongside model weights.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for op in &self.ops {
            hasher.update(op.name().as_bytes());
            hasher.update(b",");
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_size(op: OpCode, shape: &[usize]) -> Result<(), OpError> {
    if shape.len() > MAX_RANK {
        return Err(OpError::RankOverflow(op));
    }
    if shape.iter().any(|&d| d > MAX_EXTENT) || shape.iter().product::<usize>() > MAX_NUMEL {
        return Err(OpError::SizeLimit(op));
    }
    Ok(())
}

fn norm_axis(op: OpCode, axis: i64, rank: usize) -> Result<usize, OpError> {
    // Rank-0 tensors accept axes -1 and 0, as the reference library does.
    let r = rank.max(1) as i64;
    if axis < -r || axis >= r {
        return Err(OpError::AxisOutOfRange(op, axis));
    }
    Ok(if axis < 0 {
        (axis + r) as usize
    } else {
        axis as usize
    })
}

fn int_param(op: OpCode, p: &Literal) -> Result<i64, OpError> {
    match p {
        Literal::Int(v) => Ok(*v),
        Literal::Shape(_) => Err(OpError::ValueError(op, "expected an integer parameter")),
    }
}

/// Applies `op` to tensor arguments and literal parameters. Never mutates
/// its inputs; every invalid combination surfaces as an [`OpError`].
pub fn apply(op: OpCode, args: &[&Tensor], params: &[Literal]) -> Result<Tensor, OpError> {
    if args.len() != op.arity() || params.len() != op.param_schema().len() {
        return Err(OpError::Arity {
            op,
            expected: op.arity(),
            params: op.param_schema().len(),
        });
    }
    let out = match op {
        OpCode::Add | OpCode::Mul => arith(op, args[0], args[1])?,
        OpCode::Eq | OpCode::Gt | OpCode::Lt | OpCode::Ne => compare(op, args[0], args[1])?,
        OpCode::Any => any(args[0], int_param(op, &params[0])?)?,
        OpCode::Bincount => bincount(args[0])?,
        OpCode::Expand => match &params[0] {
            Literal::Shape(dims) => expand(args[0], dims)?,
            Literal::Int(_) => return Err(OpError::ValueError(op, "expected a shape tuple")),
        },
        OpCode::MaskedSelect => masked_select(args[0], args[1])?,
        OpCode::Matmul => matmul(args[0], args[1])?,
        OpCode::Stack => stack(args[0], args[1], int_param(op, &params[0])?)?,
        OpCode::Tensordot => tensordot(args[0], args[1])?,
        OpCode::Transpose => transpose(
            args[0],
            int_param(op, &params[0])?,
            int_param(op, &params[1])?,
        )?,
        OpCode::Unsqueeze => unsqueeze(args[0], int_param(op, &params[0])?)?,
        OpCode::Where => where_(args[0], args[1], args[2])?,
    };
    check_size(op, out.shape())?;
    Ok(out)
}

fn zip_broadcast(
    op: OpCode,
    a: &Tensor,
    b: &Tensor,
    mut f: impl FnMut(i64, i64) -> Option<i64>,
) -> Result<(Vec<usize>, Vec<i64>), OpError> {
    let shape = broadcast_shapes(a.shape(), b.shape()).ok_or(OpError::ShapeMismatch(op))?;
    check_size(op, &shape)?;
    let ia = broadcast_index_map(a.shape(), &shape);
    let ib = broadcast_index_map(b.shape(), &shape);
    let data = ia
        .iter()
        .zip(&ib)
        .map(|(&i, &j)| {
            f(a.data()[i], b.data()[j]).ok_or(OpError::ValueError(op, "integer overflow"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((shape, data))
}

fn arith(op: OpCode, a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    let both_bool = a.dtype() == DType::Bool && b.dtype() == DType::Bool;
    let (shape, data) = match (op, both_bool) {
        (OpCode::Add, true) => zip_broadcast(op, a, b, |x, y| Some(x | y))?,
        (OpCode::Mul, true) => zip_broadcast(op, a, b, |x, y| Some(x & y))?,
        (OpCode::Add, false) => zip_broadcast(op, a, b, i64::checked_add)?,
        _ => zip_broadcast(op, a, b, i64::checked_mul)?,
    };
    let dtype = if both_bool { DType::Bool } else { DType::Int };
    Ok(Tensor::from_parts(dtype, shape, data))
}

fn compare(op: OpCode, a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    let cmp: fn(i64, i64) -> bool = match op {
        OpCode::Eq => |x, y| x == y,
        OpCode::Ne => |x, y| x != y,
        OpCode::Gt => |x, y| x > y,
        _ => |x, y| x < y,
    };
    let (shape, data) = zip_broadcast(op, a, b, |x, y| Some(i64::from(cmp(x, y))))?;
    Ok(Tensor::from_parts(DType::Bool, shape, data))
}

fn any(t: &Tensor, axis: i64) -> Result<Tensor, OpError> {
    let op = OpCode::Any;
    if t.dtype() != DType::Bool {
        return Err(OpError::DtypeMismatch(op));
    }
    let axis = norm_axis(op, axis, t.rank())?;
    if t.is_scalar() {
        return Ok(t.clone());
    }
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let hit = (0..len).any(|k| t.data()[(o * len + k) * inner + i] != 0);
            data.push(i64::from(hit));
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Ok(Tensor::from_parts(DType::Bool, out_shape, data))
}

fn bincount(t: &Tensor) -> Result<Tensor, OpError> {
    let op = OpCode::Bincount;
    if t.dtype() != DType::Int {
        return Err(OpError::DtypeMismatch(op));
    }
    if t.rank() != 1 {
        return Err(OpError::ShapeMismatch(op));
    }
    if t.data().iter().any(|&v| v < 0) {
        return Err(OpError::ValueError(op, "negative values"));
    }
    let max = *t.data().iter().max().expect("non-empty") as usize;
    if max >= MAX_NUMEL {
        return Err(OpError::SizeLimit(op));
    }
    let mut counts = vec![0i64; max + 1];
    for &v in t.data() {
        counts[v as usize] += 1;
    }
    Ok(Tensor::from_parts(DType::Int, vec![max + 1], counts))
}

fn expand(t: &Tensor, target: &[usize]) -> Result<Tensor, OpError> {
    let op = OpCode::Expand;
    if target.len() > MAX_RANK {
        return Err(OpError::RankOverflow(op));
    }
    if target.len() < t.rank() || target.contains(&0) {
        return Err(OpError::ShapeMismatch(op));
    }
    let offset = target.len() - t.rank();
    for (k, &d) in t.shape().iter().enumerate() {
        if d != 1 && d != target[k + offset] {
            return Err(OpError::ShapeMismatch(op));
        }
    }
    check_size(op, target)?;
    let data = broadcast_index_map(t.shape(), target)
        .into_iter()
        .map(|i| t.data()[i])
        .collect();
    Ok(Tensor::from_parts(t.dtype(), target.to_vec(), data))
}

fn masked_select(t: &Tensor, mask: &Tensor) -> Result<Tensor, OpError> {
    let op = OpCode::MaskedSelect;
    if mask.dtype() != DType::Bool {
        return Err(OpError::DtypeMismatch(op));
    }
    let shape = broadcast_shapes(t.shape(), mask.shape()).ok_or(OpError::ShapeMismatch(op))?;
    check_size(op, &shape)?;
    let it = broadcast_index_map(t.shape(), &shape);
    let im = broadcast_index_map(mask.shape(), &shape);
    let data: Vec<i64> = it
        .iter()
        .zip(&im)
        .filter(|(_, &j)| mask.data()[j] != 0)
        .map(|(&i, _)| t.data()[i])
        .collect();
    if data.is_empty() {
        return Err(OpError::ValueError(op, "empty selection"));
    }
    Ok(Tensor::from_parts(t.dtype(), vec![data.len()], data))
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    let op = OpCode::Matmul;
    if a.dtype() != DType::Int || b.dtype() != DType::Int {
        return Err(OpError::DtypeMismatch(op));
    }
    if a.rank() == 0 || b.rank() == 0 {
        return Err(OpError::ShapeMismatch(op));
    }
    // Promote vectors to matrices, remembering which axes to drop afterwards.
    let (a_shape, drop_rows) = if a.rank() == 1 {
        (vec![1, a.shape()[0]], true)
    } else {
        (a.shape().to_vec(), false)
    };
    let (b_shape, drop_cols) = if b.rank() == 1 {
        (vec![b.shape()[0], 1], true)
    } else {
        (b.shape().to_vec(), false)
    };
    let (n, m) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
    let (m2, p) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
    if m != m2 {
        return Err(OpError::ShapeMismatch(op));
    }
    let a_batch = &a_shape[..a_shape.len() - 2];
    let b_batch = &b_shape[..b_shape.len() - 2];
    let batch = broadcast_shapes(a_batch, b_batch).ok_or(OpError::ShapeMismatch(op))?;
    let mut out_shape = batch.clone();
    if !drop_rows {
        out_shape.push(n);
    }
    if !drop_cols {
        out_shape.push(p);
    }
    check_size(op, &out_shape)?;
    let batch_numel: usize = batch.iter().product();
    let a_map = broadcast_index_map(a_batch, &batch);
    let b_map = broadcast_index_map(b_batch, &batch);
    let mut data = Vec::with_capacity(batch_numel * n * p);
    for bi in 0..batch_numel {
        let a_off = a_map[bi] * n * m;
        let b_off = b_map[bi] * m * p;
        for i in 0..n {
            for j in 0..p {
                let mut acc: i64 = 0;
                for k in 0..m {
                    let prod = a.data()[a_off + i * m + k]
                        .checked_mul(b.data()[b_off + k * p + j])
                        .ok_or(OpError::ValueError(op, "integer overflow"))?;
                    acc = acc
                        .checked_add(prod)
                        .ok_or(OpError::ValueError(op, "integer overflow"))?;
                }
                data.push(acc);
            }
        }
    }
    Ok(Tensor::from_parts(DType::Int, out_shape, data))
}

fn stack(a: &Tensor, b: &Tensor, axis: i64) -> Result<Tensor, OpError> {
    let op = OpCode::Stack;
    if a.shape() != b.shape() {
        return Err(OpError::ShapeMismatch(op));
    }
    if a.dtype() != b.dtype() {
        return Err(OpError::DtypeMismatch(op));
    }
    if a.rank() + 1 > MAX_RANK {
        return Err(OpError::RankOverflow(op));
    }
    let r = a.rank() as i64 + 1;
    if axis < -r || axis >= r {
        return Err(OpError::AxisOutOfRange(op, axis));
    }
    let axis = if axis < 0 {
        (axis + r) as usize
    } else {
        axis as usize
    };
    let outer: usize = a.shape()[..axis].iter().product();
    let inner: usize = a.shape()[axis..].iter().product();
    let mut data = Vec::with_capacity(2 * a.numel());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * inner..(o + 1) * inner]);
        data.extend_from_slice(&b.data()[o * inner..(o + 1) * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape.insert(axis, 2);
    check_size(op, &shape)?;
    Ok(Tensor::from_parts(a.dtype(), shape, data))
}

fn tensordot(a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    let op = OpCode::Tensordot;
    if a.dtype() != DType::Int || b.dtype() != DType::Int {
        return Err(OpError::DtypeMismatch(op));
    }
    if a.rank() == 0 || b.rank() == 0 {
        return Err(OpError::ShapeMismatch(op));
    }
    let m = *a.shape().last().expect("rank >= 1");
    if b.shape()[0] != m {
        return Err(OpError::ShapeMismatch(op));
    }
    let mut shape = a.shape()[..a.rank() - 1].to_vec();
    shape.extend_from_slice(&b.shape()[1..]);
    if shape.len() > MAX_RANK {
        return Err(OpError::RankOverflow(op));
    }
    check_size(op, &shape)?;
    let rows = a.numel() / m;
    let cols = b.numel() / m;
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut acc: i64 = 0;
            for k in 0..m {
                let prod = a.data()[i * m + k]
                    .checked_mul(b.data()[k * cols + j])
                    .ok_or(OpError::ValueError(op, "integer overflow"))?;
                acc = acc
                    .checked_add(prod)
                    .ok_or(OpError::ValueError(op, "integer overflow"))?;
            }
            data.push(acc);
        }
    }
    Ok(Tensor::from_parts(DType::Int, shape, data))
}

fn transpose(t: &Tensor, d0: i64, d1: i64) -> Result<Tensor, OpError> {
    let op = OpCode::Transpose;
    let d0 = norm_axis(op, d0, t.rank())?;
    let d1 = norm_axis(op, d1, t.rank())?;
    if d0 == d1 || t.is_scalar() {
        return Ok(t.clone());
    }
    let mut shape = t.shape().to_vec();
    shape.swap(d0, d1);
    let src_strides = t.strides();
    let mut perm_strides = src_strides.clone();
    perm_strides.swap(d0, d1);
    let mut data = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..t.numel() {
        let src: usize = idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum();
        data.push(t.data()[src]);
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(Tensor::from_parts(t.dtype(), shape, data))
}

fn unsqueeze(t: &Tensor, axis: i64) -> Result<Tensor, OpError> {
    let op = OpCode::Unsqueeze;
    let r = t.rank() as i64 + 1;
    if axis < -r || axis >= r {
        return Err(OpError::AxisOutOfRange(op, axis));
    }
    if t.rank() + 1 > MAX_RANK {
        return Err(OpError::RankOverflow(op));
    }
    let axis = if axis < 0 {
        (axis + r) as usize
    } else {
        axis as usize
    };
    let mut shape = t.shape().to_vec();
    shape.insert(axis, 1);
    Ok(Tensor::from_parts(t.dtype(), shape, t.data().to_vec()))
}

fn where_(cond: &Tensor, x: &Tensor, y: &Tensor) -> Result<Tensor, OpError> {
    let op = OpCode::Where;
    if cond.dtype() != DType::Bool || x.dtype() != y.dtype() {
        return Err(OpError::DtypeMismatch(op));
    }
    let shape = broadcast_shapes(cond.shape(), x.shape())
        .and_then(|s| broadcast_shapes(&s, y.shape()))
        .ok_or(OpError::ShapeMismatch(op))?;
    check_size(op, &shape)?;
    let ic = broadcast_index_map(cond.shape(), &shape);
    let ix = broadcast_index_map(x.shape(), &shape);
    let iy = broadcast_index_map(y.shape(), &shape);
    let data = (0..ic.len())
        .map(|k| {
            if cond.data()[ic[k]] != 0 {
                x.data()[ix[k]]
            } else {
                y.data()[iy[k]]
            }
        })
        .collect();
    Ok(Tensor::from_parts(x.dtype(), shape, data))
}

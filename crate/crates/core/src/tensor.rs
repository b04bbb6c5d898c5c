//! Dense integer/boolean tensors, the value domain of every program.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum tensor rank anywhere in the system.
pub const MAX_RANK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Int,
    Bool,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Int => f.write_str("int"),
            DType::Bool => f.write_str("bool"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("rank {0} exceeds the maximum of {MAX_RANK}")]
    RankOverflow(usize),
    #[error("dimension extents must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("bool tensor holds non-boolean value {0}")]
    NonBoolean(i64),
    #[error("ragged nested list")]
    Ragged,
}

/// A dense row-major tensor. Bool tensors store 0/1.
///
/// Equality and hashing are structural over `(dtype, shape, data)`, which is
/// exactly the value-pool key.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<i64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = TensorError;

    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        Tensor::new(raw.dtype, raw.shape, raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            dtype: t.dtype,
            shape: t.shape,
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<i64>) -> Result<Self, TensorError> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::RankOverflow(shape.len()));
        }
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if dtype == DType::Bool {
            if let Some(&bad) = data.iter().find(|&&v| v != 0 && v != 1) {
                return Err(TensorError::NonBoolean(bad));
            }
        }
        Ok(Tensor { dtype, shape, data })
    }

    /// Builds a tensor the caller has already validated.
    pub(crate) fn from_parts(dtype: DType, shape: Vec<usize>, data: Vec<i64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(shape.len() <= MAX_RANK);
        Tensor { dtype, shape, data }
    }

    pub fn scalar(value: i64) -> Self {
        Tensor::from_parts(DType::Int, vec![], vec![value])
    }

    pub fn int(shape: &[usize], data: &[i64]) -> Result<Self, TensorError> {
        Tensor::new(DType::Int, shape.to_vec(), data.to_vec())
    }

    pub fn boolean(shape: &[usize], data: &[i64]) -> Result<Self, TensorError> {
        Tensor::new(DType::Bool, shape.to_vec(), data.to_vec())
    }

    pub fn vector(data: &[i64]) -> Self {
        Tensor::from_parts(DType::Int, vec![data.len()], data.to_vec())
    }

    /// Parses a nested JSON-style literal such as `[[1, 2], [3, 4]]`.
    pub fn from_nested(dtype: DType, value: &serde_json::Value) -> Result<Self, TensorError> {
        fn walk(
            v: &serde_json::Value,
            depth: usize,
            shape: &mut Vec<usize>,
            data: &mut Vec<i64>,
        ) -> Result<(), TensorError> {
            match v {
                serde_json::Value::Array(items) => {
                    if items.is_empty() {
                        return Err(TensorError::ZeroExtent(shape.clone()));
                    }
                    if shape.len() == depth {
                        shape.push(items.len());
                    } else if shape.len() < depth || shape[depth] != items.len() {
                        return Err(TensorError::Ragged);
                    }
                    items
                        .iter()
                        .try_for_each(|item| walk(item, depth + 1, shape, data))
                }
                serde_json::Value::Bool(b) => {
                    if shape.len() != depth {
                        return Err(TensorError::Ragged);
                    }
                    data.push(i64::from(*b));
                    Ok(())
                }
                serde_json::Value::Number(n) => {
                    if shape.len() != depth {
                        return Err(TensorError::Ragged);
                    }
                    data.push(n.as_i64().ok_or(TensorError::Ragged)?);
                    Ok(())
                }
                _ => Err(TensorError::Ragged),
            }
        }
        let mut shape = Vec::new();
        let mut data = Vec::new();
        walk(value, 0, &mut shape, &mut data)?;
        Tensor::new(dtype, shape, data)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> Option<i64> {
        self.is_scalar().then(|| self.data[0])
    }

    /// Row-major strides for the tensor's shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Renders the values as a nested list, e.g. `[[1, 0], [0, 1]]`.
    pub fn to_nested_string(&self) -> String {
        fn rec(out: &mut String, shape: &[usize], data: &[i64], bool_ty: bool) {
            if shape.is_empty() {
                if bool_ty {
                    out.push_str(if data[0] != 0 { "true" } else { "false" });
                } else {
                    out.push_str(&data[0].to_string());
                }
                return;
            }
            let step = data.len() / shape[0];
            out.push('[');
            for i in 0..shape[0] {
                if i > 0 {
                    out.push_str(", ");
                }
                rec(out, &shape[1..], &data[i * step..(i + 1) * step], bool_ty);
            }
            out.push(']');
        }
        let mut out = String::new();
        rec(&mut out, &self.shape, &self.data, self.dtype == DType::Bool);
        out
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:?}{}",
            self.dtype,
            self.shape,
            self.to_nested_string()
        )
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_nested_string())
    }
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape` (row-major), the flat index of the
/// source element in a tensor of `in_shape` broadcast to `out_shape`.
pub fn broadcast_index_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let offset = out_shape.len() - in_shape.len();
    let in_strides = strides_of(in_shape);
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        let mut src = 0;
        for (k, &d) in in_shape.iter().enumerate() {
            if d != 1 {
                src += idx[k + offset] * in_strides[k];
            }
        }
        map.push(src);
        for k in (0..out_shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < out_shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    map
}

/// Materializes `t` broadcast to `shape`.
pub fn broadcast_to(t: &Tensor, shape: &[usize]) -> Option<Tensor> {
    let target = broadcast_shapes(t.shape(), shape)?;
    if target != shape {
        return None;
    }
    let data = broadcast_index_map(t.shape(), shape)
        .into_iter()
        .map(|i| t.data[i])
        .collect();
    Some(Tensor::from_parts(t.dtype, shape.to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            Tensor::int(&[2, 2], &[1, 2, 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::int(&[1, 1, 1, 1], &[1]),
            Err(TensorError::RankOverflow(4))
        ));
        assert!(matches!(
            Tensor::int(&[0], &[]),
            Err(TensorError::ZeroExtent(_))
        ));
        assert_eq!(
            Tensor::boolean(&[2], &[0, 2]),
            Err(TensorError::NonBoolean(2))
        );
    }

    #[test]
    fn scalar_has_one_element() {
        let s = Tensor::scalar(7);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.scalar_value(), Some(7));
    }

    #[test]
    fn equality_is_structural() {
        let a = Tensor::int(&[2], &[1, 2]).unwrap();
        let b = Tensor::int(&[1, 2], &[1, 2]).unwrap();
        let c = Tensor::boolean(&[2], &[1, 0]).unwrap();
        let d = Tensor::int(&[2], &[1, 0]).unwrap();
        assert_eq!(a, a.clone());
        assert_ne!(a, b);
        assert_ne!(c, d);
    }

    #[test]
    fn textual_form_round_trips() {
        let t = Tensor::boolean(&[2, 2], &[1, 0, 0, 1]).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"dtype":"bool","shape":[2,2],"data":[1,0,0,1]}"#);
        let back: Tensor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"dtype":"int","shape":[3],"data":[1]}"#;
        assert!(serde_json::from_str::<Tensor>(bad).is_err());
    }

    #[test]
    fn nested_literal_parsing() {
        let v: serde_json::Value = serde_json::from_str("[[5, 2], [1, 3], [0, -1]]").unwrap();
        let t = Tensor::from_nested(DType::Int, &v).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[5, 2, 1, 3, 0, -1]);
        let ragged: serde_json::Value = serde_json::from_str("[[1], [2, 3]]").unwrap();
        assert_eq!(
            Tensor::from_nested(DType::Int, &ragged),
            Err(TensorError::Ragged)
        );
        assert_eq!(t.to_nested_string(), "[[5, 2], [1, 3], [0, -1]]");
    }

    #[test]
    fn broadcasting() {
        assert_eq!(broadcast_shapes(&[7], &[7, 1]), Some(vec![7, 7]));
        assert_eq!(broadcast_shapes(&[], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[2], &[3]), None);
        let col = Tensor::int(&[2, 1], &[1, 2]).unwrap();
        let b = broadcast_to(&col, &[2, 3]).unwrap();
        assert_eq!(b.data(), &[1, 1, 1, 2, 2, 2]);
        assert!(broadcast_to(&col, &[3, 3]).is_none());
    }
}

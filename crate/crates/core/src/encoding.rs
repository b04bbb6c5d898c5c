//! Fixed-length numeric encoding of a task specification for the models.
//!
//! Each tensor slot is a segment of `VALUE_SLOTS + 1 + SIZE_SLOTS + 1 +
//! TYPE_SLOTS + 1` numbers: the row-major values (integers affinely scaled
//! and clamped, booleans as 0/1), a separator, `[rank, d1, d2, d3, numel]`, a separator, a one-hot
//! type flag over `{Int, Bool, Dummy}`, and a trailing separator. Three input
//! segments are followed by the output segment.

use thiserror::Error;

use crate::tensor::{DType, Tensor, MAX_RANK};

pub const VALUE_SLOTS: usize = 150;
pub const SIZE_SLOTS: usize = 5;
pub const TYPE_SLOTS: usize = 3;
pub const SEGMENT_LEN: usize = VALUE_SLOTS + 1 + SIZE_SLOTS + 1 + TYPE_SLOTS + 1;
pub const MAX_INPUTS: usize = 3;
pub const ENCODED_LEN: usize = (MAX_INPUTS + 1) * SEGMENT_LEN;

pub const PAD: f32 = -9.99;
pub const SEP: f32 = -9.98;
pub const MASK: f32 = -9.97;

pub const VALUE_MIN: i64 = -100;
pub const VALUE_MAX: i64 = 500;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("tensor with {0} elements exceeds the {VALUE_SLOTS}-slot value block")]
    TooLargeToEncode(usize),
    #[error("at most {MAX_INPUTS} inputs can be encoded, got {0}")]
    TooManyInputs(usize),
}

/// An input slot of a specification: a concrete tensor or the placeholder
/// for a value carried over from the previous step.
#[derive(Clone, Copy, Debug)]
pub enum SlotInput<'a> {
    Tensor(&'a Tensor),
    Masked,
}

/// The encoded vector; always `ENCODED_LEN` long.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSpec(Vec<f32>);

impl EncodedSpec {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    /// Comma-separated decimals, the `encode` CLI output format.
    pub fn to_csv(&self) -> String {
        self.0
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn scale_value(v: i64) -> f32 {
    v.clamp(VALUE_MIN, VALUE_MAX) as f32 / 100.0
}

fn push_tail(out: &mut Vec<f32>, size: [f32; SIZE_SLOTS], type_idx: usize) {
    out.push(SEP);
    out.extend_from_slice(&size);
    out.push(SEP);
    let mut ty = [0.0; TYPE_SLOTS];
    ty[type_idx] = 1.0;
    out.extend_from_slice(&ty);
    out.push(SEP);
}

/// Appends the segment of one tensor.
pub fn encode_tensor_into(t: &Tensor, out: &mut Vec<f32>) -> Result<(), EncodeError> {
    if t.numel() > VALUE_SLOTS {
        return Err(EncodeError::TooLargeToEncode(t.numel()));
    }
    debug_assert!(t.rank() <= MAX_RANK);
    match t.dtype() {
        DType::Int => out.extend(t.data().iter().map(|&v| scale_value(v))),
        DType::Bool => out.extend(t.data().iter().map(|&v| v as f32)),
    }
    out.extend(std::iter::repeat_n(PAD, VALUE_SLOTS - t.numel()));
    let mut size = [PAD; SIZE_SLOTS];
    size[0] = t.rank() as f32;
    for (k, &d) in t.shape().iter().enumerate() {
        size[1 + k] = d as f32;
    }
    size[SIZE_SLOTS - 1] = t.numel() as f32;
    let type_idx = match t.dtype() {
        DType::Int => 0,
        DType::Bool => 1,
    };
    push_tail(out, size, type_idx);
    Ok(())
}

fn dummy_into(out: &mut Vec<f32>, masked: bool) {
    let start = out.len();
    out.extend(std::iter::repeat_n(PAD, VALUE_SLOTS));
    if masked {
        out[start] = MASK;
    }
    push_tail(out, [PAD; SIZE_SLOTS], 2);
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<f32>, EncodeError> {
    let mut out = Vec::with_capacity(SEGMENT_LEN);
    encode_tensor_into(t, &mut out)?;
    Ok(out)
}

pub fn dummy_segment() -> Vec<f32> {
    let mut out = Vec::with_capacity(SEGMENT_LEN);
    dummy_into(&mut out, false);
    out
}

/// Encodes up to three inputs (padding with dummies) followed by the output.
pub fn encode_spec(inputs: &[SlotInput<'_>], output: &Tensor) -> Result<EncodedSpec, EncodeError> {
    let mut out = Vec::with_capacity(ENCODED_LEN);
    encode_spec_into(inputs, output, &mut out)?;
    Ok(EncodedSpec(out))
}

/// Like [`encode_spec`], appending into a caller-owned buffer.
pub fn encode_spec_into(
    inputs: &[SlotInput<'_>],
    output: &Tensor,
    out: &mut Vec<f32>,
) -> Result<(), EncodeError> {
    if inputs.len() > MAX_INPUTS {
        return Err(EncodeError::TooManyInputs(inputs.len()));
    }
    let start = out.len();
    for slot in inputs {
        match slot {
            SlotInput::Tensor(t) => {
                if let Err(e) = encode_tensor_into(t, out) {
                    out.truncate(start);
                    return Err(e);
                }
            }
            SlotInput::Masked => dummy_into(out, true),
        }
    }
    for _ in inputs.len()..MAX_INPUTS {
        dummy_into(out, false);
    }
    if let Err(e) = encode_tensor_into(output, out) {
        out.truncate(start);
        return Err(e);
    }
    debug_assert_eq!(out.len() - start, ENCODED_LEN);
    Ok(())
}

pub fn tensors(inputs: &[Tensor]) -> Vec<SlotInput<'_>> {
    inputs.iter().map(SlotInput::Tensor).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_are_fixed() {
        assert_eq!(SEGMENT_LEN, 161);
        assert_eq!(ENCODED_LEN, 644);
        let out = Tensor::scalar(1);
        for n in 0..=3 {
            let inputs: Vec<Tensor> = (0..n).map(|i| Tensor::vector(&[i])).collect();
            let enc = encode_spec(&tensors(&inputs), &out).unwrap();
            assert_eq!(enc.values().len(), 644);
        }
    }

    #[test]
    fn scalar_segment() {
        let seg = encode_tensor(&Tensor::scalar(7)).unwrap();
        assert_eq!(seg[0], 0.07);
        assert!(seg[1..150].iter().all(|&v| v == PAD));
        assert_eq!(seg[150], SEP);
        assert_eq!(&seg[151..156], &[0.0, PAD, PAD, PAD, 1.0]);
        assert_eq!(seg[156], SEP);
        assert_eq!(&seg[157..160], &[1.0, 0.0, 0.0]);
        assert_eq!(seg[160], SEP);
    }

    #[test]
    fn dummy_and_masked_segments() {
        let d = dummy_segment();
        assert!(d[..150].iter().all(|&v| v == PAD));
        assert_eq!(&d[151..156], &[PAD; 5]);
        assert_eq!(&d[157..160], &[0.0, 0.0, 1.0]);
        let in2 = Tensor::vector(&[1]);
        let out = Tensor::vector(&[2]);
        let enc = encode_spec(&[SlotInput::Masked, SlotInput::Tensor(&in2)], &out).unwrap();
        let v = enc.values();
        assert_eq!(v[0], MASK);
        assert!(v[1..150].iter().all(|&x| x == PAD));
        assert_eq!(&v[157..160], &[0.0, 0.0, 1.0]);
        assert_eq!(&v[161..322], encode_tensor(&in2).unwrap().as_slice());
        assert_eq!(&v[322..483], dummy_segment().as_slice());
    }

    #[test]
    fn value_scaling_clamps() {
        assert_eq!(scale_value(17), 0.17);
        assert_eq!(scale_value(-400), -1.0);
        assert_eq!(scale_value(2890), 5.0);
    }

    #[test]
    fn booleans_are_unscaled() {
        let b = Tensor::boolean(&[3], &[1, 0, 1]).unwrap();
        let seg = encode_tensor(&b).unwrap();
        assert_eq!(&seg[..3], &[1.0, 0.0, 1.0]);
        assert_eq!(&seg[157..160], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn too_large() {
        let big = Tensor::int(&[151], &[0; 151]).unwrap();
        assert_eq!(encode_tensor(&big), Err(EncodeError::TooLargeToEncode(151)));
        let inputs = vec![Tensor::scalar(0); 4];
        assert_eq!(
            encode_spec(&tensors(&inputs), &Tensor::scalar(0)),
            Err(EncodeError::TooManyInputs(4))
        );
    }
}

//! Weights file: a text manifest terminated by an `end` line, followed by the
//! raw little-endian `f32` payload of every array in manifest order.
//!
//! ```text
//! tensynth-weights 1
//! kind seq
//! registry add,eq,mul
//! registry_hash 9f2c...
//! ffn_hidden 256
//! embed 64
//! hidden 128
//! array ffn1.w 644 256 f32
//! ...
//! array norm.scale 1 644 f32
//! end
//! ```

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::{MultiLabelModel, SeqHyper, SeqModel};
use crate::ops::Registry;

const MAGIC: &str = "tensynth-weights 1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weights file")]
    BadMagic,
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("expected a `{expected}` model, found `{found}`")]
    WrongKind { expected: String, found: String },
    #[error("registry hash {stored} does not match ops {ops}")]
    RegistryMismatch { stored: String, ops: String },
    #[error("payload has {found} bytes, manifest needs {needed}")]
    Truncated { needed: usize, found: usize },
}

struct Parsed {
    kind: String,
    registry: Registry,
    hyper: SeqHyper,
    arrays: Vec<(String, Array2<f32>)>,
}

fn write(
    kind: &str,
    registry: &Registry,
    hyper: &SeqHyper,
    names: &[&str],
    arrays: &[&Array2<f32>],
) -> Vec<u8> {
    let mut head = format!(
        "{MAGIC}\nkind {kind}\nregistry {}\nregistry_hash {}\nffn_hidden {}\nembed {}\nhidden {}\n",
        registry.names().join(","),
        registry.hash(),
        hyper.ffn_hidden,
        hyper.embed,
        hyper.hidden
    );
    for (name, a) in names.iter().zip(arrays) {
        head.push_str(&format!("array {name} {} {} f32\n", a.nrows(), a.ncols()));
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    for a in arrays {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn malformed(msg: impl Into<String>) -> WeightsError {
    WeightsError::Malformed(msg.into())
}

fn parse(bytes: &[u8]) -> Result<Parsed, WeightsError> {
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or(WeightsError::BadMagic)?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| WeightsError::BadMagic)?;
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(WeightsError::BadMagic);
    }
    let mut kind = None;
    let mut ops = None;
    let mut hash = None;
    let mut hyper = SeqHyper::default();
    let mut shapes = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<usize, WeightsError> {
            rest.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(format!("bad line `{line}`")))
        };
        match key {
            "kind" => kind = rest.first().map(|s| s.to_string()),
            "registry" => ops = Some(rest.first().copied().unwrap_or("").to_string()),
            "registry_hash" => hash = rest.first().map(|s| s.to_string()),
            "ffn_hidden" => hyper.ffn_hidden = num(0)?,
            "embed" => hyper.embed = num(0)?,
            "hidden" => hyper.hidden = num(0)?,
            "array" => {
                let name = rest
                    .first()
                    .ok_or_else(|| malformed("array without name"))?;
                if rest.get(3) != Some(&"f32") {
                    return Err(malformed(format!("unsupported dtype in `{line}`")));
                }
                shapes.push((name.to_string(), num(1)?, num(2)?));
            }
            "" => {}
            other => return Err(malformed(format!("unknown key `{other}`"))),
        }
    }
    let kind = kind.ok_or_else(|| malformed("missing kind"))?;
    let ops = ops.ok_or_else(|| malformed("missing registry"))?;
    let registry = Registry::parse(&ops).map_err(|e| malformed(e.to_string()))?;
    let stored = hash.ok_or_else(|| malformed("missing registry_hash"))?;
    if registry.hash() != stored {
        return Err(WeightsError::RegistryMismatch { stored, ops });
    }
    let payload = &bytes[end + 5..];
    let needed: usize = shapes.iter().map(|(_, r, c)| r * c * 4).sum();
    if payload.len() != needed {
        return Err(WeightsError::Truncated {
            needed,
            found: payload.len(),
        });
    }
    let mut offset = 0;
    let mut arrays = Vec::with_capacity(shapes.len());
    for (name, r, c) in shapes {
        let data: Vec<f32> = payload[offset..offset + r * c * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += r * c * 4;
        let a = Array2::from_shape_vec((r, c), data).map_err(|e| malformed(e.to_string()))?;
        arrays.push((name, a));
    }
    Ok(Parsed {
        kind,
        registry,
        hyper,
        arrays,
    })
}

fn install(
    parsed: Parsed,
    names: &[&str],
    targets: Vec<&mut Array2<f32>>,
) -> Result<(), WeightsError> {
    if parsed.arrays.len() != names.len() {
        return Err(malformed(format!(
            "expected {} arrays, found {}",
            names.len(),
            parsed.arrays.len()
        )));
    }
    for ((name, target), (found, a)) in names.iter().zip(targets).zip(parsed.arrays) {
        if *name != found || target.dim() != a.dim() {
            return Err(malformed(format!(
                "array `{found}` {:?} where `{name}` {:?} expected",
                a.dim(),
                target.dim()
            )));
        }
        *target = a;
    }
    Ok(())
}

/// Trainable arrays followed by the frozen input normalization.
fn names(params: &[&'static str]) -> Vec<&'static str> {
    let mut out = params.to_vec();
    out.extend(["norm.mean", "norm.scale"]);
    out
}

fn check_kind(parsed: &Parsed, expected: &str) -> Result<(), WeightsError> {
    if parsed.kind != expected {
        return Err(WeightsError::WrongKind {
            expected: expected.into(),
            found: parsed.kind.clone(),
        });
    }
    Ok(())
}

/// The `kind` recorded in a weights file (`seq` or `multilabel`).
pub fn weights_kind(bytes: &[u8]) -> Result<String, WeightsError> {
    Ok(parse(bytes)?.kind)
}

impl SeqModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = self.params();
        arrays.extend([&self.norm.mean, &self.norm.scale]);
        write(
            "seq",
            &self.registry,
            &self.hyper,
            &names(&Self::param_names()),
            &arrays,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let parsed = parse(bytes)?;
        check_kind(&parsed, "seq")?;
        let mut model = SeqModel::zeros(parsed.registry.clone(), parsed.hyper.clone());
        let mut norm = model.norm.clone();
        let mut targets = model.params_mut();
        targets.extend([&mut norm.mean, &mut norm.scale]);
        install(parsed, &names(&Self::param_names()), targets)?;
        model.norm = norm;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl MultiLabelModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = self.params();
        arrays.extend([&self.norm.mean, &self.norm.scale]);
        write(
            "multilabel",
            &self.registry,
            &self.hyper,
            &names(&Self::param_names()),
            &arrays,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let parsed = parse(bytes)?;
        check_kind(&parsed, "multilabel")?;
        let mut model = MultiLabelModel::new(parsed.registry.clone(), parsed.hyper.clone(), 0);
        let mut norm = model.norm.clone();
        let mut targets = model.params_mut();
        targets.extend([&mut norm.mean, &mut norm.scale]);
        install(parsed, &names(&Self::param_names()), targets)?;
        model.norm = norm;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> SeqHyper {
        SeqHyper {
            ffn_hidden: 6,
            embed: 4,
            hidden: 5,
        }
    }

    #[test]
    fn seq_round_trip_is_bit_exact() {
        let m = SeqModel::<f32>::new(Registry::parse("add,eq,stack").unwrap(), hyper(), 11);
        let bytes = m.to_bytes();
        let back = SeqModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(weights_kind(&bytes).unwrap(), "seq");
    }

    #[test]
    fn multilabel_round_trip() {
        let m = MultiLabelModel::<f32>::new(Registry::core16(), hyper(), 2);
        let back = MultiLabelModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            SeqModel::from_bytes(&m.to_bytes()),
            Err(WeightsError::WrongKind { .. })
        ));
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let m = SeqModel::<f32>::new(Registry::parse("add").unwrap(), hyper(), 1);
        let mut bytes = m.to_bytes();
        bytes.pop();
        assert!(matches!(
            SeqModel::from_bytes(&bytes),
            Err(WeightsError::Truncated { .. })
        ));
        assert!(matches!(
            SeqModel::from_bytes(b"hello"),
            Err(WeightsError::BadMagic)
        ));
    }
}

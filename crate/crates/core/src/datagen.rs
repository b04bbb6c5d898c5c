//! Synthetic training data: random inputs piped through op sequences.
//!
//! Each record threads a carried value through its steps: the first step
//! draws fresh inputs, every later step takes the previous result as its
//! first tensor argument and fills its remaining slots with a fresh input,
//! an earlier input, or a small integer constant.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{VALUE_MAX, VALUE_SLOTS};
use crate::ops::{apply, Literal, OpCode, OpError, Registry};
use crate::search::CONSTANTS;
use crate::tensor::{DType, Tensor, MAX_RANK};

/// Inputs a record may introduce in total (the encoder has three slots).
pub const MAX_FRESH_INPUTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub value_lo: i64,
    pub value_hi: i64,
    pub max_rank: usize,
    pub max_dim: usize,
    pub samples_per_seq: usize,
    pub seed: u64,
    /// Attempts per call before giving up on it.
    pub retry_budget: usize,
    /// Instantiations tried when deciding whether a sequence is feasible.
    pub probe_trials: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            value_lo: 0,
            value_hi: 20,
            max_rank: 3,
            max_dim: 5,
            samples_per_seq: 1000,
            seed: 0,
            retry_budget: 50,
            probe_trials: 200,
        }
    }
}

/// Where a step argument comes from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgSource {
    Carried,
    Input(usize),
    Const(i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub op: OpCode,
    pub args: Vec<ArgSource>,
    pub params: Vec<Literal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub sequence: Vec<OpCode>,
    pub inputs: Vec<Tensor>,
    pub output: Tensor,
    pub steps: Vec<Step>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("step {step}: {source}")]
    Op { step: usize, source: OpError },
    #[error("step {0} refers to a missing input or carried value")]
    Dangling(usize),
    #[error("replayed output differs from the stored one")]
    Mismatch,
}

impl DatasetRecord {
    /// Re-executes the steps, returning every intermediate value (the last
    /// one equals `output`).
    pub fn replay(&self) -> Result<Vec<Tensor>, ReplayError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.steps.len());
        for (t, step) in self.steps.iter().enumerate() {
            let consts: Vec<Tensor> = step
                .args
                .iter()
                .filter_map(|a| match a {
                    ArgSource::Const(c) => Some(Tensor::scalar(*c)),
                    _ => None,
                })
                .collect();
            let mut next_const = consts.iter();
            let args = step
                .args
                .iter()
                .map(|a| match a {
                    ArgSource::Carried => values.last().ok_or(ReplayError::Dangling(t)),
                    ArgSource::Input(i) => self.inputs.get(*i).ok_or(ReplayError::Dangling(t)),
                    ArgSource::Const(_) => next_const.next().ok_or(ReplayError::Dangling(t)),
                })
                .collect::<Result<Vec<&Tensor>, _>>()?;
            let v = apply(step.op, &args, &step.params)
                .map_err(|source| ReplayError::Op { step: t, source })?;
            values.push(v);
        }
        if values.last() != Some(&self.output) {
            return Err(ReplayError::Mismatch);
        }
        Ok(values)
    }

    /// Distinct inputs consumed at step `t`, in slot order.
    pub fn step_inputs(&self, t: usize) -> Vec<usize> {
        let mut seen = Vec::new();
        for arg in &self.steps[t].args {
            if let ArgSource::Input(i) = arg {
                if !seen.contains(i) {
                    seen.push(*i);
                }
            }
        }
        seen
    }
}

/// Uniform rank in `0..=max_rank`, extents in `1..=max_dim`, values in the
/// configured range (or 0/1 for `Bool`).
pub fn random_tensor<R: Rng>(cfg: &GenConfig, dtype: DType, rng: &mut R) -> Tensor {
    let rank = rng.gen_range(0..=cfg.max_rank.min(MAX_RANK));
    let shape: Vec<usize> = (0..rank)
        .map(|_| rng.gen_range(1..=cfg.max_dim.max(1)))
        .collect();
    fill(cfg, dtype, shape, rng)
}

fn fill<R: Rng>(cfg: &GenConfig, dtype: DType, shape: Vec<usize>, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match dtype {
            DType::Int => rng.gen_range(cfg.value_lo..=cfg.value_hi),
            DType::Bool => rng.gen_range(0..=1),
        })
        .collect();
    Tensor::new(dtype, shape, data).expect("well-formed random tensor")
}

fn random_shape<R: Rng>(
    cfg: &GenConfig,
    min_rank: usize,
    max_rank: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let hi = max_rank.min(cfg.max_rank).min(MAX_RANK);
    if min_rank > hi {
        return None;
    }
    let rank = rng.gen_range(min_rank..=hi);
    Some(
        (0..rank)
            .map(|_| rng.gen_range(1..=cfg.max_dim.max(1)))
            .collect(),
    )
}

fn dim<R: Rng>(cfg: &GenConfig, rng: &mut R) -> usize {
    rng.gen_range(1..=cfg.max_dim.max(1))
}

/// A shape that broadcasts against `s`: usually `s` itself, otherwise a
/// scalar or `s` with dims dropped, collapsed to 1, widened from 1, or a
/// dim prepended.
fn partner_shape<R: Rng>(s: &[usize], cfg: &GenConfig, rng: &mut R) -> Vec<usize> {
    let roll: f64 = rng.gen();
    if roll < 0.45 {
        return s.to_vec();
    }
    if roll < 0.6 {
        return Vec::new();
    }
    let mut out: Vec<usize> = s
        .iter()
        .map(|&d| {
            if d == 1 && rng.gen_bool(0.6) {
                dim(cfg, rng)
            } else if d != 1 && rng.gen_bool(0.25) {
                1
            } else {
                d
            }
        })
        .collect();
    if !out.is_empty() && rng.gen_bool(0.2) {
        let drop = rng.gen_range(1..=out.len());
        out.drain(..drop);
    } else if out.len() < cfg.max_rank.min(MAX_RANK) && rng.gen_bool(0.2) {
        out.insert(0, dim(cfg, rng));
    }
    out
}

/// `[a_last, ...]` shapes that contract with `a` under matmul.
fn matmul_partner<R: Rng>(a: &[usize], cfg: &GenConfig, rng: &mut R) -> Option<Vec<usize>> {
    let k = *a.last()?;
    Some(match rng.gen_range(0..3) {
        0 => vec![k],
        1 => vec![k, dim(cfg, rng)],
        _ if a.len() >= 3 => vec![a[0], k, dim(cfg, rng)],
        _ => vec![dim(cfg, rng), k, dim(cfg, rng)],
    })
}

fn tensordot_partner<R: Rng>(a: &[usize], cfg: &GenConfig, rng: &mut R) -> Option<Vec<usize>> {
    let k = *a.last()?;
    let max_extra = (MAX_RANK + 1).checked_sub(a.len())?;
    let extra = rng.gen_range(0..=max_extra.min(2));
    let mut out = vec![k];
    out.extend((0..extra).map(|_| dim(cfg, rng)));
    Some(out)
}

/// Rank bounds for a fresh first argument, chosen so the op can apply.
fn first_rank_bounds(op: OpCode) -> (usize, usize) {
    match op {
        OpCode::Bincount => (1, 1),
        OpCode::Transpose => (2, 3),
        OpCode::Matmul | OpCode::Tensordot => (1, 3),
        OpCode::Unsqueeze | OpCode::Stack => (0, 2),
        _ => (0, 3),
    }
}

fn slot_dtype(op: OpCode, slot: usize, first: Option<&Tensor>) -> DType {
    match (op, slot) {
        (OpCode::Any, 0) | (OpCode::Where, 0) | (OpCode::MaskedSelect, 1) => DType::Bool,
        (OpCode::Stack, 1) | (OpCode::Eq | OpCode::Ne | OpCode::Gt | OpCode::Lt, 1) => {
            first.map_or(DType::Int, Tensor::dtype)
        }
        _ => DType::Int,
    }
}

fn accepts_const(op: OpCode, slot: usize) -> bool {
    matches!(
        (op, slot),
        (
            OpCode::Add | OpCode::Mul | OpCode::Eq | OpCode::Gt | OpCode::Lt | OpCode::Ne,
            1
        ) | (OpCode::Where, 1 | 2)
    )
}

fn fresh_for_slot<R: Rng>(
    op: OpCode,
    slot: usize,
    chosen: &[&Tensor],
    cfg: &GenConfig,
    rng: &mut R,
) -> Option<Tensor> {
    let first = chosen.first().copied();
    let dtype = slot_dtype(op, slot, first);
    let shape = match (op, slot, first) {
        (_, 0, _) => {
            let (lo, hi) = first_rank_bounds(op);
            random_shape(cfg, lo, hi, rng)?
        }
        (OpCode::Matmul, 1, Some(a)) => matmul_partner(a.shape(), cfg, rng)?,
        (OpCode::Tensordot, 1, Some(a)) => tensordot_partner(a.shape(), cfg, rng)?,
        (OpCode::Stack, 1, Some(a)) => a.shape().to_vec(),
        (OpCode::Where, 2, _) => partner_shape(chosen[1].shape(), cfg, rng),
        (_, _, Some(a)) => partner_shape(a.shape(), cfg, rng),
        (_, _, None) => random_shape(cfg, 0, 3, rng)?,
    };
    if dtype == DType::Int && op == OpCode::Bincount {
        return Some(fill(cfg, dtype, shape, rng));
    }
    Some(fill(cfg, dtype, shape, rng))
}

fn sample_params<R: Rng>(
    op: OpCode,
    first: &Tensor,
    cfg: &GenConfig,
    rng: &mut R,
) -> Option<Vec<Literal>> {
    let r = first.rank();
    Some(match op {
        OpCode::Any => vec![Literal::Int(rng.gen_range(0..r.max(1)) as i64)],
        OpCode::Unsqueeze | OpCode::Stack => vec![Literal::Int(rng.gen_range(0..=r) as i64)],
        OpCode::Transpose => {
            if r < 2 {
                return None;
            }
            let a = rng.gen_range(0..r);
            let mut b = rng.gen_range(0..r - 1);
            if b >= a {
                b += 1;
            }
            let (a, b) = (a.min(b), a.max(b));
            vec![Literal::Int(a as i64), Literal::Int(b as i64)]
        }
        OpCode::Expand => {
            let s = first.shape();
            let ones: Vec<usize> = (0..s.len()).filter(|&k| s[k] == 1).collect();
            let can_prepend = s.len() < MAX_RANK.min(cfg.max_rank.max(1));
            let target = if !ones.is_empty() && (!can_prepend || rng.gen_bool(0.5)) {
                let mut t = s.to_vec();
                for &k in &ones {
                    if rng.gen_bool(0.7) {
                        t[k] = rng.gen_range(2..=cfg.max_dim.max(2));
                    }
                }
                t
            } else if can_prepend {
                let mut t = vec![rng.gen_range(2..=cfg.max_dim.max(2))];
                t.extend_from_slice(s);
                t
            } else {
                return None;
            };
            if target == s {
                return None;
            }
            vec![Literal::Shape(target)]
        }
        _ => Vec::new(),
    })
}

/// One concrete call produced by [`sample_valid_call`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledCall {
    pub args: Vec<ArgSource>,
    /// Fresh inputs introduced by this call, numbered after the existing ones.
    pub fresh: Vec<Tensor>,
    pub params: Vec<Literal>,
    pub value: Tensor,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no valid call to `{0}` within the retry budget")]
pub struct Rejected(pub OpCode);

fn within_bounds(t: &Tensor) -> bool {
    t.numel() <= VALUE_SLOTS && t.data().iter().all(|v| v.abs() <= VALUE_MAX)
}

/// Samples arguments and parameters for `op` such that applying it
/// succeeds. `carried`, when present, fills the first tensor slot;
/// `existing` are inputs already introduced by earlier steps, which later
/// slots may reuse.
pub fn sample_valid_call<R: Rng>(
    op: OpCode,
    carried: Option<&Tensor>,
    existing: &[Tensor],
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<SampledCall, Rejected> {
    'attempt: for _ in 0..cfg.retry_budget.max(1) {
        let mut args: Vec<ArgSource> = Vec::with_capacity(op.arity());
        let mut fresh: Vec<Tensor> = Vec::new();
        let mut consts: Vec<Tensor> = Vec::new();
        for slot in 0..op.arity() {
            if slot == 0 && carried.is_some() {
                args.push(ArgSource::Carried);
                continue;
            }
            let chosen = resolve(&args, carried, existing, &fresh, &consts);
            let pool = existing.len() + fresh.len();
            let must_be_fresh = slot == 0;
            let roll: f64 = rng.gen();
            if !must_be_fresh
                && accepts_const(op, slot)
                && roll < 0.15
                && chosen[0].dtype() == DType::Int
            {
                let c = *CONSTANTS.choose(rng).expect("constants");
                consts.push(Tensor::scalar(c));
                args.push(ArgSource::Const(c));
            } else if !must_be_fresh && pool > 0 && (roll < 0.4 || pool >= MAX_FRESH_INPUTS) {
                args.push(ArgSource::Input(rng.gen_range(0..pool)));
            } else if pool < MAX_FRESH_INPUTS {
                match fresh_for_slot(op, slot, &chosen, cfg, rng) {
                    Some(t) => {
                        fresh.push(t);
                        args.push(ArgSource::Input(pool));
                    }
                    None => continue 'attempt,
                }
            } else {
                continue 'attempt;
            }
        }
        let tensors = resolve(&args, carried, existing, &fresh, &consts);
        let Some(params) = sample_params(op, tensors[0], cfg, rng) else {
            continue;
        };
        if let Ok(value) = apply(op, &tensors, &params) {
            if within_bounds(&value) {
                return Ok(SampledCall {
                    args,
                    fresh,
                    params,
                    value,
                });
            }
        }
    }
    Err(Rejected(op))
}

fn resolve<'a>(
    args: &[ArgSource],
    carried: Option<&'a Tensor>,
    existing: &'a [Tensor],
    fresh: &'a [Tensor],
    consts: &'a [Tensor],
) -> Vec<&'a Tensor> {
    let mut next_const = consts.iter();
    args.iter()
        .map(|a| match a {
            ArgSource::Carried => carried.expect("carried value"),
            ArgSource::Input(i) if *i < existing.len() => &existing[*i],
            ArgSource::Input(i) => &fresh[*i - existing.len()],
            ArgSource::Const(_) => next_const.next().expect("constant"),
        })
        .collect()
}

/// Instantiates one record of `sequence`, or `None` when some step cannot
/// be sampled or the result degenerates to one of the inputs.
pub fn sample_record<R: Rng>(
    sequence: &[OpCode],
    cfg: &GenConfig,
    rng: &mut R,
) -> Option<DatasetRecord> {
    let mut inputs: Vec<Tensor> = Vec::new();
    let mut steps = Vec::with_capacity(sequence.len());
    let mut carried: Option<Tensor> = None;
    for &op in sequence {
        let call = sample_valid_call(op, carried.as_ref(), &inputs, cfg, rng).ok()?;
        inputs.extend(call.fresh);
        steps.push(Step {
            op,
            args: call.args,
            params: call.params,
        });
        carried = Some(call.value);
    }
    let output = carried?;
    if inputs.contains(&output) {
        return None;
    }
    Some(DatasetRecord {
        sequence: sequence.to_vec(),
        inputs,
        output,
        steps,
    })
}

fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed
        ^ index
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Result of probing every candidate sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCensus {
    pub candidates: usize,
    pub feasible: Vec<Vec<OpCode>>,
    pub infeasible: Vec<Vec<OpCode>>,
}

/// All sequences of length `1..=max_len` over `ops`, split by whether
/// `cfg.probe_trials` random instantiations produced at least one record.
pub fn enumerate_sequences(ops: &[OpCode], max_len: usize, cfg: &GenConfig) -> SequenceCensus {
    let mut all: Vec<Vec<OpCode>> = Vec::new();
    let mut frontier: Vec<Vec<OpCode>> = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|p| {
                ops.iter().map(move |&op| {
                    let mut s = p.clone();
                    s.push(op);
                    s
                })
            })
            .collect();
        all.extend(frontier.iter().cloned());
    }
    let mut census = SequenceCensus {
        candidates: all.len(),
        feasible: Vec::new(),
        infeasible: Vec::new(),
    };
    for (i, seq) in all.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x5EED, i as u64));
        let ok = (0..cfg.probe_trials.max(1)).any(|_| sample_record(&seq, cfg, &mut rng).is_some());
        if ok {
            census.feasible.push(seq);
        } else {
            census.infeasible.push(seq);
        }
    }
    census
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub sequence: Vec<OpCode>,
    pub generated: usize,
    pub failed_attempts: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Held-out records dropped because their values also occur in an
    /// earlier split.
    pub overlap_dropped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<DatasetRecord>,
    pub valid: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    pub stats: Vec<SequenceStats>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sequence {0:?} produced no records")]
    InfeasibleAfterRetries(Vec<OpCode>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

fn split_sizes(n: usize) -> (usize, usize) {
    let held = ((n as f64) * 0.01).round() as usize;
    (held, held)
}

/// Generates `cfg.samples_per_seq` records for every sequence and splits
/// each sequence's records 98/1/1 after a seeded shuffle. Held-out records
/// whose inputs and output already occur in an earlier split are dropped.
pub fn generate_dataset(sequences: &[Vec<OpCode>], cfg: &GenConfig) -> Result<Dataset, DataError> {
    let mut data = Dataset::default();
    let mut per_seq: Vec<Vec<DatasetRecord>> = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, i as u64));
        let mut records = Vec::with_capacity(cfg.samples_per_seq);
        let mut failed = 0usize;
        let cap = cfg.samples_per_seq.saturating_mul(50).max(cfg.probe_trials);
        while records.len() < cfg.samples_per_seq && failed < cap {
            match sample_record(seq, cfg, &mut rng) {
                Some(r) => records.push(r),
                None => failed += 1,
            }
        }
        if records.is_empty() && cfg.samples_per_seq > 0 {
            return Err(DataError::InfeasibleAfterRetries(seq.clone()));
        }
        if records.len() < cfg.samples_per_seq {
            log::warn!(
                "{seq:?}: only {} of {} records",
                records.len(),
                cfg.samples_per_seq
            );
        }
        records.shuffle(&mut rng);
        data.stats.push(SequenceStats {
            sequence: seq.clone(),
            generated: records.len(),
            failed_attempts: failed,
            train: 0,
            valid: 0,
            test: 0,
            overlap_dropped: 0,
        });
        per_seq.push(records);
    }

    type Key = (Vec<Tensor>, Tensor);
    let key = |r: &DatasetRecord| -> Key { (r.inputs.clone(), r.output.clone()) };
    let mut seen_train: HashSet<Key> = HashSet::new();
    let mut seen_valid: HashSet<Key> = HashSet::new();
    let mut held: Vec<(usize, Vec<DatasetRecord>, Vec<DatasetRecord>)> = Vec::new();
    for (i, mut records) in per_seq.into_iter().enumerate() {
        let (nv, nt) = split_sizes(records.len());
        let test = records.split_off(records.len() - nt);
        let valid = records.split_off(records.len() - nv);
        seen_train.extend(records.iter().map(key));
        data.stats[i].train = records.len();
        data.train.extend(records);
        held.push((i, valid, test));
    }
    for (i, valid, _) in &held {
        for r in valid {
            let k = key(r);
            if seen_train.contains(&k) || !seen_valid.insert(k) {
                data.stats[*i].overlap_dropped += 1;
            } else {
                data.stats[*i].valid += 1;
                data.valid.push(r.clone());
            }
        }
    }
    let mut seen_test: HashSet<Key> = HashSet::new();
    for (i, _, test) in held {
        for r in test {
            let k = key(&r);
            if seen_train.contains(&k) || seen_valid.contains(&k) || !seen_test.insert(k) {
                data.stats[i].overlap_dropped += 1;
            } else {
                data.stats[i].test += 1;
                data.test.push(r);
            }
        }
    }
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    split: Split,
    #[serde(flatten)]
    record: std::borrow::Cow<'a, DatasetRecord>,
}

/// Sidecar manifest written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: GenConfig,
    pub registry: Vec<String>,
    pub max_len: usize,
    pub census: Option<SequenceCensus>,
    pub totals: BTreeMap<String, usize>,
    pub sequences: Vec<SequenceStats>,
}

pub fn manifest_path(data: &Path) -> PathBuf {
    let mut name = data
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    data.with_file_name(name)
}

/// Writes the dataset as gzip-compressed JSON lines (train, then valid,
/// then test) and returns the bytes written.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    let mut gz = GzEncoder::new(std::io::BufWriter::new(file), Compression::default());
    for (split, records) in [
        (Split::Train, &data.train),
        (Split::Valid, &data.valid),
        (Split::Test, &data.test),
    ] {
        for r in records {
            let line = Line {
                split,
                record: std::borrow::Cow::Borrowed(r),
            };
            serde_json::to_writer(&mut gz, &line).map_err(std::io::Error::from)?;
            gz.write_all(b"\n")?;
        }
    }
    gz.finish()?.flush()?;
    Ok(())
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Plain (uncompressed) JSON
/// lines are accepted too.
pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let reader: Box<dyn BufRead> = if raw.starts_with(&[0x1f, 0x8b]) {
        Box::new(BufReader::new(GzDecoder::new(&raw[..])))
    } else {
        Box::new(BufReader::new(&raw[..]))
    };
    let mut data = Dataset::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line<'static> =
            serde_json::from_str(&line).map_err(|source| DataError::Parse {
                line: n + 1,
                source,
            })?;
        let record = parsed.record.into_owned();
        match parsed.split {
            Split::Train => data.train.push(record),
            Split::Valid => data.valid.push(record),
            Split::Test => data.test.push(record),
        }
    }
    Ok(data)
}

/// Sequences over `registry` of length `1..=max_len` that pass the
/// feasibility probe, as used by the `gen-data` command.
pub fn feasible_sequences(registry: &Registry, max_len: usize, cfg: &GenConfig) -> SequenceCensus {
    enumerate_sequences(registry.ops(), max_len, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GenConfig {
        GenConfig {
            samples_per_seq: 20,
            seed: 5,
            ..GenConfig::default()
        }
    }

    #[test]
    fn scalar_only_when_rank_zero() {
        let c = GenConfig {
            max_rank: 0,
            ..cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert!(random_tensor(&c, DType::Int, &mut rng).is_scalar());
        }
    }

    #[test]
    fn bincount_rejects_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Tensor::int(&[2, 2], &[1, 2, 3, 4]).unwrap();
        assert_eq!(
            sample_valid_call(OpCode::Bincount, Some(&m), &[], &cfg(), &mut rng),
            Err(Rejected(OpCode::Bincount))
        );
    }

    #[test]
    fn unsqueeze_axis_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Tensor::vector(&[1, 2, 3]);
        for _ in 0..50 {
            let call =
                sample_valid_call(OpCode::Unsqueeze, Some(&v), &[], &cfg(), &mut rng).unwrap();
            assert!(matches!(call.params[0], Literal::Int(0 | 1)));
        }
    }

    #[test]
    fn records_replay() {
        let seq = vec![OpCode::Unsqueeze, OpCode::Eq];
        let data = generate_dataset(std::slice::from_ref(&seq), &cfg()).unwrap();
        let all: Vec<&DatasetRecord> = data
            .train
            .iter()
            .chain(&data.valid)
            .chain(&data.test)
            .collect();
        assert!(!all.is_empty());
        for r in all {
            assert_eq!(r.sequence, seq);
            assert_eq!(r.replay().unwrap().last(), Some(&r.output));
            assert!(r.inputs.len() <= MAX_FRESH_INPUTS);
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let data = generate_dataset(&[vec![OpCode::Add], vec![OpCode::Any]], &cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl.gz");
        write_dataset(&p, &data).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.train, data.train);
        assert_eq!(back.valid, data.valid);
        assert_eq!(back.test, data.test);
        assert_eq!(
            manifest_path(&p),
            dir.path().join("d.jsonl.gz.manifest.json")
        );
    }
}

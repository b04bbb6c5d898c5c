use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frames::{encode_frames, record_frames, MAX_STEPS};
use super::layers::{featurize, Standardizer, FEATURES};
use super::seq::IGNORE;
use super::{MultiLabelModel, NnError, SeqHyper, SeqModel};
use crate::datagen::DatasetRecord;
use crate::encoding::{encode_spec, tensors, EncodeError, ENCODED_LEN};
use crate::ops::Registry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub hyper: SeqHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-3,
            batch_size: 256,
            patience: 3,
            seed: 0,
            hyper: SeqHyper::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Greedy exact-sequence accuracy; sequence models only.
    pub valid_top1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: i32,
    lr: f32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(shapes: &[&Array2<f32>], lr: f64) -> Self {
        Adam {
            m: shapes.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: shapes.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
            lr: lr as f32,
        }
    }

    fn step(&mut self, params: Vec<&mut Array2<f32>>, grads: Vec<&Array2<f32>>) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                    *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

fn seq_targets(record: &DatasetRecord, registry: &Registry) -> Result<Vec<usize>, NnError> {
    let n = record.sequence.len();
    if n > MAX_STEPS {
        return Err(NnError::SequenceTooLong(n));
    }
    (0..MAX_STEPS)
        .map(|t| {
            if t < n {
                let op = record.sequence[t];
                registry
                    .index_of(op)
                    .ok_or_else(|| NnError::UnknownLabel(op.name().to_string()))
            } else if t == n {
                Ok(registry.len())
            } else {
                Ok(IGNORE)
            }
        })
        .collect()
}

/// 0/1 target per registry op: whether the op occurs in the record's sequence.
pub fn multilabel_targets(
    record: &DatasetRecord,
    registry: &Registry,
) -> Result<Vec<f32>, NnError> {
    for op in &record.sequence {
        if !registry.contains(*op) {
            return Err(NnError::UnknownLabel(op.name().to_string()));
        }
    }
    Ok(registry
        .ops()
        .iter()
        .map(|op| {
            if record.sequence.contains(op) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

fn encode_seq(records: &[&DatasetRecord]) -> Result<Vec<Vec<f32>>, NnError> {
    records
        .iter()
        .map(|r| Ok(encode_frames(&record_frames(r), &r.output)?))
        .collect()
}

/// Per-step feature batches and per-step class targets.
type StepBatch = (Vec<Array2<f32>>, Vec<Vec<usize>>);

fn seq_batch(records: &[&DatasetRecord], registry: &Registry) -> Result<StepBatch, NnError> {
    let enc = encode_seq(records)?;
    let rows: Vec<&[f32]> = enc.iter().map(Vec::as_slice).collect();
    let xs = SeqModel::<f32>::batch_steps(&rows);
    let per_record = records
        .iter()
        .map(|r| seq_targets(r, registry))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = (0..MAX_STEPS)
        .map(|t| per_record.iter().map(|r| r[t]).collect())
        .collect();
    Ok((xs, targets))
}

/// Mean loss and greedy exact-sequence accuracy.
fn evaluate_seq(
    model: &SeqModel<f32>,
    records: &[DatasetRecord],
    batch: usize,
) -> Result<(f64, f64), NnError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in records.chunks(batch.max(1)) {
        let refs: Vec<&DatasetRecord> = chunk.iter().collect();
        let (xs, targets) = seq_batch(&refs, &model.registry)?;
        let (l, _) = model.loss_and_grad(&xs, &targets);
        loss += l as f64 * chunk.len() as f64;
        let logits = model.logits(&xs);
        for (b, r) in chunk.iter().enumerate() {
            let lp: Vec<Vec<f64>> = logits
                .iter()
                .map(|m| {
                    let row: Vec<f64> = m.row(b).iter().map(|&v| v as f64).collect();
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                    row.iter().map(|v| v - lse).collect()
                })
                .collect();
            if model.beam_from_log_probs(&lp, 1)[0].ops == r.sequence {
                correct += 1;
            }
        }
    }
    let n = records.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Normalization statistics from at most 20k training encodings.
fn fit_norm(
    train: &[DatasetRecord],
    encode: impl Fn(&DatasetRecord) -> Result<Vec<Vec<f32>>, EncodeError>,
) -> Result<Standardizer<f32>, NnError> {
    let step = (train.len() / 20_000).max(1);
    let mut rows = Vec::new();
    for r in train.iter().step_by(step) {
        for enc in encode(r)? {
            let mut f = Vec::with_capacity(FEATURES);
            featurize(&enc, &mut f);
            rows.push(f);
        }
    }
    Ok(Standardizer::fit(FEATURES, rows.iter().map(Vec::as_slice)))
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Trains the sequence model with Adam on summed per-step cross entropy.
/// Stops once greedy validation accuracy has not improved for `patience`
/// epochs and returns the best weights seen. With no validation records the
/// first thousand training records stand in.
pub fn train_seq(
    train: &[DatasetRecord],
    valid: &[DatasetRecord],
    registry: &Registry,
    cfg: &TrainConfig,
) -> Result<(SeqModel<f32>, TrainReport), NnError> {
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let valid = if valid.is_empty() {
        &train[..train.len().min(1000)]
    } else {
        valid
    };
    let mut model = SeqModel::<f32>::new(registry.clone(), cfg.hyper.clone(), cfg.seed);
    model.norm = fit_norm(train, |r| {
        encode_frames(&record_frames(r), &r.output)
            .map(|v| v.chunks(ENCODED_LEN).map(<[f32]>::to_vec).collect())
    })?;
    let mut adam = Adam::new(&model.params(), cfg.lr);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let order = shuffled(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let refs: Vec<&DatasetRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let (xs, targets) = seq_batch(&refs, registry)?;
            let (loss, grad) = model.loss_and_grad(&xs, &targets);
            if !loss.is_finite() {
                return Err(NnError::DivergenceDetected { epoch });
            }
            total += loss as f64 * chunk.len() as f64;
            adam.step(model.params_mut(), grad.params());
        }
        let (valid_loss, top1) = evaluate_seq(&model, valid, cfg.batch_size)?;
        let stats = EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            valid_loss,
            valid_top1: Some(top1),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, valid loss {:.4}, valid top-1 {:.4}",
            stats.train_loss,
            valid_loss,
            top1
        );
        history.push(stats);
        if top1 > best.1 {
            best = (model.clone(), top1, epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    Ok((
        best.0,
        TrainReport {
            best_epoch: best.2,
            history,
        },
    ))
}

fn ml_batch(
    records: &[&DatasetRecord],
    registry: &Registry,
) -> Result<(Array2<f32>, Array2<f32>), NnError> {
    let enc = records
        .iter()
        .map(|r| Ok(encode_spec(&tensors(&r.inputs), &r.output)?.into_vec()))
        .collect::<Result<Vec<_>, NnError>>()?;
    let rows: Vec<&[f32]> = enc.iter().map(Vec::as_slice).collect();
    let x = MultiLabelModel::<f32>::batch(&rows);
    let mut y = Array2::zeros((records.len(), registry.len()));
    for (b, r) in records.iter().enumerate() {
        for (k, v) in multilabel_targets(r, registry)?.into_iter().enumerate() {
            y[[b, k]] = v;
        }
    }
    Ok((x, y))
}

/// Trains the multi-label classifier on binary cross entropy, early-stopping
/// on validation loss.
pub fn train_multilabel(
    train: &[DatasetRecord],
    valid: &[DatasetRecord],
    registry: &Registry,
    cfg: &TrainConfig,
) -> Result<(MultiLabelModel<f32>, TrainReport), NnError> {
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let valid = if valid.is_empty() {
        &train[..train.len().min(1000)]
    } else {
        valid
    };
    let mut model = MultiLabelModel::<f32>::new(registry.clone(), cfg.hyper.clone(), cfg.seed);
    model.norm = fit_norm(train, |r| {
        encode_spec(&tensors(&r.inputs), &r.output).map(|e| vec![e.into_vec()])
    })?;
    let mut adam = Adam::new(&model.params(), cfg.lr);
    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let order = shuffled(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let refs: Vec<&DatasetRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = ml_batch(&refs, registry)?;
            let (loss, grad) = model.loss_and_grad(&x, &y);
            if !loss.is_finite() {
                return Err(NnError::DivergenceDetected { epoch });
            }
            total += loss as f64 * chunk.len() as f64;
            adam.step(model.params_mut(), grad.params());
        }
        let mut valid_loss = 0.0;
        for chunk in valid.chunks(cfg.batch_size.max(1)) {
            let refs: Vec<&DatasetRecord> = chunk.iter().collect();
            let (x, y) = ml_batch(&refs, registry)?;
            valid_loss += model.loss_and_grad(&x, &y).0 as f64 * chunk.len() as f64;
        }
        valid_loss /= valid.len() as f64;
        log::info!(
            "epoch {epoch}: train loss {:.4}, valid loss {valid_loss:.4}",
            total / train.len() as f64
        );
        history.push(EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            valid_loss,
            valid_top1: None,
        });
        if valid_loss < best.1 {
            best = (model.clone(), valid_loss, epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    Ok((
        best.0,
        TrainReport {
            best_epoch: best.2,
            history,
        },
    ))
}

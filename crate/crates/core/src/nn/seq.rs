use std::cmp::Ordering;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frames::{encode_frames, record_frames, Frame, MAX_STEPS};
use super::layers::{featurize, tanh, tanh_backward, Dense, Gru, GruCache, Standardizer, FEATURES};
use super::{Float, NnError};
use crate::datagen::{ArgSource, DatasetRecord};
use crate::encoding::{SlotInput, ENCODED_LEN};
use crate::ops::{OpCode, Registry};
use crate::tensor::Tensor;

/// Target marker for steps that do not contribute to the loss.
pub(crate) const IGNORE: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqHyper {
    pub ffn_hidden: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for SeqHyper {
    fn default() -> Self {
        SeqHyper {
            ffn_hidden: 256,
            embed: 64,
            hidden: 128,
        }
    }
}

/// Feed-forward encoder shared across steps, one GRU per direction over the
/// step embeddings, and a shared head over `registry` ops plus STOP.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqModel<F> {
    pub registry: Registry,
    pub hyper: SeqHyper,
    pub norm: Standardizer<F>,
    pub ffn1: Dense<F>,
    pub ffn2: Dense<F>,
    pub fwd: Gru<F>,
    pub bwd: Gru<F>,
    pub head: Dense<F>,
}

/// A ranked op sequence from beam search.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub ops: Vec<OpCode>,
    pub log_prob: f64,
}

/// Hidden state for a carried step computed two ways: from the masked
/// rollout and from a fresh rollout that sees the concrete value.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenProbe {
    pub masked: Vec<f64>,
    pub concrete: Vec<f64>,
    pub cosine: f64,
}

struct Cache<F> {
    x: Vec<Array2<F>>,
    a1: Vec<Array2<F>>,
    e: Vec<Array2<F>>,
    fc: Vec<GruCache<F>>,
    bc: Vec<GruCache<F>>,
    hcat: Vec<Array2<F>>,
    logits: Vec<Array2<F>>,
}

pub(crate) fn softmax_rows<F: Float>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum: F = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    dot / (na * nb)
}

fn log_softmax_f64<F: Float>(row: ndarray::ArrayView1<F>) -> Vec<f64> {
    let v: Vec<f64> = row.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

impl<F: Float> SeqModel<F> {
    pub fn new(registry: Registry, hyper: SeqHyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = registry.len() + 1;
        SeqModel {
            norm: Standardizer::identity(FEATURES),
            ffn1: Dense::init(FEATURES, hyper.ffn_hidden, 1.0, &mut rng),
            ffn2: Dense::init(hyper.ffn_hidden, hyper.embed, 1.0, &mut rng),
            fwd: Gru::init(hyper.embed, hyper.hidden, &mut rng),
            bwd: Gru::init(hyper.embed, hyper.hidden, &mut rng),
            head: Dense::init(2 * hyper.hidden, classes, 1.0, &mut rng),
            registry,
            hyper,
        }
    }

    pub fn zeros(registry: Registry, hyper: SeqHyper) -> Self {
        let classes = registry.len() + 1;
        SeqModel {
            norm: Standardizer::identity(FEATURES),
            ffn1: Dense::zeros(FEATURES, hyper.ffn_hidden),
            ffn2: Dense::zeros(hyper.ffn_hidden, hyper.embed),
            fwd: Gru::zeros(hyper.embed, hyper.hidden),
            bwd: Gru::zeros(hyper.embed, hyper.hidden),
            head: Dense::zeros(2 * hyper.hidden, classes),
            registry,
            hyper,
        }
    }

    pub fn zeros_like(&self) -> Self {
        SeqModel::zeros(self.registry.clone(), self.hyper.clone())
    }

    /// Index of the STOP class.
    pub fn stop(&self) -> usize {
        self.registry.len()
    }

    pub fn classes(&self) -> usize {
        self.registry.len() + 1
    }

    pub fn param_names() -> [&'static str; 14] {
        [
            "ffn1.w", "ffn1.b", "ffn2.w", "ffn2.b", "fwd.wx", "fwd.bx", "fwd.wh", "fwd.bh",
            "bwd.wx", "bwd.bx", "bwd.wh", "bwd.bh", "head.w", "head.b",
        ]
    }

    pub fn params(&self) -> Vec<&Array2<F>> {
        vec![
            &self.ffn1.w,
            &self.ffn1.b,
            &self.ffn2.w,
            &self.ffn2.b,
            &self.fwd.wx,
            &self.fwd.bx,
            &self.fwd.wh,
            &self.fwd.bh,
            &self.bwd.wx,
            &self.bwd.bx,
            &self.bwd.wh,
            &self.bwd.bh,
            &self.head.w,
            &self.head.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        vec![
            &mut self.ffn1.w,
            &mut self.ffn1.b,
            &mut self.ffn2.w,
            &mut self.ffn2.b,
            &mut self.fwd.wx,
            &mut self.fwd.bx,
            &mut self.fwd.wh,
            &mut self.fwd.bh,
            &mut self.bwd.wx,
            &mut self.bwd.bx,
            &mut self.bwd.wh,
            &mut self.bwd.bh,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }

    /// Feed-forward embedding of a batch of encoded specs.
    pub fn embed(&self, x: &Array2<F>) -> Array2<F> {
        tanh(
            self.ffn2
                .forward(&tanh(self.ffn1.forward(&self.norm.apply(x)))),
        )
    }

    /// Converts flat `MAX_STEPS * ENCODED_LEN` rows into per-step batches of
    /// model features.
    pub fn batch_steps(rows: &[&[f32]]) -> Vec<Array2<F>> {
        (0..MAX_STEPS)
            .map(|t| {
                let mut flat = Vec::with_capacity(rows.len() * FEATURES);
                for r in rows {
                    featurize(&r[t * ENCODED_LEN..(t + 1) * ENCODED_LEN], &mut flat);
                }
                Array2::from_shape_vec((rows.len(), FEATURES), flat)
                    .expect("feature width")
                    .mapv(|v| F::from_f32(v).expect("finite encoding"))
            })
            .collect()
    }

    fn run(&self, xs: &[Array2<F>]) -> Cache<F> {
        let steps = xs.len();
        let xs: Vec<Array2<F>> = xs.iter().map(|x| self.norm.apply(x)).collect();
        let mut a1 = Vec::with_capacity(steps);
        let mut e = Vec::with_capacity(steps);
        for x in &xs {
            let a = tanh(self.ffn1.forward(x));
            e.push(tanh(self.ffn2.forward(&a)));
            a1.push(a);
        }
        let (fc, bc, hcat, logits) = self.recur(&e);
        Cache {
            x: xs,
            a1,
            e,
            fc,
            bc,
            hcat,
            logits,
        }
    }

    /// Both recurrent passes and the head over per-step embeddings.
    #[allow(clippy::type_complexity)]
    fn recur(
        &self,
        e: &[Array2<F>],
    ) -> (
        Vec<GruCache<F>>,
        Vec<GruCache<F>>,
        Vec<Array2<F>>,
        Vec<Array2<F>>,
    ) {
        let steps = e.len();
        let h0 = Array2::<F>::zeros((e[0].nrows(), self.hyper.hidden));
        let mut hf = Vec::with_capacity(steps);
        let mut fc = Vec::with_capacity(steps);
        let mut h = h0.clone();
        for et in e {
            let (hn, c) = self.fwd.step(et, &h);
            hf.push(hn.clone());
            fc.push(c);
            h = hn;
        }
        let mut hb: Vec<Option<Array2<F>>> = vec![None; steps];
        let mut bc: Vec<Option<GruCache<F>>> = (0..steps).map(|_| None).collect();
        let mut h = h0;
        for t in (0..steps).rev() {
            let (hn, c) = self.bwd.step(&e[t], &h);
            hb[t] = Some(hn.clone());
            bc[t] = Some(c);
            h = hn;
        }
        let hcat: Vec<Array2<F>> = hf
            .iter()
            .zip(&hb)
            .map(|(f, b)| concatenate![Axis(1), f.view(), b.as_ref().expect("filled").view()])
            .collect();
        let logits = hcat.iter().map(|hc| self.head.forward(hc)).collect();
        (
            fc,
            bc.into_iter().map(|c| c.expect("filled")).collect(),
            hcat,
            logits,
        )
    }

    /// Per-step log-probabilities for queries assembled from shared step
    /// encodings: query `q` sees `steps[plans[q][t]]` at step `t`. Each
    /// distinct step is embedded once.
    pub fn log_probs_shared(
        &self,
        steps: &[&[f32]],
        plans: &[[usize; MAX_STEPS]],
    ) -> Vec<Vec<Vec<f64>>> {
        if plans.is_empty() || steps.is_empty() {
            return Vec::new();
        }
        let mut flat = Vec::with_capacity(steps.len() * FEATURES);
        for row in steps {
            featurize(row, &mut flat);
        }
        let x = Array2::from_shape_vec((steps.len(), FEATURES), flat)
            .expect("feature width")
            .mapv(|v| F::from_f32(v).expect("finite encoding"));
        let all = self.embed(&x);
        let e: Vec<Array2<F>> = (0..MAX_STEPS)
            .map(|t| {
                let idx: Vec<usize> = plans.iter().map(|p| p[t]).collect();
                all.select(Axis(0), &idx)
            })
            .collect();
        let logits = self.recur(&e).3;
        (0..plans.len())
            .map(|b| logits.iter().map(|l| log_softmax_f64(l.row(b))).collect())
            .collect()
    }

    /// Per-step logits for a batch.
    pub fn logits(&self, xs: &[Array2<F>]) -> Vec<Array2<F>> {
        self.run(xs).logits
    }

    /// Concatenated forward/backward hidden states per step for a batch.
    pub fn hidden(&self, xs: &[Array2<F>]) -> Vec<Array2<F>> {
        self.run(xs).hcat
    }

    /// Summed per-step cross entropy averaged over the batch, and its
    /// gradient. `targets[t][b]` is a class index or [`IGNORE`].
    #[allow(clippy::needless_range_loop)]
    pub fn loss_and_grad(&self, xs: &[Array2<F>], targets: &[Vec<usize>]) -> (F, SeqModel<F>) {
        let c = self.run(xs);
        let rows = xs[0].nrows();
        let inv = F::one() / F::from_usize(rows).expect("batch size");
        let hd = self.hyper.hidden;
        let mut g = self.zeros_like();
        let mut loss = F::zero();
        let mut dhf = Vec::with_capacity(xs.len());
        let mut dhb = Vec::with_capacity(xs.len());
        for (t, logits) in c.logits.iter().enumerate() {
            let mut d = softmax_rows(logits);
            for b in 0..rows {
                let y = targets[t][b];
                if y == IGNORE {
                    d.row_mut(b).fill(F::zero());
                    continue;
                }
                loss = loss - d[[b, y]].max(F::min_positive_value()).ln() * inv;
                d[[b, y]] = d[[b, y]] - F::one();
                d.row_mut(b).mapv_inplace(|v| v * inv);
            }
            let dh = self.head.backward(&c.hcat[t], &d, &mut g.head);
            dhf.push(dh.slice(s![.., 0..hd]).to_owned());
            dhb.push(dh.slice(s![.., hd..]).to_owned());
        }
        let steps = xs.len();
        let mut de: Vec<Array2<F>> = (0..steps)
            .map(|_| Array2::zeros((rows, self.hyper.embed)))
            .collect();
        let mut carry = Array2::<F>::zeros((rows, hd));
        for t in (0..steps).rev() {
            let dh = &dhf[t] + &carry;
            let (dx, dp) = self.fwd.step_backward(&c.fc[t], &dh, &mut g.fwd);
            de[t] += &dx;
            carry = dp;
        }
        let mut carry = Array2::<F>::zeros((rows, hd));
        for t in 0..steps {
            let dh = &dhb[t] + &carry;
            let (dx, dp) = self.bwd.step_backward(&c.bc[t], &dh, &mut g.bwd);
            de[t] += &dx;
            carry = dp;
        }
        for t in 0..steps {
            let dz2 = tanh_backward(&c.e[t], &de[t]);
            let da1 = self.ffn2.backward(&c.a1[t], &dz2, &mut g.ffn2);
            let dz1 = tanh_backward(&c.a1[t], &da1);
            self.ffn1.backward_params(&c.x[t], &dz1, &mut g.ffn1);
        }
        (loss, g)
    }

    /// Per-step log-probabilities (ops then STOP) for each encoded query.
    pub fn log_probs(&self, rows: &[&[f32]]) -> Vec<Vec<Vec<f64>>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let logits = self.logits(&Self::batch_steps(rows));
        (0..rows.len())
            .map(|b| logits.iter().map(|l| log_softmax_f64(l.row(b))).collect())
            .collect()
    }

    /// Per-step distributions for one query given its frames.
    pub fn forward_sequence(
        &self,
        frames: &[Frame<'_>],
        output: &Tensor,
    ) -> Result<Vec<Vec<f64>>, NnError> {
        let enc = encode_frames(frames, output)?;
        let lp = self.log_probs(&[&enc]).remove(0);
        Ok(lp
            .into_iter()
            .map(|s| s.into_iter().map(f64::exp).collect())
            .collect())
    }

    /// Standard beam search over per-step log-probabilities. STOP is not
    /// allowed at the first step; hypotheses end at STOP or after the last
    /// step. Ties are broken by op-name order.
    pub fn beam_from_log_probs(&self, steps: &[Vec<f64>], k: usize) -> Vec<Hypothesis> {
        let stop = self.stop();
        let k = k.max(1);
        let mut done: Vec<Hypothesis> = Vec::new();
        let mut live = vec![Hypothesis {
            ops: Vec::new(),
            log_prob: 0.0,
        }];
        for (t, lp) in steps.iter().enumerate() {
            let mut cand: Vec<(Hypothesis, bool)> = done.drain(..).map(|h| (h, true)).collect();
            for h in &live {
                for (class, &p) in lp.iter().enumerate() {
                    if class == stop {
                        if t > 0 {
                            cand.push((
                                Hypothesis {
                                    ops: h.ops.clone(),
                                    log_prob: h.log_prob + p,
                                },
                                true,
                            ));
                        }
                        continue;
                    }
                    let mut ops = h.ops.clone();
                    ops.push(self.registry.ops()[class]);
                    cand.push((
                        Hypothesis {
                            ops,
                            log_prob: h.log_prob + p,
                        },
                        false,
                    ));
                }
            }
            cand.sort_by(|a, b| rank(&a.0, &b.0));
            cand.truncate(k);
            live.clear();
            for (h, finished) in cand {
                if finished {
                    done.push(h);
                } else {
                    live.push(h);
                }
            }
            if live.is_empty() {
                break;
            }
        }
        done.extend(live);
        done.sort_by(rank);
        done
    }

    pub fn beam_search(
        &self,
        frames: &[Frame<'_>],
        output: &Tensor,
        k: usize,
    ) -> Result<Vec<Hypothesis>, NnError> {
        let enc = encode_frames(frames, output)?;
        let lp = self.log_probs(&[&enc]).remove(0);
        Ok(self.beam_from_log_probs(&lp, k))
    }

    /// Top-`k` first ops (STOP excluded) for the current inputs, with the
    /// remaining steps masked.
    pub fn predict_first(
        &self,
        frame: &Frame<'_>,
        output: &Tensor,
        k: usize,
    ) -> Result<Vec<(OpCode, f64)>, NnError> {
        let enc = encode_frames(std::slice::from_ref(frame), output)?;
        let lp = self.log_probs(&[&enc]).remove(0);
        Ok(self.first_from_log_probs(&lp[0], k))
    }

    pub fn first_from_log_probs(&self, step: &[f64], k: usize) -> Vec<(OpCode, f64)> {
        let mut ranked: Vec<(OpCode, f64)> = self
            .registry
            .ops()
            .iter()
            .zip(step)
            .map(|(&op, &lp)| (op, lp.exp()))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.name().cmp(b.0.name())));
        ranked.truncate(k);
        ranked
    }

    pub fn hidden_states(
        &self,
        frames: &[Frame<'_>],
        output: &Tensor,
    ) -> Result<Vec<Vec<f64>>, NnError> {
        let enc = encode_frames(frames, output)?;
        let h = self.hidden(&Self::batch_steps(&[&enc]));
        Ok(h.iter()
            .map(|m| {
                m.row(0)
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(f64::NAN))
                    .collect()
            })
            .collect())
    }

    /// Compares the second-step hidden state of a two-step record with the
    /// first-step state of a rollout fed the record's concrete intermediate.
    pub fn hidden_probe(&self, record: &DatasetRecord) -> Result<HiddenProbe, NnError> {
        let values = record
            .replay()
            .map_err(|_| NnError::SequenceTooLong(record.steps.len()))?;
        if record.steps.len() != 2 {
            return Err(NnError::SequenceTooLong(record.steps.len()));
        }
        let masked = self
            .hidden_states(&record_frames(record), &record.output)?
            .swap_remove(1);
        let mut frame = vec![SlotInput::Tensor(&values[0])];
        let mut seen = Vec::new();
        for arg in &record.steps[1].args {
            if let ArgSource::Input(i) = arg {
                if !seen.contains(i) {
                    seen.push(*i);
                    frame.push(SlotInput::Tensor(&record.inputs[*i]));
                }
            }
        }
        let concrete = self.hidden_states(&[frame], &record.output)?.swap_remove(0);
        let cosine = cosine(&masked, &concrete);
        Ok(HiddenProbe {
            masked,
            concrete,
            cosine,
        })
    }
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| {
        let an: Vec<&str> = a.ops.iter().map(|o| o.name()).collect();
        let bn: Vec<&str> = b.ops.iter().map(|o| o.name()).collect();
        an.cmp(&bn)
    })
}

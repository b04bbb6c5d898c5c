use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{featurize, sigmoid, tanh, tanh_backward, Dense, Standardizer, FEATURES};
use super::{Float, NnError, SeqHyper};
use crate::encoding::{encode_spec, tensors};
use crate::ops::{OpCode, Registry};
use crate::tensor::Tensor;

/// Feed-forward encoder with one sigmoid output per op, predicting which ops
/// appear anywhere in a solution.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLabelModel<F = f32> {
    pub registry: Registry,
    pub hyper: SeqHyper,
    pub norm: Standardizer<F>,
    pub ffn1: Dense<F>,
    pub ffn2: Dense<F>,
    pub head: Dense<F>,
}

impl<F: Float> MultiLabelModel<F> {
    pub fn new(registry: Registry, hyper: SeqHyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiLabelModel {
            norm: Standardizer::identity(FEATURES),
            ffn1: Dense::init(FEATURES, hyper.ffn_hidden, 1.0, &mut rng),
            ffn2: Dense::init(hyper.ffn_hidden, hyper.embed, 1.0, &mut rng),
            head: Dense::init(hyper.embed, registry.len(), 1.0, &mut rng),
            registry,
            hyper,
        }
    }

    pub fn zeros_like(&self) -> Self {
        MultiLabelModel {
            registry: self.registry.clone(),
            hyper: self.hyper.clone(),
            norm: self.norm.clone(),
            ffn1: Dense::zeros(FEATURES, self.hyper.ffn_hidden),
            ffn2: Dense::zeros(self.hyper.ffn_hidden, self.hyper.embed),
            head: Dense::zeros(self.hyper.embed, self.registry.len()),
        }
    }

    pub fn param_names() -> [&'static str; 6] {
        ["ffn1.w", "ffn1.b", "ffn2.w", "ffn2.b", "head.w", "head.b"]
    }

    pub fn params(&self) -> Vec<&Array2<F>> {
        vec![
            &self.ffn1.w,
            &self.ffn1.b,
            &self.ffn2.w,
            &self.ffn2.b,
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
            &mut self.head.w,
            &mut self.head.b,
        ]
    }

    pub fn batch(rows: &[&[f32]]) -> Array2<F> {
        let mut flat = Vec::with_capacity(rows.len() * FEATURES);
        for r in rows {
            featurize(r, &mut flat);
        }
        Array2::from_shape_vec((rows.len(), FEATURES), flat)
            .expect("feature width")
            .mapv(|v| F::from_f32(v).expect("finite encoding"))
    }

    pub fn logits(&self, x: &Array2<F>) -> Array2<F> {
        let e = tanh(
            self.ffn2
                .forward(&tanh(self.ffn1.forward(&self.norm.apply(x)))),
        );
        self.head.forward(&e)
    }

    /// Binary cross entropy summed over ops, averaged over the batch, with
    /// its gradient. `targets` is `batch × ops` of 0/1.
    pub fn loss_and_grad(&self, x: &Array2<F>, targets: &Array2<F>) -> (F, Self) {
        let x = &self.norm.apply(x);
        let a1 = tanh(self.ffn1.forward(x));
        let e = tanh(self.ffn2.forward(&a1));
        let logits = self.head.forward(&e);
        let inv = F::one() / F::from_usize(x.nrows()).expect("batch size");
        let mut loss = F::zero();
        let mut d = logits.clone();
        ndarray::Zip::from(&mut d).and(targets).for_each(|v, &y| {
            // log(1 + e^-|z|) + max(z, 0) - z*y
            let z = *v;
            loss = loss + (F::one() + (-z.abs()).exp()).ln() + z.max(F::zero()) - z * y;
            *v = (sigmoid(z) - y) * inv;
        });
        let mut g = self.zeros_like();
        let de = self.head.backward(&e, &d, &mut g.head);
        let dz2 = tanh_backward(&e, &de);
        let da1 = self.ffn2.backward(&a1, &dz2, &mut g.ffn2);
        let dz1 = tanh_backward(&a1, &da1);
        self.ffn1.backward_params(x, &dz1, &mut g.ffn1);
        (loss * inv, g)
    }

    /// Probability that each registry op is part of a solution.
    pub fn predict(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
    ) -> Result<Vec<(OpCode, f32)>, NnError> {
        let enc = encode_spec(&tensors(inputs), output)?;
        let logits = self.logits(&Self::batch(&[enc.values()]));
        Ok(self
            .registry
            .ops()
            .iter()
            .zip(logits.row(0))
            .map(|(&op, &z)| (op, sigmoid(z).to_f32().unwrap_or(f32::NAN)))
            .collect())
    }
}

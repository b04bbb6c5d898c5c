use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{cast, Float};
use crate::encoding::{ENCODED_LEN, MASK, PAD, SEP};

/// Affine layer `y = x·w + b` with `w: in×out` and `b: 1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array2<F>,
}

impl<F: Float> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array2::zeros((1, outputs)),
        }
    }

    /// Uniform Glorot initialisation scaled by `gain`; biases start at zero.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let a = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((inputs, outputs), |_| cast(rng.gen_range(-a..a))),
            b: Array2::zeros((1, outputs)),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>, grad: &mut Dense<F>) -> Array2<F> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.w.t())
    }

    pub fn backward_params(&self, x: &Array2<F>, dy: &Array2<F>, grad: &mut Dense<F>) {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

/// Model input width: every encoded slot becomes a value feature and a
/// sentinel feature.
pub const FEATURES: usize = 2 * ENCODED_LEN;

/// Splits an encoded row into data values (zero at sentinel slots) followed
/// by sentinel codes (0 for data, 1 PAD, 2 SEP, 3 MASK).
pub fn featurize(row: &[f32], out: &mut Vec<f32>) {
    let code = |v: f32| {
        if v == PAD {
            1.0
        } else if v == SEP {
            2.0
        } else if v == MASK {
            3.0
        } else {
            0.0
        }
    };
    out.extend(row.iter().map(|&v| if code(v) == 0.0 { v } else { 0.0 }));
    out.extend(row.iter().map(|&v| code(v)));
}

/// Frozen per-feature standardization `(x - mean) * scale` applied to encoded
/// specs before the first dense layer. Sentinel slots sit near -10 while
/// data slots sit in [-1, 5]; without this the first layer saturates.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<F> {
    pub mean: Array2<F>,
    pub scale: Array2<F>,
}

impl<F: Float> Standardizer<F> {
    pub fn identity(features: usize) -> Self {
        Standardizer {
            mean: Array2::zeros((1, features)),
            scale: Array2::ones((1, features)),
        }
    }

    /// Fits mean and inverse standard deviation over `rows`. Constant
    /// features are only centered.
    pub fn fit<'a>(features: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let mut sum = vec![0.0f64; features];
        let mut sq = vec![0.0f64; features];
        let mut n = 0usize;
        for row in rows {
            for (j, &v) in row.iter().enumerate().take(features) {
                sum[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mut out = Self::identity(features);
        for j in 0..features {
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0);
            out.mean[[0, j]] = cast(mean);
            out.scale[[0, j]] = cast(if var > 1e-8 { 1.0 / var.sqrt() } else { 1.0 });
        }
        out
    }

    pub fn apply(&self, x: &Array2<F>) -> Array2<F> {
        (x - &self.mean) * &self.scale
    }
}

pub(crate) fn tanh<F: Float>(x: Array2<F>) -> Array2<F> {
    x.mapv_into(|v| v.tanh())
}

pub(crate) fn sigmoid<F: Float>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

/// `dy * (1 - y²)` for `y = tanh(x)`.
pub(crate) fn tanh_backward<F: Float>(y: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut out = dy.clone();
    out.zip_mut_with(y, |d, &v| *d = *d * (F::one() - v * v));
    out
}

/// Gated recurrent unit with gates laid out as `[reset, update, new]`:
///
/// ```text
/// r = σ(x·Wr + br + h·Ur + cr)
/// z = σ(x·Wz + bz + h·Uz + cz)
/// n = tanh(x·Wn + bn + r ⊙ (h·Un + cn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Gru<F> {
    pub wx: Array2<F>,
    pub bx: Array2<F>,
    pub wh: Array2<F>,
    pub bh: Array2<F>,
}

pub(crate) struct GruCache<F> {
    x: Array2<F>,
    h_prev: Array2<F>,
    r: Array2<F>,
    z: Array2<F>,
    n: Array2<F>,
    hn: Array2<F>,
}

impl<F: Float> Gru<F> {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Gru {
            wx: Array2::zeros((inputs, 3 * hidden)),
            bx: Array2::zeros((1, 3 * hidden)),
            wh: Array2::zeros((hidden, 3 * hidden)),
            bh: Array2::zeros((1, 3 * hidden)),
        }
    }

    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let a = 1.0 / (hidden as f64).sqrt();
        let mut u = |r, c| Array2::from_shape_fn((r, c), |_| cast::<F>(rng.gen_range(-a..a)));
        Gru {
            wx: u(inputs, 3 * hidden),
            bx: u(1, 3 * hidden),
            wh: u(hidden, 3 * hidden),
            bh: u(1, 3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    pub(crate) fn step(&self, x: &Array2<F>, h: &Array2<F>) -> (Array2<F>, GruCache<F>) {
        let hd = self.hidden();
        let gi = x.dot(&self.wx) + &self.bx;
        let gh = h.dot(&self.wh) + &self.bh;
        let r = (&gi.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv_into(sigmoid);
        let z = (&gi.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv_into(sigmoid);
        let hn = gh.slice(s![.., 2 * hd..]).to_owned();
        let n = (&gi.slice(s![.., 2 * hd..]) + &(&r * &hn)).mapv_into(|v| v.tanh());
        let mut h_new = n.clone();
        ndarray::Zip::from(&mut h_new)
            .and(&z)
            .and(h)
            .for_each(|o, &zv, &hv| *o = (F::one() - zv) * *o + zv * hv);
        let cache = GruCache {
            x: x.clone(),
            h_prev: h.clone(),
            r,
            z,
            n,
            hn,
        };
        (h_new, cache)
    }

    /// Backpropagates `dh` through one step. Returns `(dx, dh_prev)`.
    pub(crate) fn step_backward(
        &self,
        c: &GruCache<F>,
        dh: &Array2<F>,
        grad: &mut Gru<F>,
    ) -> (Array2<F>, Array2<F>) {
        let hd = self.hidden();
        let rows = dh.nrows();
        let one = F::one();
        let mut dgi = Array2::<F>::zeros((rows, 3 * hd));
        let mut dgh = Array2::<F>::zeros((rows, 3 * hd));
        let mut dh_prev = Array2::<F>::zeros((rows, hd));
        for b in 0..rows {
            for j in 0..hd {
                let d = dh[[b, j]];
                let (r, z, n, hn, hp) = (
                    c.r[[b, j]],
                    c.z[[b, j]],
                    c.n[[b, j]],
                    c.hn[[b, j]],
                    c.h_prev[[b, j]],
                );
                let dn = d * (one - z);
                let dz = d * (hp - n);
                dh_prev[[b, j]] = d * z;
                let dan = dn * (one - n * n);
                let dr = dan * hn;
                let dar = dr * r * (one - r);
                let daz = dz * z * (one - z);
                dgi[[b, j]] = dar;
                dgi[[b, hd + j]] = daz;
                dgi[[b, 2 * hd + j]] = dan;
                dgh[[b, j]] = dar;
                dgh[[b, hd + j]] = daz;
                dgh[[b, 2 * hd + j]] = dan * r;
            }
        }
        grad.wx += &c.x.t().dot(&dgi);
        grad.bx += &dgi.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.wh += &c.h_prev.t().dot(&dgh);
        grad.bh += &dgh.sum_axis(Axis(0)).insert_axis(Axis(0));
        dh_prev += &dgh.dot(&self.wh.t());
        (dgi.dot(&self.wx.t()), dh_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gru_keeps_zero_state() {
        let g = Gru::<f64>::zeros(4, 3);
        let x = Array2::from_elem((2, 4), 0.7);
        let (h, _) = g.step(&x, &Array2::zeros((2, 3)));
        // n = tanh(0) = 0, z = 0.5, h = 0.5 * 0 + 0.5 * 0
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::<f32>::init(5, 3, 1.0, &mut rng);
        let y = d.forward(&Array2::ones((4, 5)));
        assert_eq!(y.dim(), (4, 3));
    }
}

//! One-hidden-layer rectifier network with a softmax output.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"TWML";
pub const MODEL_VERSION: u8 = 1;

/// Network parameters. `logits = relu(x W1 + b1) W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    /// Hidden weights, `d x h`.
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    /// Last-layer weights `W`, `h x N_c`.
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

impl MlpParams {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize, classes: usize) -> Self {
        let hidden_weights = glorot(rng, input, hidden);
        let output_weights = glorot(rng, hidden, classes);
        Self {
            hidden_weights,
            hidden_bias: Array1::zeros(hidden),
            output_weights,
            output_bias: Array1::zeros(classes),
        }
    }

    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            hidden_weights: Array2::zeros((input, hidden)),
            hidden_bias: Array1::zeros(hidden),
            output_weights: Array2::zeros((hidden, classes)),
            output_bias: Array1::zeros(classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_weights.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.output_weights.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.hidden_weights.len()
            + self.hidden_bias.len()
            + self.output_weights.len()
            + self.output_bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.flat_iter().all(|v| v.is_finite())
    }

    /// Parameters in file order: hidden weights, hidden bias, W, output bias.
    pub fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.hidden_weights
            .iter()
            .chain(self.hidden_bias.iter())
            .chain(self.output_weights.iter())
            .chain(self.output_bias.iter())
            .copied()
    }

    fn flat_mut(&mut self, i: usize) -> &mut f64 {
        let sizes = [
            self.hidden_weights.len(),
            self.hidden_bias.len(),
            self.output_weights.len(),
        ];
        let mut i = i;
        if i < sizes[0] {
            return &mut self.hidden_weights.as_slice_mut().expect("standard layout")[i];
        }
        i -= sizes[0];
        if i < sizes[1] {
            return &mut self.hidden_bias[i];
        }
        i -= sizes[1];
        if i < sizes[2] {
            return &mut self.output_weights.as_slice_mut().expect("standard layout")[i];
        }
        i -= sizes[2];
        &mut self.output_bias[i]
    }

    fn hidden(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let pre = x.dot(&self.hidden_weights) + &self.hidden_bias;
        let act = pre.mapv(|v| v.max(0.0));
        (pre, act)
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (_, act) = self.hidden(x);
        act.dot(&self.output_weights) + &self.output_bias
    }

    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax_rows(self.logits(x))
    }

    /// Mean categorical cross-entropy over the batch.
    pub fn loss(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let logits = self.logits(x);
        mean_cross_entropy(&logits, labels)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, MlpGrads) {
        let batch = x.nrows() as f64;
        let (pre, act) = self.hidden(x);
        let logits = act.dot(&self.output_weights) + &self.output_bias;
        let loss = mean_cross_entropy(&logits, labels);

        let mut delta = softmax_rows(logits);
        for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            row[y] -= 1.0;
        }
        delta /= batch;

        let output_weights = act.t().dot(&delta);
        let output_bias = delta.sum_axis(Axis(0));
        let mut back = delta.dot(&self.output_weights.t());
        Zip::from(&mut back).and(&pre).for_each(|b, &p| {
            if p <= 0.0 {
                *b = 0.0;
            }
        });
        let hidden_weights = x.t().dot(&back);
        let hidden_bias = back.sum_axis(Axis(0));
        (
            loss,
            MlpGrads {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            },
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(29 + 8 * self.n_params());
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        for dim in [self.input_dim(), self.hidden_dim(), self.n_classes()] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in self.flat_iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 29 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("missing TWML header".into()));
        }
        if bytes[4] != MODEL_VERSION {
            return Err(bad(format!("unsupported model version {}", bytes[4])));
        }
        let dim = |i: usize| u64::from_le_bytes(bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap()) as usize;
        let (d, h, c) = (dim(0), dim(1), dim(2));
        let mut params = Self::zeros(d, h, c);
        let n = params.n_params();
        let body = &bytes[29..];
        if body.len() != 8 * n {
            return Err(bad(format!(
                "dims ({d}, {h}, {c}) need {} parameter bytes, found {}",
                8 * n,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (a, rest) = values.split_at(d * h);
        let (b, rest) = rest.split_at(h);
        let (w, o) = rest.split_at(h * c);
        params.hidden_weights = Array2::from_shape_vec((d, h), a.to_vec()).unwrap();
        params.hidden_bias = Array1::from(b.to_vec());
        params.output_weights = Array2::from_shape_vec((h, c), w.to_vec()).unwrap();
        params.output_bias = Array1::from(o.to_vec());
        if !params.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(params)
    }
}

pub fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

fn mean_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - row[y];
    }
    total / labels.len() as f64
}

/// Largest `|analytic - numeric| / max(1, |numeric|)` over all parameters,
/// with numeric gradients from central differences of the given step.
pub fn gradient_check(params: &MlpParams, x: ArrayView2<'_, f64>, labels: &[usize], step: f64) -> f64 {
    let (_, grads) = params.loss_and_grad(x, labels);
    let analytic: Vec<f64> = grads
        .hidden_weights
        .iter()
        .chain(grads.hidden_bias.iter())
        .chain(grads.output_weights.iter())
        .chain(grads.output_bias.iter())
        .copied()
        .collect();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.flat_mut(i);
        *probe.flat_mut(i) = orig + step;
        let up = probe.loss(x, labels);
        *probe.flat_mut(i) = orig - step;
        let down = probe.loss(x, labels);
        *probe.flat_mut(i) = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_gives_uniform_rows() {
        let p = MlpParams::zeros(3, 4, 5);
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64);
        let probs = p.probabilities(x.view());
        assert!(probs.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn zero_model_bias_gradient_closed_form() {
        let p = MlpParams::zeros(2, 3, 4);
        let x = Array2::zeros((1, 2));
        let (loss, g) = p.loss_and_grad(x.view(), &[2]);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        let expected = [0.25, 0.25, -0.75, 0.25];
        for (a, b) in g.output_bias.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(gradient_check(&p, x.view(), &[2], 1e-4) <= 1e-4);
    }

    #[test]
    fn random_models_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut p = MlpParams::init(&mut rng, 6, 8, 4);
            p.hidden_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            p.output_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-2.0..2.0));
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
            let d = gradient_check(&p, x.view(), &labels, 1e-4);
            assert!((0.0..=1e-4).contains(&d), "discrepancy {d}");
        }
    }

    #[test]
    fn model_bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::init(&mut rng, 3, 5, 2);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"TWML");
        assert_eq!(bytes[4], MODEL_VERSION);
        assert_eq!(bytes.len(), 29 + 8 * p.n_params());
        let back = MlpParams::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, p);
        assert!(MlpParams::from_bytes(&bytes[..bytes.len() - 8], Path::new("m")).is_err());
    }
}

//! Dense feed-forward network with SELU hidden layers, trained by Adam on
//! mean squared error.
//!
//! Layout: a first SELU layer on the input, further SELU hidden layers each
//! followed by inverted dropout, and a linear output layer. Dropout is only
//! active while training; [`Mlp::forward`] and [`Mlp::gradient`] are
//! deterministic.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Regressor;
use crate::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    /// Hidden layer widths, input side first.
    pub widths: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            widths: vec![128, 128, 64, 32],
            dropout: 0.1,
            epochs: 100,
            lr: 1e-3,
            batch: 32,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidSpec(
                "mlp widths must be non-empty and each at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec(format!(
                "mlp dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::InvalidSpec(
                "mlp batch and epochs must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "mlp lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in x out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    /// Whether inverted dropout follows this layer during training.
    pub dropout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGradients {
    /// Flattened in the same order as [`Mlp::param`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    dropout_rate: f64,
    loss_history: Vec<f64>,
}

/// Activations saved by a forward pass for backpropagation.
struct Trace {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl Mlp {
    /// LeCun-normal initialization (variance `1 / fan_in`), zero biases.
    pub fn new(
        input_dim: usize,
        widths: &[usize],
        output_dim: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(widths);
        dims.push(output_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let std = (1.0 / w[0] as f64).sqrt();
                DenseLayer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        std * rng.sample::<f64, _>(StandardNormal)
                    }),
                    bias: Array1::zeros(w[1]),
                    activation: if i == last {
                        Activation::Linear
                    } else {
                        Activation::Selu
                    },
                    dropout: i > 0 && i < last && dropout_rate > 0.0,
                }
            })
            .collect();
        Self {
            layers,
            dropout_rate,
            loss_history: Vec::new(),
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].weights.ncols(),
                    got: pair[1].weights.nrows(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "layer bias",
                    expected: l.weights.ncols(),
                    got: l.bias.len(),
                });
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
            loss_history: Vec::new(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mean training-batch loss of each epoch, in order.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weights.len();
            if index < nw {
                let cols = l.weights.ncols();
                return (li, Some((index / cols, index % cols)), 0);
            }
            index -= nw;
            if index < l.bias.len() {
                return (li, None, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index: each layer's weights (row-major) then its bias.
    pub fn param(&self, index: usize) -> f64 {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weights[rc],
            (li, None, b) => self.layers[li].bias[b],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weights[rc] = value,
            (li, None, b) => self.layers[li].bias[b] = value,
        }
    }

    fn run(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers + 1);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        let mut current = x.to_owned();
        let keep = 1.0 - self.dropout_rate;
        for layer in &self.layers {
            let z = current.dot(&layer.weights) + &layer.bias;
            let mut a = match layer.activation {
                Activation::Selu => z.mapv(selu),
                Activation::Linear => z.clone(),
            };
            let mask = match (&mut rng, layer.dropout) {
                (Some(r), true) => {
                    let m = Array2::from_shape_simple_fn(a.dim(), || {
                        if r.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            inputs.push(std::mem::replace(&mut current, a));
            pre_activations.push(z);
            masks.push(mask);
        }
        Trace {
            inputs,
            pre_activations,
            masks,
            output: current,
        }
    }

    /// Inference forward pass (dropout disabled).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.run(x, None).output
    }

    fn backprop(&self, trace: &Trace, y: ArrayView2<'_, f64>) -> (f64, MlpGradients) {
        let diff = &trace.output - &y;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;

        let n_layers = self.layers.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut upstream = diff * (2.0 / count);
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            if let Some(mask) = &trace.masks[li] {
                upstream *= mask;
            }
            let dz = match layer.activation {
                Activation::Selu => upstream * trace.pre_activations[li].mapv(selu_derivative),
                Activation::Linear => upstream,
            };
            weights.push(trace.inputs[li].t().dot(&dz));
            biases.push(dz.sum_axis(Axis(0)));
            upstream = dz.dot(&layer.weights.t());
        }
        weights.reverse();
        biases.reverse();
        (loss, MlpGradients { weights, biases })
    }

    /// Mean squared error over all batch entries and its analytic gradient,
    /// with dropout disabled.
    pub fn gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
    ) -> Result<(f64, MlpGradients)> {
        if x.nrows() == 0 {
            return Err(Error::EmptySample);
        }
        super::check_input(self, x)?;
        if y.dim() != (x.nrows(), self.output_dim()) {
            return Err(Error::DimensionMismatch {
                context: "mlp batch targets",
                expected: self.output_dim(),
                got: y.ncols(),
            });
        }
        Ok(self.backprop(&self.run(x, None), y))
    }

    pub fn mse(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
        let diff = self.forward(x) - y;
        diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64
    }

    /// Mini-batch Adam on shuffled rows.
    pub fn train(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        params: &MlpParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let mut m_w: Vec<Array2<f64>> = self.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect();
        let mut v_w = m_w.clone();
        let mut m_b: Vec<Array1<f64>> = self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect();
        let mut v_b = m_b.clone();

        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0i32;
        for epoch in 0..params.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(params.batch) {
                let xb = x.select(Axis(0), chunk);
                let yb = y.select(Axis(0), chunk);
                let trace = self.run(xb.view(), Some(rng));
                let (loss, grads) = self.backprop(&trace, yb.view());
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                total += loss;
                batches += 1;

                step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(step);
                let c2 = 1.0 - ADAM_BETA2.powi(step);
                let lr = params.lr;
                for (li, layer) in self.layers.iter_mut().enumerate() {
                    adam_update(&mut layer.weights, &grads.weights[li], &mut m_w[li], &mut v_w[li], lr, c1, c2);
                    adam_update(&mut layer.bias, &grads.biases[li], &mut m_b[li], &mut v_b[li], lr, c1, c2);
                }
            }
            let epoch_loss = total / batches as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            self.loss_history.push(epoch_loss);
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        });
}

impl Regressor for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        super::check_input(self, x)?;
        Ok(self.forward(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn selu_constants() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - 1.0507).abs() < 1e-4);
        assert!((selu(-1.0) - 1.0507 * 1.6733 * ((-1.0f64).exp() - 1.0)).abs() < 1e-4);
        assert!((selu(-50.0) + SELU_LAMBDA * SELU_ALPHA).abs() < 1e-12);
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        let layer = DenseLayer {
            weights: array![[0.5], [-1.0]],
            bias: array![0.25],
            activation: Activation::Linear,
            dropout: false,
        };
        let net = Mlp::from_layers(vec![layer], 0.0).unwrap();
        let x = array![[2.0, 3.0]];
        let y = array![[1.0]];
        let (_, g) = net.gradient(x.view(), y.view()).unwrap();
        let yhat = 0.5 * 2.0 - 3.0 + 0.25;
        let r = 2.0 * (yhat - 1.0);
        assert_eq!(g.weights[0], array![[r * 2.0], [r * 3.0]]);
        assert_eq!(g.biases[0], array![r]);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(3, &[4, 4], 2, 0.0, &mut rng);
        let x = array![[0.1, -0.2, 0.3], [1.0, 0.5, -0.5]];
        let y = net.forward(x.view());
        let (loss, g) = net.gradient(x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(2, &[3, 3], 2, 0.0, &mut rng);
        for i in 0..net.num_params() {
            net.set_param(i, 0.0);
        }
        let out_bias = net.layers.last().unwrap().bias.len();
        let n = net.num_params();
        net.set_param(n - out_bias, 0.7);
        net.set_param(n - out_bias + 1, -2.0);
        let p = net.forward(array![[1.0, 2.0], [-3.0, 4.0]].view());
        assert_eq!(p, array![[0.7, -2.0], [0.7, -2.0]]);
    }

    #[test]
    fn matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Mlp::new(3, &[5, 4], 2, 0.2, &mut rng);
        let x = Array2::from_shape_simple_fn((6, 3), || rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_simple_fn((6, 2), || rng.sample::<f64, _>(StandardNormal));
        let (_, g) = net.gradient(x.view(), y.view()).unwrap();
        let analytic = g.flatten();
        let h = 1e-5;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.set_param(i, net.param(i) + h);
            let mut minus = net.clone();
            minus.set_param(i, net.param(i) - h);
            let fd = (plus.mse(x.view(), y.view()) - minus.mse(x.view(), y.view())) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-4,
                "param {i}: {} vs {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn dropout_placement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(2, &[8, 8, 8, 8], 1, 0.2, &mut rng);
        let flags: Vec<bool> = net.layers().iter().map(|l| l.dropout).collect();
        assert_eq!(flags, vec![false, true, true, true, false]);
        assert_eq!(net.layers().last().unwrap().activation, Activation::Linear);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = MlpParams::default();
        p.dropout = 1.0;
        assert!(p.validate().is_err());
        let p = MlpParams {
            widths: vec![4, 0],
            ..MlpParams::default()
        };
        assert!(p.validate().is_err());
    }
}

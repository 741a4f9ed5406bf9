//! Small feed-forward network engine in `f64`.
//!
//! A [`Network`] is an ordered stack of dense, batch-norm, activation and
//! dropout layers. `forward` in [`Mode::Train`] caches what `backward` needs;
//! `predict` is the read-only inference path.

mod gradcheck;
mod loss;
mod optim;

pub use gradcheck::{
    analytic_gradients, finite_difference_grad, max_relative_error, numeric_gradient,
    relative_error, DEFAULT_FD_STEP,
};
pub use loss::{bce_loss, mse_loss};
pub use optim::{adam_step, AdamConfig, AdamState};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Architecture of one layer. Widths of activation and dropout layers follow
/// from the preceding layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        activation: Activation,
    },
    BatchNorm {
        width: usize,
        momentum: f64,
        epsilon: f64,
    },
    Activation {
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

/// Per-tensor gradients, aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &[&[f64]]) -> Self {
        Self {
            tensors: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn extend(&mut self, other: Gradients) {
        self.tensors.extend(other.tensors);
    }

    pub fn has_non_finite(&self) -> bool {
        self.tensors.iter().flatten().any(|g| !g.is_finite())
    }
}

/// Anything with an ordered list of trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `output x input`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    cache: Option<(Array2<f64>, Array2<f64>)>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "weights {:?} with bias of length {}",
                weights.dim(),
                bias.len()
            )));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
            cache: None,
        })
    }

    /// Uniform init with limit `sqrt(6 / fan)`: He (`fan = in`) for layers
    /// feeding a ReLU, Glorot (`fan = in + out`) otherwise. Biases start at 0.
    fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, he: bool, rng: &mut R) -> Self {
        let fan = if he { input } else { input + output } as f64;
        let limit = (6.0 / fan).sqrt();
        let weights = Array2::from_shape_fn((output, input), |_| rng.random_range(-limit..limit));
        Self {
            weights,
            bias: Array1::zeros(output),
            activation,
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    fn backward(&mut self, grad: ArrayView2<f64>) -> Result<(Vec<Vec<f64>>, Array2<f64>)> {
        let (input, output) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dense backward without a cached forward pass".into()))?;
        check_grad(&grad, output.dim())?;
        let mut dz = grad.to_owned();
        if self.activation == Activation::Relu {
            Zip::from(&mut dz).and(&output).for_each(|g, a| {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let dw = dz.t().dot(&input);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.weights);
        Ok((vec![dw.iter().copied().collect(), db.to_vec()], dx))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Option<(Array2<f64>, Array1<f64>)>,
}

impl BatchNormLayer {
    pub fn new(width: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "batch norm needs epsilon > 0 and momentum in [0, 1), got {epsilon}, {momentum}"
            )));
        }
        Ok(Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            epsilon,
            momentum,
            cache: None,
        })
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn forward_train(&mut self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Shape(format!(
                "batch norm in training mode needs at least 2 rows, got {n}"
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;

        let m = self.momentum;
        let unbiased = n as f64 / (n as f64 - 1.0);
        Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, b| *r = m * *r + (1.0 - m) * b);
        Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, b| *r = m * *r + (1.0 - m) * b * unbiased);

        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    fn apply_infer(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let scale = Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|g, v| g / (v + self.epsilon).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        x * &scale + &shift
    }

    fn backward(&mut self, grad: ArrayView2<f64>) -> Result<(Vec<Vec<f64>>, Array2<f64>)> {
        let (xhat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batch-norm backward without a cached forward pass".into()))?;
        check_grad(&grad, xhat.dim())?;
        let n = grad.nrows() as f64;
        let dgamma = (&grad * &xhat).sum_axis(Axis(0));
        let dbeta = grad.sum_axis(Axis(0));
        let dxhat = &grad * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n - &sum_dxhat - &(&xhat * &sum_dxhat_xhat);
        dx *= &(inv_std / n);
        Ok((vec![dgamma.to_vec(), dbeta.to_vec()], dx))
    }
}

#[derive(Debug, Clone)]
pub struct ActivationLayer {
    pub activation: Activation,
    cache: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct DropoutLayer {
    pub rate: f64,
    cache: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    BatchNorm(BatchNormLayer),
    Activation(ActivationLayer),
    Dropout(DropoutLayer),
}

impl Layer {
    fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                input: d.input_dim(),
                output: d.output_dim(),
                activation: d.activation,
            },
            Layer::BatchNorm(bn) => LayerSpec::BatchNorm {
                width: bn.width(),
                momentum: bn.momentum,
                epsilon: bn.epsilon,
            },
            Layer::Activation(a) => LayerSpec::Activation {
                activation: a.activation,
            },
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.cache = None,
            Layer::BatchNorm(bn) => bn.cache = None,
            Layer::Activation(a) => a.cache = None,
            Layer::Dropout(d) => d.cache = None,
        }
    }
}

/// Ordered layer stack with a train/infer switch.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    mode: Mode,
}

impl Network {
    /// Builds and initializes a network from layer specs, checking that widths chain.
    pub fn from_specs<R: Rng + ?Sized>(input_dim: usize, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut width = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense {
                    input,
                    output,
                    activation,
                } => {
                    if input != width || output == 0 {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense {input}->{output} after width {width}"
                        )));
                    }
                    width = output;
                    let he = activation == Activation::Relu || feeds_relu(&specs[i + 1..]);
                    Layer::Dense(DenseLayer::init(input, output, activation, he, rng))
                }
                LayerSpec::BatchNorm {
                    width: w,
                    momentum,
                    epsilon,
                } => {
                    if w != width {
                        return Err(Error::Shape(format!(
                            "layer {i}: batch norm of width {w} after width {width}"
                        )));
                    }
                    Layer::BatchNorm(BatchNormLayer::new(w, momentum, epsilon)?)
                }
                LayerSpec::Activation { activation } => Layer::Activation(ActivationLayer {
                    activation,
                    cache: None,
                }),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!("layer {i}: dropout rate {rate} not in [0, 1)")));
                    }
                    Layer::Dropout(DropoutLayer { rate, cache: None })
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            layers,
            input_dim,
            mode: Mode::Train,
        })
    }

    /// Wraps existing layers, checking the width chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) if d.input_dim() != width => {
                    return Err(Error::Shape(format!(
                        "layer {i}: dense expects {} inputs, previous width {width}",
                        d.input_dim()
                    )))
                }
                Layer::Dense(d) => width = d.output_dim(),
                Layer::BatchNorm(bn) if bn.width() != width => {
                    return Err(Error::Shape(format!(
                        "layer {i}: batch norm width {} after width {width}",
                        bn.width()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            layers,
            input_dim,
            mode: Mode::Train,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.output_dim()),
                Layer::BatchNorm(bn) => Some(bn.width()),
                _ => None,
            })
            .unwrap_or(self.input_dim)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Infer {
            self.layers.iter_mut().for_each(Layer::clear_cache);
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Runs the batch through every layer. In training mode batch-norm uses
    /// batch statistics, dropout draws masks from `rng`, and intermediates are
    /// cached for [`Network::backward`]. In inference mode this is `predict`.
    pub fn forward(&mut self, x: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        if self.mode == Mode::Infer {
            return self.predict(x);
        }
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Dense(d) => {
                    let out = d.apply(&h.view());
                    d.cache = Some((h, out.clone()));
                    out
                }
                Layer::BatchNorm(bn) => bn.forward_train(&h.view())?,
                Layer::Activation(a) => {
                    if a.activation == Activation::Relu {
                        h.mapv_inplace(|v| v.max(0.0));
                    }
                    a.cache = Some(h.clone());
                    h
                }
                Layer::Dropout(d) => {
                    if d.rate == 0.0 {
                        d.cache = None;
                        h
                    } else {
                        let keep = 1.0 - d.rate;
                        let mask = Array2::from_shape_simple_fn(h.dim(), || {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        h *= &mask;
                        d.cache = Some(mask);
                        h
                    }
                }
            };
        }
        Ok(h)
    }

    /// Inference pass: running batch-norm statistics, dropout as identity, no caching.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.apply(&h.view()),
                Layer::BatchNorm(bn) => bn.apply_infer(&h.view()),
                Layer::Activation(a) => {
                    if a.activation == Activation::Relu {
                        h.mapv_inplace(|v| v.max(0.0));
                    }
                    h
                }
                Layer::Dropout(_) => h,
            };
        }
        Ok(h)
    }

    /// Reverse pass for the most recent training-mode forward. Returns gradients
    /// for every trainable tensor plus the gradient with respect to the input.
    pub fn backward(&mut self, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if self.mode != Mode::Train {
            return Err(Error::State("backward requires training mode".into()));
        }
        let mut grad = upstream.to_owned();
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter_mut().rev() {
            let (tensors, dx) = match layer {
                Layer::Dense(d) => d.backward(grad.view())?,
                Layer::BatchNorm(bn) => bn.backward(grad.view())?,
                Layer::Activation(a) => {
                    let out = a
                        .cache
                        .take()
                        .ok_or_else(|| Error::State("activation backward without forward".into()))?;
                    check_grad(&grad.view(), out.dim())?;
                    if a.activation == Activation::Relu {
                        Zip::from(&mut grad).and(&out).for_each(|g, o| {
                            if *o <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    }
                    (Vec::new(), grad)
                }
                Layer::Dropout(d) => {
                    if let Some(mask) = d.cache.take() {
                        check_grad(&grad.view(), mask.dim())?;
                        grad *= &mask;
                    }
                    (Vec::new(), grad)
                }
            };
            per_layer.push(tensors);
            grad = dx;
        }
        per_layer.reverse();
        Ok((
            Gradients {
                tensors: per_layer.into_iter().flatten().collect(),
            },
            grad,
        ))
    }

    /// Every stored tensor (trainable and running statistics), in serialization order.
    pub fn state_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice().expect("standard layout"));
                    out.push(d.bias.as_slice().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice().expect("contiguous"));
                    out.push(bn.beta.as_slice().expect("contiguous"));
                    out.push(bn.running_mean.as_slice().expect("contiguous"));
                    out.push(bn.running_var.as_slice().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice_mut().expect("standard layout"));
                    out.push(d.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                    out.push(bn.beta.as_slice_mut().expect("contiguous"));
                    out.push(bn.running_mean.as_slice_mut().expect("contiguous"));
                    out.push(bn.running_var.as_slice_mut().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    /// Copies all stored tensors from a network with identical architecture.
    pub fn copy_state_from(&mut self, other: &Network) -> Result<()> {
        if self.input_dim != other.input_dim || self.specs() != other.specs() {
            return Err(Error::Shape("architectures differ".into()));
        }
        for (dst, src) in self.state_tensors_mut().into_iter().zip(other.state_tensors()) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// Whether any dropout layer would perturb activations in training mode.
    pub fn has_active_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Dropout(d) if d.rate > 0.0))
    }
}

impl Parameterized for Network {
    fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice().expect("standard layout"));
                    out.push(d.bias.as_slice().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice().expect("contiguous"));
                    out.push(bn.beta.as_slice().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice_mut().expect("standard layout"));
                    out.push(d.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                    out.push(bn.beta.as_slice_mut().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }
}

fn check_grad(grad: &ArrayView2<f64>, expected: (usize, usize)) -> Result<()> {
    if grad.dim() != expected {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match forward output {expected:?}",
            grad.dim()
        )));
    }
    Ok(())
}

/// True if the next non-batch-norm layer is a ReLU.
fn feeds_relu(rest: &[LayerSpec]) -> bool {
    rest.iter()
        .find(|s| !matches!(s, LayerSpec::BatchNorm { .. }))
        .is_some_and(|s| {
            matches!(
                s,
                LayerSpec::Activation {
                    activation: Activation::Relu
                }
            )
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn dense(input: usize, output: usize, activation: Activation) -> LayerSpec {
        LayerSpec::Dense {
            input,
            output,
            activation,
        }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let layer = DenseLayer::new(Array2::eye(3), Array1::zeros(3), Activation::Linear).unwrap();
        let mut net = Network::from_layers(3, vec![Layer::Dense(layer)]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.forward(x.view(), &mut rng(0)).unwrap(), x);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let layer =
            DenseLayer::new(array![[1.0, 1.0], [2.0, 0.5]], array![-10.0, -10.0], Activation::Relu).unwrap();
        let net = Network::from_layers(2, vec![Layer::Dense(layer)]).unwrap();
        let out = net.predict(array![[1.0, 2.0], [3.0, -1.0]].view()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_layer_hand_computed() {
        // h = relu(W1 x + b1) = relu([1 - 2 + 0.5, 2 + 0 - 1]) = [0, 1]
        // y = W2 h + b2 = 3*0 + (-1)*1 + 0.25 = -0.75
        let l1 = DenseLayer::new(
            array![[1.0, -1.0], [2.0, 0.0]],
            array![0.5, -1.0],
            Activation::Relu,
        )
        .unwrap();
        let l2 = DenseLayer::new(array![[3.0, -1.0]], array![0.25], Activation::Linear).unwrap();
        let mut net = Network::from_layers(2, vec![Layer::Dense(l1), Layer::Dense(l2)]).unwrap();
        let out = net.forward(array![[1.0, 2.0]].view(), &mut rng(0)).unwrap();
        assert_eq!(out, array![[-0.75]]);
    }

    #[test]
    fn shape_errors() {
        let mut net = Network::from_specs(3, &[dense(3, 2, Activation::Linear)], &mut rng(1)).unwrap();
        assert!(matches!(
            net.forward(array![[1.0, 2.0]].view(), &mut rng(0)),
            Err(Error::Shape(_))
        ));
        assert!(Network::from_specs(3, &[dense(4, 2, Activation::Linear)], &mut rng(1)).is_err());
        let bn = LayerSpec::BatchNorm {
            width: 2,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        };
        let mut net = Network::from_specs(3, &[dense(3, 2, Activation::Linear), bn], &mut rng(1)).unwrap();
        assert!(matches!(
            net.forward(array![[1.0, 2.0, 3.0]].view(), &mut rng(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = Network::from_specs(2, &[dense(2, 1, Activation::Linear)], &mut rng(1)).unwrap();
        assert!(matches!(net.backward(array![[1.0]].view()), Err(Error::State(_))));
    }

    #[test]
    fn linear_layer_mse_gradient_closed_form() {
        let w = array![[0.3, -0.2]];
        let layer = DenseLayer::new(w.clone(), array![0.1], Activation::Linear).unwrap();
        let mut net = Network::from_layers(2, vec![Layer::Dense(layer)]).unwrap();
        let x = array![[2.0, -1.0]];
        let y = array![[1.0]];
        let pred = net.forward(x.view(), &mut rng(0)).unwrap();
        let (_, g) = mse_loss(pred.view(), y.view()).unwrap();
        let (grads, _) = net.backward(g.view()).unwrap();
        let yhat = 0.3 * 2.0 + 0.2 + 0.1;
        let r = 2.0 * (yhat - 1.0);
        assert!((grads.tensors[0][0] - r * 2.0).abs() < 1e-12);
        assert!((grads.tensors[0][1] - r * -1.0).abs() < 1e-12);
        assert!((grads.tensors[1][0] - r).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let specs = [
            dense(4, 6, Activation::Linear),
            LayerSpec::BatchNorm {
                width: 6,
                momentum: BN_MOMENTUM,
                epsilon: BN_EPSILON,
            },
            LayerSpec::Activation {
                activation: Activation::Relu,
            },
            LayerSpec::Dropout { rate: 0.3 },
            dense(6, 2, Activation::Linear),
        ];
        let mut net = Network::from_specs(4, &specs, &mut rng(5)).unwrap();
        let x = Array2::from_shape_fn((8, 4), |(i, j)| (i as f64 - j as f64).sin());
        net.forward(x.view(), &mut rng(1)).unwrap();
        let (grads, dx) = net.backward(Array2::zeros((8, 2)).view()).unwrap();
        assert!(grads.tensors.iter().flatten().all(|g| *g == 0.0));
        assert!(dx.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let specs = [LayerSpec::BatchNorm {
            width: 5,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }];
        let mut net = Network::from_specs(5, &specs, &mut rng(0)).unwrap();
        let mut r = rng(9);
        let x = Array2::from_shape_fn((32, 5), |(_, j)| 10.0 * j as f64 + r.random_range(-3.0..3.0));
        let y = net.forward(x.view(), &mut r).unwrap();
        for col in y.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn dropout_statistics_and_inference_identity() {
        let rate = 0.3;
        let mut net = Network::from_specs(100, &[LayerSpec::Dropout { rate }], &mut rng(0)).unwrap();
        let x = Array2::ones((200, 100));
        let y = net.forward(x.view(), &mut rng(17)).unwrap();
        let n = y.len() as f64;
        let dropped = y.iter().filter(|v| **v == 0.0).count() as f64;
        // two-cell chi-square against Binomial(n, rate), df = 1, p = 0.001 cutoff 10.83
        let expected = n * rate;
        let chi2 = (dropped - expected).powi(2) / expected
            + ((n - dropped) - n * (1.0 - rate)).powi(2) / (n * (1.0 - rate));
        assert!(chi2 < 10.83, "chi2 {chi2}");
        assert!(y.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.7).abs() < 1e-12));

        net.set_mode(Mode::Infer);
        assert_eq!(net.forward(x.view(), &mut rng(3)).unwrap(), x);
    }

    #[test]
    fn determinism_for_fixed_seed() {
        let specs = [dense(3, 4, Activation::Relu), LayerSpec::Dropout { rate: 0.5 }];
        let a = Network::from_specs(3, &specs, &mut rng(2)).unwrap();
        let b = Network::from_specs(3, &specs, &mut rng(2)).unwrap();
        assert_eq!(a.params(), b.params());
        let x = array![[1.0, 2.0, 3.0], [0.5, 0.1, -1.0]];
        let (mut a, mut b) = (a, b);
        assert_eq!(
            a.forward(x.view(), &mut rng(8)).unwrap(),
            b.forward(x.view(), &mut rng(8)).unwrap()
        );
    }

    #[test]
    fn copy_state_checks_architecture() {
        let a = Network::from_specs(3, &[dense(3, 4, Activation::Relu)], &mut rng(2)).unwrap();
        let mut b = Network::from_specs(3, &[dense(3, 4, Activation::Relu)], &mut rng(3)).unwrap();
        let mut c = Network::from_specs(3, &[dense(3, 5, Activation::Relu)], &mut rng(3)).unwrap();
        b.copy_state_from(&a).unwrap();
        assert_eq!(a.state_tensors(), b.state_tensors());
        assert!(c.copy_state_from(&a).is_err());
    }
}

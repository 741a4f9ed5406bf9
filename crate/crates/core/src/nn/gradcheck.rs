//! Central finite-difference gradients, the reference that backprop is tested
//! against.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Mode, Network, Parameterized};
use crate::error::Result;

pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// `(f(θ + h·e_i) - f(θ - h·e_i)) / 2h` for every trainable scalar of `model`.
/// The objective receives a scratch copy; `model` itself is never touched.
pub fn numeric_gradient<M, F>(model: &M, mut objective: F, h: f64) -> Result<Gradients>
where
    M: Parameterized + Clone,
    F: FnMut(&mut M) -> Result<f64>,
{
    let mut work = model.clone();
    let lens: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut tensors = Vec::with_capacity(lens.len());
    for (t, &len) in lens.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work.params()[t][i];
            work.params_mut()[t][i] = orig + h;
            let plus = objective(&mut work)?;
            work.params_mut()[t][i] = orig - h;
            let minus = objective(&mut work)?;
            work.params_mut()[t][i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        tensors.push(g);
    }
    Ok(Gradients { tensors })
}

/// Finite-difference gradient of `loss(network(batch))`. Every evaluation runs
/// in training mode with a dropout stream reseeded from `seed`, so the masks
/// match those of [`analytic_gradients`] with the same seed.
pub fn finite_difference_grad<L>(
    network: &Network,
    loss: L,
    batch: ArrayView2<f64>,
    h: f64,
    seed: u64,
) -> Result<Gradients>
where
    L: Fn(ArrayView2<f64>) -> Result<(f64, Array2<f64>)>,
{
    numeric_gradient(
        network,
        |net: &mut Network| {
            net.set_mode(Mode::Train);
            let out = net.forward(batch, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Ok(loss(out.view())?.0)
        },
        h,
    )
}

/// Loss and backprop gradients for one training-mode pass.
pub fn analytic_gradients<L>(
    network: &mut Network,
    loss: L,
    batch: ArrayView2<f64>,
    seed: u64,
) -> Result<(f64, Gradients)>
where
    L: Fn(ArrayView2<f64>) -> Result<(f64, Array2<f64>)>,
{
    network.set_mode(Mode::Train);
    let out = network.forward(batch, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let (value, upstream) = loss(out.view())?;
    let (grads, _) = network.backward(upstream.view())?;
    Ok((value, grads))
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps gradients that are zero
/// up to rounding from producing meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.tensors
        .iter()
        .flatten()
        .zip(b.tensors.iter().flatten())
        .map(|(x, y)| relative_error(*x, *y, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mse_loss, Activation, LayerSpec, BN_EPSILON, BN_MOMENTUM};
    use rand::Rng;

    #[derive(Clone)]
    struct Quadratic(Vec<f64>);

    impl Parameterized for Quadratic {
        fn params(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn quadratic_derivative_is_exact() {
        // f(x) = 3x^2 + 2x; central differences are exact for quadratics
        let g = numeric_gradient(
            &Quadratic(vec![1.5]),
            |q: &mut Quadratic| Ok(3.0 * q.0[0] * q.0[0] + 2.0 * q.0[0]),
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!((g.tensors[0][0] - 11.0).abs() < 1e-9);
    }

    #[test]
    fn backprop_matches_finite_differences_with_dropout_mask_fixed() {
        let specs = [
            LayerSpec::Dense { input: 3, output: 5, activation: Activation::Linear },
            LayerSpec::BatchNorm { width: 5, momentum: BN_MOMENTUM, epsilon: BN_EPSILON },
            LayerSpec::Activation { activation: Activation::Relu },
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Dense { input: 5, output: 2, activation: Activation::Linear },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = Network::from_specs(3, &specs, &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |p: ArrayView2<f64>| mse_loss(p, y.view());
        let numeric = finite_difference_grad(&net, loss, x.view(), 1e-5, 4).unwrap();
        let (_, analytic) = analytic_gradients(&mut net, loss, x.view(), 4).unwrap();
        assert!(max_relative_error(&numeric, &analytic, 1e-6) < 1e-4);
    }
}

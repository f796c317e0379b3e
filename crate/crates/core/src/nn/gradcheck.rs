use rand::Rng;

use super::{bce_with_logits, sigmoid, Cache, ForwardMode, Network, Result, Tensor};
use crate::seed;

/// Gradient magnitudes below this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(tensor index, entry index)` of the worst entry.
    pub worst: (usize, usize),
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn frozen_argmax(caches: &[Cache<f64>]) -> Vec<Vec<usize>> {
    caches
        .iter()
        .filter_map(|c| match c {
            Cache::Pool { argmax, .. } => Some(argmax.clone()),
            _ => None,
        })
        .collect()
}

/// Compares analytic parameter gradients of the BCE loss against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` on up to `samples_per_tensor`
/// randomly chosen entries of every parameter tensor. Dropout is off and
/// pooling decisions are frozen at the unperturbed forward pass.
pub fn grad_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    label: u8,
    epsilon: f64,
    samples_per_tensor: usize,
    sample_seed: u64,
) -> Result<GradCheckReport> {
    let (out, caches) = net.forward(input, ForwardMode::Inference)?;
    let (_, dz) = bce_with_logits(out.data()[0], label);
    let mut grads = net.zero_grads();
    net.backward(&caches, Tensor::from_vec(vec![dz]), &mut grads, false)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let frozen = frozen_argmax(&caches);

    let loss_at = |candidate: &Network<f64>| -> Result<f64> {
        let (y, _) = candidate.forward(input, ForwardMode::FrozenPool(&frozen))?;
        Ok(bce_with_logits(y.data()[0], label).0)
    };

    let mut rng = seed::rng(sample_seed);
    let mut probe = net.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: (0, 0) };
    for (t, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let original = probe.params()[t][i];
            probe.params_mut()[t][i] = original + epsilon;
            let plus = loss_at(&probe)?;
            probe.params_mut()[t][i] = original - epsilon;
            let minus = loss_at(&probe)?;
            probe.params_mut()[t][i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = rel_error(grad[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (t, i);
            }
        }
    }
    Ok(report)
}

/// Checks the logit's input gradient against central differences on
/// `coords` random input entries. With `probability` set, the score is the
/// sigmoid output instead of the logit.
pub fn input_grad_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    epsilon: f64,
    coords: usize,
    probability: bool,
    sample_seed: u64,
) -> Result<f64> {
    let (_, caches) = net.forward(input, ForwardMode::Inference)?;
    let frozen = frozen_argmax(&caches);
    let grad = if probability { net.input_gradient_proba(input)? } else { net.input_gradient(input)? };
    let score = |x: &Tensor<f64>| -> Result<f64> {
        let (y, _) = net.forward(x, ForwardMode::FrozenPool(&frozen))?;
        let z = y.data()[0];
        Ok(if probability { sigmoid(z) } else { z })
    };
    let mut rng = seed::rng(sample_seed);
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    for _ in 0..coords {
        let i = rng.random_range(0..x.numel());
        let original = x.data()[i];
        x.data_mut()[i] = original + epsilon;
        let plus = score(&x)?;
        x.data_mut()[i] = original - epsilon;
        let minus = score(&x)?;
        x.data_mut()[i] = original;
        worst = worst.max(rel_error(grad.data()[i], (plus - minus) / (2.0 * epsilon)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn random_input(shape: Vec<usize>, seed_value: u64) -> Tensor<f64> {
        let mut rng = seed::rng(seed_value);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_model_passes_tight_check() {
        let specs = [
            LayerSpec::Dense { in_dim: 6, out_dim: 5 },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::Dense { in_dim: 5, out_dim: 1 },
            LayerSpec::Sigmoid,
        ];
        let net = Network::<f64>::from_specs(vec![6], &specs, 3).unwrap();
        let x = random_input(vec![6], 4);
        let r = grad_check(&net, &x, 1, 1e-5, 100, 0).unwrap();
        assert_eq!(r.checked, 30 + 5 + 5 + 1);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn sign_flip_is_detected() {
        let specs = [LayerSpec::Dense { in_dim: 4, out_dim: 1 }, LayerSpec::Sigmoid];
        let mut net = Network::<f64>::from_specs(vec![4], &specs, 3).unwrap();
        net.inject_sign_flip();
        let x = random_input(vec![4], 5);
        let r = grad_check(&net, &x, 0, 1e-5, 10, 0).unwrap();
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn small_cnn_input_gradient() {
        let specs = [
            LayerSpec::Conv3d { in_ch: 2, out_ch: 2, kernel: 3, padding: 1 },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::MaxPool3d,
            LayerSpec::Flatten,
            LayerSpec::Dense { in_dim: 16, out_dim: 1 },
            LayerSpec::Sigmoid,
        ];
        let net = Network::<f64>::from_specs(vec![2, 4, 4, 4], &specs, 8).unwrap();
        let x = random_input(vec![2, 4, 4, 4], 9);
        assert!(input_grad_check(&net, &x, 1e-5, 20, false, 1).unwrap() <= 1e-4);
        assert!(input_grad_check(&net, &x, 1e-5, 20, true, 1).unwrap() <= 1e-4);
        assert!(grad_check(&net, &x, 1, 1e-5, 30, 2).unwrap().max_rel_error <= 1e-4);
    }
}

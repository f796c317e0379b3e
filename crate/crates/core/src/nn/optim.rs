use super::{Gradients, Network, NnError, Result};
use crate::Real;

/// SGD with momentum: `v ← μ v + g`, `w ← w − η v`.
///
/// No dampening, no Nesterov term, no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    /// One buffer per parameter tensor, in `Network::params` order.
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &Network<T>, learning_rate: f64, momentum: f64) -> Self {
        let velocity = net.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
        Sgd { learning_rate, momentum, velocity }
    }

    /// Applies one update with the given gradients.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        let g = grads.tensors();
        let mut params = net.params_mut();
        if g.len() != params.len() || self.velocity.len() != params.len() {
            return Err(NnError::Shape("sgd: parameter/gradient/velocity count mismatch".into()));
        }
        let lr = T::from_f64(self.learning_rate);
        let mu = T::from_f64(self.momentum);
        for ((w, g), v) in params.iter_mut().zip(g).zip(&mut self.velocity) {
            if w.len() != g.len() || w.len() != v.len() {
                return Err(NnError::Shape("sgd: tensor length mismatch".into()));
            }
            for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *wi = *wi - lr * *vi;
            }
        }
        Ok(())
    }
}

/// Single-tensor form of the update, used by tests and the verify suite.
pub fn sgd_momentum_step(w: &mut [f64], g: &[f64], v: &mut [f64], learning_rate: f64, momentum: f64) {
    for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = momentum * *vi + gi;
        *wi -= learning_rate * *vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_and_second_step() {
        let mut w = [0.0];
        let mut v = [0.0];
        sgd_momentum_step(&mut w, &[1.0], &mut v, 0.001, 0.9);
        assert!((w[0] + 0.001).abs() < 1e-15);
        let before = w[0];
        sgd_momentum_step(&mut w, &[1.0], &mut v, 0.001, 0.9);
        assert!((v[0] - 1.9).abs() < 1e-15);
        assert!((w[0] - before + 0.0019).abs() < 1e-15);
    }

    #[test]
    fn momentum_keeps_drifting_without_gradient() {
        let mut w = [0.0];
        let mut v = [1.0];
        sgd_momentum_step(&mut w, &[0.0], &mut v, 0.01, 0.9);
        assert!((w[0] + 0.01 * 0.9).abs() < 1e-15);
        sgd_momentum_step(&mut w, &[0.0], &mut v, 0.01, 0.9);
        assert!((w[0] + 0.01 * 0.9 + 0.01 * 0.81).abs() < 1e-15);
    }
}

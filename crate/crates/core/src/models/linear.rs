//! Ridge classifier and squared-hinge linear SVM on z-scored features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_training_set, Classifier, Learner, ModelError, Result};
use crate::dataio::{Architecture, Checkpoint, CheckpointMeta, TensorEntry};
use crate::nn::Tensor;
use crate::Real;

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `n` log-evenly spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect()
}

/// Ten linearly spaced α in [0.1, 10].
pub fn ridge_alpha_grid() -> Vec<f64> {
    linspace(0.1, 10.0, 10)
}

/// Ten log-spaced β in [0.5, 50].
pub fn svm_beta_grid() -> Vec<f64> {
    logspace(0.5, 50.0, 10)
}

/// Per-feature z-scoring fitted on training data. Constant features get a
/// scale of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(xs: &[Vec<f64>]) -> Self {
        let d = xs.first().map_or(0, Vec::len);
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for x in xs {
            var.iter_mut().zip(x.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Scaler { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Scaler { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub w: Vec<f64>,
    pub b: f64,
    /// Set when the solve needed diagonal jitter.
    pub jittered: bool,
}

fn dims(x: &[Vec<f64>], y: &[f64]) -> Result<(usize, usize)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(ModelError::Data(format!("need >= 2 samples with one target each, got {n} and {}", y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(ModelError::Data("feature rows must share a nonzero length".into()));
    }
    Ok((n, d))
}

fn solve_spd(mut a: DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch.solve(rhs), false));
    }
    for i in 0..a.nrows() {
        a[(i, i)] += 1e-10;
    }
    let ch = a.cholesky().ok_or_else(|| ModelError::SingularSystem("ridge system not positive definite".into()))?;
    log::warn!("ridge system needed jitter");
    Ok((ch.solve(rhs), true))
}

/// Minimizes `Σ(w·xᵢ + b − yᵢ)² + α‖w‖²` with `b` unpenalized, via the
/// normal equations on centered data (dual form when D > N).
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<LinearFit> {
    let (n, d) = dims(x, y)?;
    if !(alpha > 0.0) {
        return Err(ModelError::Config(format!("ridge alpha must be > 0, got {alpha}")));
    }
    let mean_x: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean_x[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - mean_y));
    let (w, jittered) = if d <= n {
        let mut a = xc.transpose() * &xc;
        for i in 0..d {
            a[(i, i)] += alpha;
        }
        solve_spd(a, &(xc.transpose() * &yc))?
    } else {
        let mut k = &xc * xc.transpose();
        for i in 0..n {
            k[(i, i)] += alpha;
        }
        let (dual, j) = solve_spd(k, &yc)?;
        (xc.transpose() * dual, j)
    };
    let w: Vec<f64> = w.iter().copied().collect();
    let b = mean_y - w.iter().zip(&mean_x).map(|(a, m)| a * m).sum::<f64>();
    Ok(LinearFit { w, b, jittered })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; the best iterate is returned.
    pub converged: bool,
}

/// `penalty(w) + β Σ max(0, 1 − yᵢ(w·xᵢ + b))²`.
pub fn svm_objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, beta: f64, penalty: Penalty) -> f64 {
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let m = 1.0 - yi * (xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b);
            if m > 0.0 {
                m * m
            } else {
                0.0
            }
        })
        .sum();
    let reg = match penalty {
        Penalty::L2 => w.iter().map(|v| v * v).sum::<f64>(),
        Penalty::L1 => w.iter().map(|v| v.abs()).sum::<f64>(),
    };
    reg + beta * loss
}

/// Smooth part of the objective and its gradient over `(w, b)`.
fn smooth(x: &[Vec<f64>], y: &[f64], theta: &[f64], beta: f64, penalty: Penalty, grad: &mut [f64]) -> f64 {
    let d = theta.len() - 1;
    let (w, b) = (&theta[..d], theta[d]);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut f = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let m = 1.0 - yi * (xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b);
        if m > 0.0 {
            f += beta * m * m;
            let c = -2.0 * beta * yi * m;
            grad[..d].iter_mut().zip(xi).for_each(|(g, v)| *g += c * v);
            grad[d] += c;
        }
    }
    if penalty == Penalty::L2 {
        f += w.iter().map(|v| v * v).sum::<f64>();
        grad[..d].iter_mut().zip(w).for_each(|(g, v)| *g += 2.0 * v);
    }
    f
}

fn prox(v: &mut [f64], step: f64, penalty: Penalty) {
    if penalty == Penalty::L1 {
        let d = v.len() - 1;
        for w in &mut v[..d] {
            *w = w.signum() * (w.abs() - step).max(0.0);
        }
    }
}

const SVM_TOL: f64 = 1e-8;
const SVM_MAX_ITER: usize = 10_000;

/// Accelerated proximal gradient (FISTA) with backtracking and adaptive
/// restart, started at `w = 0, b = 0`. Stops when the relative objective
/// change drops below 1e-8 or after 10⁴ iterations.
pub fn svm_fit(x: &[Vec<f64>], y: &[f64], beta: f64, penalty: Penalty) -> Result<SvmFit> {
    let (_, d) = dims(x, y)?;
    if !(beta > 0.0) {
        return Err(ModelError::Config(format!("svm beta must be > 0, got {beta}")));
    }
    if y.iter().any(|v| v.abs() != 1.0) {
        return Err(ModelError::Data("svm targets must be -1 or +1".into()));
    }
    let full = |t: &[f64]| svm_objective(x, y, &t[..d], t[d], beta, penalty);
    let mut xk = vec![0.0; d + 1];
    let mut yk = xk.clone();
    let mut f_prev = full(&xk);
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut grad = vec![0.0; d + 1];
    let mut scratch = vec![0.0; d + 1];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < SVM_MAX_ITER {
        iterations += 1;
        let fy = smooth(x, y, &yk, beta, penalty, &mut grad);
        let z = loop {
            let mut z: Vec<f64> = yk.iter().zip(&grad).map(|(a, g)| a - g / lip).collect();
            prox(&mut z, 1.0 / lip, penalty);
            let diff: Vec<f64> = z.iter().zip(&yk).map(|(a, b)| a - b).collect();
            let model = fy + grad.iter().zip(&diff).map(|(g, v)| g * v).sum::<f64>()
                + 0.5 * lip * diff.iter().map(|v| v * v).sum::<f64>();
            if smooth(x, y, &z, beta, penalty, &mut scratch) <= model * (1.0 + 1e-12) + 1e-300 {
                break z;
            }
            lip *= 2.0;
        };
        let fz = full(&z);
        if fz > f_prev {
            // momentum overshoot: restart from the last accepted point
            t = 1.0;
            yk.clone_from(&xk);
            continue;
        }
        let change = (f_prev - fz).abs();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        yk = z.iter().zip(&xk).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        xk = z;
        t = t_next;
        let rel = change / f_prev.abs().max(f64::MIN_POSITIVE);
        f_prev = fz;
        if rel < SVM_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("svm did not converge in {SVM_MAX_ITER} iterations; returning best iterate");
    }
    Ok(SvmFit { w: xk[..d].to_vec(), b: xk[d], objective: f_prev, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearKind {
    Ridge { alpha: f64 },
    Svm { beta: f64, penalty: Penalty },
}

impl LinearKind {
    pub fn family(&self) -> &'static str {
        match self {
            LinearKind::Ridge { .. } => "ridge",
            LinearKind::Svm { penalty: Penalty::L2, .. } => "svm_l2",
            LinearKind::Svm { penalty: Penalty::L1, .. } => "svm_l1",
        }
    }

    pub fn hyperparameter(&self) -> f64 {
        match *self {
            LinearKind::Ridge { alpha } => alpha,
            LinearKind::Svm { beta, .. } => beta,
        }
    }
}

/// `score(x) = w·z(x) + b` on z-scored features `z(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub scaler: Scaler,
    pub w: Vec<f64>,
    pub b: f64,
}

fn features<T: Real>(x: &Tensor<T>) -> Vec<f64> {
    x.data().iter().map(|v| v.as_f64()).collect()
}

impl LinearModel {
    pub fn fit(kind: LinearKind, xs: &[Vec<f64>], labels: &[u8]) -> Result<Self> {
        check_training_set(xs.len(), labels)?;
        let scaler = Scaler::fit(xs);
        let z: Vec<Vec<f64>> = xs.iter().map(|x| scaler.transform(x)).collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let (w, b) = match kind {
            LinearKind::Ridge { alpha } => {
                let f = ridge_fit(&z, &y, alpha)?;
                (f.w, f.b)
            }
            LinearKind::Svm { beta, penalty } => {
                let f = svm_fit(&z, &y, beta, penalty)?;
                (f.w, f.b)
            }
        };
        Ok(LinearModel { kind, scaler, w, b })
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(ModelError::Data(format!("model expects {} features, got {}", self.w.len(), x.len())));
        }
        let z = self.scaler.transform(x);
        Ok(z.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }

    /// Weight on raw (unscaled) inputs, i.e. the gradient of the score.
    pub fn effective_weights(&self) -> Vec<f64> {
        self.w.iter().zip(&self.scaler.scale).map(|(w, s)| w / s).collect()
    }

    pub fn to_checkpoint(&self, atlas_id: &str) -> Checkpoint {
        let architecture = Architecture::Linear { dim: self.w.len() };
        let entries = architecture.expected_tensors().into_iter().map(|(name, len)| TensorEntry { name, len }).collect();
        Checkpoint {
            meta: CheckpointMeta {
                family: self.kind.family().to_string(),
                atlas_id: atlas_id.to_string(),
                architecture,
                dtype: "f64le".into(),
                tensors: entries,
                training: None,
                config: serde_json::to_value(self.kind).expect("serializable"),
                blob: String::new(),
            },
            tensors: vec![self.w.clone(), vec![self.b], self.scaler.mean.clone(), self.scaler.scale.clone()],
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.validate()?;
        if !matches!(c.meta.architecture, Architecture::Linear { .. }) {
            return Err(ModelError::Config(format!("checkpoint family {:?} is not linear", c.meta.family)));
        }
        let kind: LinearKind = serde_json::from_value(c.meta.config.clone())
            .map_err(|e| ModelError::Config(format!("linear checkpoint config: {e}")))?;
        Ok(LinearModel {
            kind,
            w: c.tensors[0].clone(),
            b: c.tensors[1][0],
            scaler: Scaler { mean: c.tensors[2].clone(), scale: c.tensors[3].clone() },
        })
    }
}

impl<T: Real> Classifier<T> for LinearModel {
    fn score(&self, x: &Tensor<T>) -> Result<f64> {
        self.decision(&features(x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RidgeLearner {
    pub alpha: f64,
}

impl<T: Real> Learner<T> for RidgeLearner {
    type Model = LinearModel;
    fn fit(&self, inputs: &[&Tensor<T>], labels: &[u8], _seed: u64) -> Result<LinearModel> {
        let xs: Vec<Vec<f64>> = inputs.iter().map(|x| features(x)).collect();
        LinearModel::fit(LinearKind::Ridge { alpha: self.alpha }, &xs, labels)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SvmLearner {
    pub beta: f64,
    pub penalty: Penalty,
}

impl<T: Real> Learner<T> for SvmLearner {
    type Model = LinearModel;
    fn fit(&self, inputs: &[&Tensor<T>], labels: &[u8], _seed: u64) -> Result<LinearModel> {
        let xs: Vec<Vec<f64>> = inputs.iter().map(|x| features(x)).collect();
        LinearModel::fit(LinearKind::Svm { beta: self.beta, penalty: self.penalty }, &xs, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn grids() {
        let a = ridge_alpha_grid();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 0.1);
        assert_eq!(a[9], 10.0);
        for w in a.windows(2) {
            assert!((w[1] - w[0] - 1.1).abs() < 1e-12);
        }
        let b = svm_beta_grid();
        assert!((b[0] - 0.5).abs() < 1e-12 && (b[9] - 50.0).abs() < 1e-9);
        for w in b.windows(2) {
            assert!((w[1] / w[0] - 100f64.powf(1.0 / 9.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn ridge_closed_form() {
        let f = ridge_fit(&[vec![1.0], vec![-1.0]], &[1.0, -1.0], 1.0).unwrap();
        assert!((f.w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(f.b.abs() < 1e-12);
    }

    #[test]
    fn ridge_huge_alpha_predicts_majority() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0], vec![-1.0, 3.0]];
        let y = [1.0, 1.0, 1.0, -1.0];
        let f = ridge_fit(&x, &y, 1e12).unwrap();
        assert!(f.w.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
        assert!(f.b > 0.0);
    }

    #[test]
    fn ridge_duplicating_samples_keeps_minimizer_up_to_alpha_scaling() {
        // Σ over duplicated data doubles the loss; doubling α keeps the minimizer
        let mut rng = seed::rng(2);
        let x: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = ridge_fit(&x, &y, 0.5).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let b = ridge_fit(&x2, &y2, 1.0).unwrap();
        for (u, v) in a.w.iter().zip(&b.w) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!((a.b - b.b).abs() < 1e-10);
    }

    fn stationarity_residual(x: &[Vec<f64>], y: &[f64], alpha: f64, w: &[f64]) -> (f64, f64) {
        let n = x.len();
        let d = w.len();
        let mx: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let my = y.iter().sum::<f64>() / n as f64;
        let mut res = vec![0.0; d];
        let mut xty = vec![0.0; d];
        for (r, yi) in x.iter().zip(y) {
            let rc: Vec<f64> = r.iter().zip(&mx).map(|(a, m)| a - m).collect();
            let dot: f64 = rc.iter().zip(w).map(|(a, b)| a * b).sum();
            for j in 0..d {
                res[j] += rc[j] * dot;
                xty[j] += rc[j] * (yi - my);
            }
        }
        for j in 0..d {
            res[j] += alpha * w[j] - xty[j];
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        (norm(&res), norm(&xty))
    }

    #[test]
    fn ridge_primal_and_dual_are_stationary() {
        let mut rng = seed::rng(8);
        for (n, d) in [(30, 5), (8, 20)] {
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let f = ridge_fit(&x, &y, 0.7).unwrap();
            let (res, scale) = stationarity_residual(&x, &y, 0.7, &f.w);
            assert!(res <= 1e-8 * scale, "n={n} d={d}: {res} vs {scale}");
        }
    }

    #[test]
    fn svm_symmetric_one_dimensional() {
        let x = vec![vec![2.0], vec![-2.0]];
        let y = [1.0, -1.0];
        let f = svm_fit(&x, &y, 1.0, Penalty::L2).unwrap();
        assert!(f.b.abs() < 1e-6);
        assert!(f.w[0] > 0.0);
        assert!(f.converged);
        assert!(f.objective <= 2.0);
    }

    /// Exhaustive grid over (w₁, w₂, b) refined around the best cell.
    fn brute_force_min(x: &[Vec<f64>], y: &[f64], beta: f64, penalty: Penalty) -> (f64, Vec<f64>) {
        let mut center = [0.0f64; 3];
        let mut half = 4.0;
        let mut best = f64::INFINITY;
        for _ in 0..30 {
            let steps = 20;
            let mut next = center;
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let p = [
                            center[0] - half + 2.0 * half * i as f64 / steps as f64,
                            center[1] - half + 2.0 * half * j as f64 / steps as f64,
                            center[2] - half + 2.0 * half * k as f64 / steps as f64,
                        ];
                        let f = svm_objective(x, y, &p[..2], p[2], beta, penalty);
                        if f < best {
                            best = f;
                            next = p;
                        }
                    }
                }
            }
            center = next;
            half *= 0.5;
        }
        (best, center.to_vec())
    }

    fn two_d_problem(seed_value: u64, n: usize, informative_only: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = seed::rng(seed_value);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let yi = if i % 2 == 0 { 1.0 } else { -1.0 };
            let a = yi * 0.8 + rng.random_range(-1.0..1.0);
            let b = if informative_only { rng.random_range(-1.0..1.0) } else { yi * 0.3 + rng.random_range(-1.0..1.0) };
            x.push(vec![a, b]);
            y.push(yi);
        }
        (x, y)
    }

    #[test]
    fn svm_l2_matches_brute_force() {
        for s in 0..4 {
            let (x, y) = two_d_problem(s, 30, false);
            let fit = svm_fit(&x, &y, 0.8, Penalty::L2).unwrap();
            let (best, _) = brute_force_min(&x, &y, 0.8, Penalty::L2);
            assert!((fit.objective - best).abs() <= 1e-3 * best, "{} vs {best}", fit.objective);
            assert!(fit.objective <= 0.8 * 30.0);
        }
    }

    #[test]
    fn svm_l1_suppresses_noise_feature() {
        let (x, y) = two_d_problem(11, 400, true);
        let fit = svm_fit(&x, &y, 1.0, Penalty::L1).unwrap();
        assert!(fit.w[1].abs() < fit.w[0].abs());
        let (best, _) = brute_force_min(&x, &y, 1.0, Penalty::L1);
        assert!((fit.objective - best).abs() <= 1e-3 * best);
        let small = svm_fit(&x, &y, 0.002, Penalty::L1).unwrap();
        assert_eq!(small.w[1], 0.0);
        assert!(small.objective <= 0.002 * 400.0);
    }

    #[test]
    fn scaler_handles_constant_features() {
        let s = Scaler::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.transform(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn linear_checkpoint_round_trip() {
        let xs = vec![vec![1.0, 2.0], vec![2.0, 0.0], vec![-1.0, 1.0], vec![0.0, -2.0]];
        let m = LinearModel::fit(LinearKind::Svm { beta: 2.0, penalty: Penalty::L1 }, &xs, &[1, 1, 0, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("svm.json");
        crate::dataio::save_checkpoint(&m.to_checkpoint("a"), &p).unwrap();
        let back = LinearModel::from_checkpoint(&crate::dataio::load_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn label_invariant_to_positive_scaling(w in proptest::collection::vec(-3.0f64..3.0, 3), b in -2.0f64..2.0,
                                               x in proptest::collection::vec(-3.0f64..3.0, 3), c in 0.01f64..100.0) {
            let mk = |s: f64| LinearModel {
                kind: LinearKind::Ridge { alpha: 1.0 },
                scaler: Scaler::identity(3),
                w: w.iter().map(|v| v * s).collect(),
                b: b * s,
            };
            let t = Tensor::from_vec(x.clone());
            prop_assert_eq!(mk(1.0).predict_label(&t).unwrap(), mk(c).predict_label(&t).unwrap());
        }
    }
}

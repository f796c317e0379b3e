//! Self-checks run by `connectome verify`: finite-difference gradient checks
//! for every layer type and the default CNN, and randomized comparisons of
//! core numerics against naive reference implementations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connectivity::pearson;
use crate::evaluation::roc_and_auc;
use crate::models::{build_cnn, CnnConfig};
use crate::nn::{grad_check, input_grad_check, maxpool3d_forward, Conv3d, LayerSpec, Network, NnError, Tensor};
use crate::preprocess::scrub;
use crate::seed;

/// Tolerance for checks whose path includes convolution, pooling or cropping.
pub const CONV_POOL_TOL: f64 = 1e-4;
/// Tolerance for dense and activation-only paths.
pub const DENSE_TOL: f64 = 1e-6;
/// The sign-flipped backward must exceed this error.
pub const NEGATIVE_CONTROL_MIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Passes when `metric <= tolerance`.
    AtMost,
    /// Passes when `metric > tolerance` (negative controls).
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub metric: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub instances: usize,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, metric: f64, tolerance: f64, comparison: Comparison, instances: usize) -> Self {
        let passed = match comparison {
            Comparison::AtMost => metric <= tolerance,
            Comparison::Above => metric > tolerance,
        };
        Check { name: name.into(), metric, tolerance, comparison, instances, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Wall time; not serialized so reports are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

impl VerifyReport {
    fn from_checks(suite: &str, checks: Vec<Check>, started: std::time::Instant) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        VerifyReport { suite: suite.into(), checks, passed, seconds: started.elapsed().as_secs_f64() }
    }

    pub fn merge(suite: &str, parts: Vec<VerifyReport>) -> Self {
        let seconds = parts.iter().map(|p| p.seconds).sum();
        let checks: Vec<Check> = parts.into_iter().flat_map(|p| p.checks).collect();
        let passed = checks.iter().all(|c| c.passed);
        VerifyReport { suite: suite.into(), checks, passed, seconds }
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                let op = if c.comparison == Comparison::AtMost { "<=" } else { ">" };
                format!(
                    "{} {:<28} {:.3e} {op} {:.0e} (n={})\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.metric,
                    c.tolerance,
                    c.instances
                )
            })
            .collect()
    }
}

/// Faults that can be injected to confirm the checks catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    SignFlip,
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

struct Case {
    name: &'static str,
    input: Vec<usize>,
    specs: Vec<LayerSpec>,
    tol: f64,
    check_input: bool,
}

fn head(dim: usize) -> [LayerSpec; 3] {
    [LayerSpec::Flatten, LayerSpec::Dense { in_dim: dim, out_dim: 1 }, LayerSpec::Sigmoid]
}

fn layer_cases() -> Vec<Case> {
    use LayerSpec::*;
    let with_head = |mut v: Vec<LayerSpec>, dim: usize| {
        v.extend(head(dim));
        v
    };
    vec![
        Case {
            name: "conv3d_padded",
            input: vec![2, 4, 4, 4],
            specs: with_head(vec![Conv3d { in_ch: 2, out_ch: 3, kernel: 3, padding: 1 }], 192),
            tol: CONV_POOL_TOL,
            check_input: true,
        },
        Case {
            name: "conv3d_valid",
            input: vec![2, 5, 5, 5],
            specs: with_head(vec![Conv3d { in_ch: 2, out_ch: 2, kernel: 3, padding: 0 }], 54),
            tol: CONV_POOL_TOL,
            check_input: true,
        },
        Case {
            name: "maxpool3d",
            input: vec![2, 4, 4, 4],
            specs: with_head(vec![MaxPool3d], 16),
            tol: CONV_POOL_TOL,
            check_input: true,
        },
        Case {
            name: "center_crop3d",
            input: vec![2, 5, 5, 5],
            specs: with_head(vec![CenterCrop3d { target: [4, 4, 4] }, MaxPool3d], 16),
            tol: CONV_POOL_TOL,
            check_input: true,
        },
        Case {
            name: "dense",
            input: vec![7],
            specs: vec![Dense { in_dim: 7, out_dim: 5 }, Dense { in_dim: 5, out_dim: 1 }, Sigmoid],
            tol: DENSE_TOL,
            check_input: true,
        },
        Case {
            name: "elu",
            input: vec![7],
            specs: vec![Dense { in_dim: 7, out_dim: 6 }, Elu { alpha: 1.0 }, Dense { in_dim: 6, out_dim: 1 }, Sigmoid],
            tol: DENSE_TOL,
            check_input: true,
        },
        Case {
            name: "dropout_inference",
            input: vec![7],
            specs: vec![Dense { in_dim: 7, out_dim: 6 }, Dropout { rate: 0.5 }, Dense { in_dim: 6, out_dim: 1 }, Sigmoid],
            tol: DENSE_TOL,
            check_input: true,
        },
        Case {
            name: "sigmoid_bce",
            input: vec![4],
            specs: vec![Dense { in_dim: 4, out_dim: 1 }, Sigmoid],
            tol: DENSE_TOL,
            check_input: false,
        },
    ]
}

fn check_net(name: &str, net: &Network<f64>, tol: f64, check_input: bool, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>, NnError> {
    let x = random_tensor(net.input_shape().to_vec(), rng);
    let mut out = Vec::new();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for label in [0u8, 1] {
        let r = grad_check(net, &x, label, 1e-5, samples, rng.random())?;
        worst = worst.max(r.max_rel_error);
        n += r.checked;
    }
    out.push(Check::new(&format!("grad/{name}"), worst, tol, Comparison::AtMost, n));
    if check_input {
        let e = input_grad_check(net, &x, 1e-5, samples, false, rng.random())?;
        out.push(Check::new(&format!("input_grad/{name}"), e, tol, Comparison::AtMost, samples));
    }
    Ok(out)
}

/// Gradient checks for each layer type, for the default CNN on an 8³
/// four-channel input, and a sign-flip negative control.
pub fn gradient_suite(seed_value: u64, fault: Option<Fault>) -> Result<VerifyReport, NnError> {
    let started = std::time::Instant::now();
    let mut rng = seed::rng(seed::derive(seed_value, "verify/gradients"));
    let mut checks = Vec::new();
    let prepare = |mut net: Network<f64>| {
        if fault == Some(Fault::SignFlip) {
            net.inject_sign_flip();
        }
        net
    };
    for case in layer_cases() {
        let net = prepare(Network::from_specs(case.input.clone(), &case.specs, rng.random())?);
        checks.extend(check_net(case.name, &net, case.tol, case.check_input, 40, &mut rng)?);
    }

    let graph = build_cnn(&CnnConfig::default(), 4, [8, 8, 8]).map_err(|e| NnError::Shape(e.to_string()))?;
    let cnn = prepare(Network::from_specs(graph.input_shape.clone(), &graph.layers, rng.random())?);
    checks.extend(check_net("default_cnn_8cube_4ch", &cnn, CONV_POOL_TOL, true, 25, &mut rng)?);

    let mut flipped = Network::from_specs(vec![7], &layer_cases()[5].specs, rng.random())?;
    flipped.inject_sign_flip();
    let x = random_tensor(vec![7], &mut rng);
    let r = grad_check(&flipped, &x, 1, 1e-5, 40, rng.random())?;
    checks.push(Check::new("negative_control/sign_flip", r.max_rel_error, NEGATIVE_CONTROL_MIN, Comparison::Above, r.checked));
    Ok(VerifyReport::from_checks("gradients", checks, started))
}

/// Mean product of z-scores; an independent route to Pearson's r.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
        (m, sd)
    };
    let (mx, sx) = stats(x);
    let (my, sy) = stats(y);
    x.iter().zip(y).map(|(a, b)| (a - mx) / sx * ((b - my) / sy)).sum::<f64>() / n
}

/// Direct seven-loop cross-correlation in f64.
fn conv_oracle(x: &Tensor<f32>, c: &Conv3d<f32>) -> Vec<f64> {
    let s = x.shape();
    let (k, p) = (c.kernel as isize, c.padding as isize);
    let o: Vec<usize> = (1..4).map(|i| (s[i] as isize + 2 * p - k + 1) as usize).collect();
    let mut out = vec![0.0; c.out_ch * o[0] * o[1] * o[2]];
    let at = |ch: usize, a: isize, b: isize, d: isize| -> f64 {
        if a < 0 || b < 0 || d < 0 || a >= s[1] as isize || b >= s[2] as isize || d >= s[3] as isize {
            0.0
        } else {
            x.data()[((ch * s[1] + a as usize) * s[2] + b as usize) * s[3] + d as usize] as f64
        }
    };
    for oc in 0..c.out_ch {
        for a in 0..o[0] {
            for b in 0..o[1] {
                for d in 0..o[2] {
                    let mut acc = c.bias[oc] as f64;
                    for ic in 0..c.in_ch {
                        for i in 0..k {
                            for j in 0..k {
                                for l in 0..k {
                                    let w = c.weight[(((oc * c.in_ch + ic) * c.kernel + i as usize) * c.kernel + j as usize) * c.kernel + l as usize];
                                    acc += w as f64 * at(ic, a as isize + i - p, b as isize + j - p, d as isize + l - p);
                                }
                            }
                        }
                    }
                    out[((oc * o[0] + a) * o[1] + b) * o[2] + d] = acc;
                }
            }
        }
    }
    out
}

/// Scans each 2×2×2 window in index order, keeping the first maximum.
fn pool_oracle(x: &Tensor<f32>) -> (Vec<f32>, Vec<usize>) {
    let s = x.shape();
    let idx = |c: usize, a: usize, b: usize, d: usize| ((c * s[1] + a) * s[2] + b) * s[3] + d;
    let mut vals = Vec::new();
    let mut args = Vec::new();
    for c in 0..s[0] {
        for a in (0..s[1]).step_by(2) {
            for b in (0..s[2]).step_by(2) {
                for d in (0..s[3]).step_by(2) {
                    let mut window: Vec<usize> = Vec::new();
                    for i in 0..2 {
                        for j in 0..2 {
                            for l in 0..2 {
                                window.push(idx(c, a + i, b + j, d + l));
                            }
                        }
                    }
                    window.sort_unstable();
                    let best = window.iter().map(|&w| x.data()[w]).fold(f32::NEG_INFINITY, f32::max);
                    let first = *window.iter().find(|&&w| x.data()[w] == best).expect("window nonempty");
                    vals.push(best);
                    args.push(first);
                }
            }
        }
    }
    (vals, args)
}

fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Union of `[t−1, t+2]` over offending frames, clipped to the series.
fn scrub_oracle(fd: &[f64], thr: f64) -> Vec<usize> {
    let n = fd.len() as i64;
    let mut set = std::collections::BTreeSet::new();
    for (t, &v) in fd.iter().enumerate() {
        if v > thr {
            for u in (t as i64 - 1)..=(t as i64 + 2) {
                if (0..n).contains(&u) {
                    set.insert(u as usize);
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Randomized comparisons against the reference implementations above,
/// `instances` cases each (at least 100).
pub fn oracle_suite(seed_value: u64, instances: usize) -> Result<VerifyReport, NnError> {
    let started = std::time::Instant::now();
    let n = instances.max(100);
    let mut rng = seed::rng(seed::derive(seed_value, "verify/oracles"));
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let len = rng.random_range(3..400);
        let shift = rng.random_range(-5.0..5.0);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0) + shift).collect();
        let mix = rng.random_range(-1.0..1.0);
        let y: Vec<f64> = x.iter().map(|v| mix * v + rng.random_range(-1.0..1.0)).collect();
        let (r, _) = pearson(&x, &y).map_err(|e| NnError::Shape(e.to_string()))?;
        worst = worst.max((r - pearson_oracle(&x, &y)).abs());
    }
    checks.push(Check::new("oracle/pearson", worst, 1e-12, Comparison::AtMost, n));

    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (ic, oc) = (rng.random_range(1..4), rng.random_range(1..4));
        let k = [1, 3][rng.random_range(0..2)];
        let p = rng.random_range(0..=k / 2 + 1);
        let dims: Vec<usize> = (0..3).map(|_| rng.random_range(k.max(2)..7)).collect();
        let x = Tensor::new(
            vec![ic, dims[0], dims[1], dims[2]],
            (0..ic * dims.iter().product::<usize>()).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )?;
        let w = (0..oc * ic * k * k * k).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let b = (0..oc).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let conv = Conv3d::new(ic, oc, k, p, w, b)?;
        let got = conv.apply(&x)?;
        let want = conv_oracle(&x, &conv);
        if got.numel() != want.len() {
            worst = f64::INFINITY;
            continue;
        }
        for (g, r) in got.data().iter().zip(&want) {
            worst = worst.max((*g as f64 - r).abs() / r.abs().max(1.0));
        }
    }
    checks.push(Check::new("oracle/conv3d", worst, 1e-5, Comparison::AtMost, n));

    let mut mismatches = 0usize;
    for _ in 0..n {
        let c = rng.random_range(1..4);
        let dims: Vec<usize> = (0..3).map(|_| 2 * rng.random_range(1..4)).collect();
        // a small value set forces ties
        let x = Tensor::new(
            vec![c, dims[0], dims[1], dims[2]],
            (0..c * dims.iter().product::<usize>()).map(|_| rng.random_range(0..4) as f32).collect(),
        )?;
        let (got, arg) = maxpool3d_forward(&x)?;
        let (want, want_arg) = pool_oracle(&x);
        if got.data() != want.as_slice() || arg != want_arg {
            mismatches += 1;
        }
    }
    checks.push(Check::new("oracle/maxpool3d", mismatches as f64, 0.0, Comparison::AtMost, n));

    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let len = rng.random_range(2..120);
        let mut labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let (_, auc) = roc_and_auc(&scores, &labels).map_err(|e| NnError::Shape(e.to_string()))?;
        worst = worst.max((auc - auc_oracle(&scores, &labels)).abs());
    }
    checks.push(Check::new("oracle/auc", worst, 1e-12, Comparison::AtMost, n));

    let mut mismatches = 0usize;
    for _ in 0..n {
        let len = rng.random_range(1..300);
        let rate = rng.random_range(0.0..0.2);
        let fd: Vec<f64> = (0..len)
            .map(|t| if t > 0 && rng.random_bool(rate) { rng.random_range(0.51..3.0) } else { rng.random_range(0.0..0.5) })
            .collect();
        let got = scrub(&fd, 0.5);
        let want = scrub_oracle(&fd, 0.5);
        let kept: Vec<usize> = (0..len).filter(|t| !want.contains(t)).collect();
        if got.removed_indices != want || got.kept_indices != kept {
            mismatches += 1;
        }
    }
    checks.push(Check::new("oracle/scrub", mismatches as f64, 0.0, Comparison::AtMost, n));

    Ok(VerifyReport::from_checks("oracles", checks, started))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_suite_passes() {
        let r = oracle_suite(1, 100).unwrap();
        assert!(r.passed, "{}", r.summary());
        assert!(r.checks.iter().all(|c| c.instances >= 100));
    }

    #[test]
    fn gradient_suite_passes_and_catches_sign_flip() {
        let r = gradient_suite(2, None).unwrap();
        assert!(r.passed, "{}", r.summary());
        let bad = gradient_suite(2, Some(Fault::SignFlip)).unwrap();
        assert!(!bad.passed);
        assert!(bad.checks.iter().filter(|c| c.name.starts_with("grad/")).all(|c| !c.passed));
    }

    #[test]
    fn oracles_agree_on_small_cases() {
        assert_eq!(scrub_oracle(&[0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0], 0.5), vec![2, 3, 4, 5]);
        assert_eq!(auc_oracle(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]), 0.75);
        assert!((pearson_oracle(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }
}

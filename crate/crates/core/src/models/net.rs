//! Network families and the mini-batch SGD training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_training_set, Classifier, Learner, ModelError, Result};
use crate::dataio::{Architecture, Checkpoint, CheckpointMeta, TensorEntry, TrainingState};
use crate::nn::{bce_with_logits, ForwardMode, LayerSpec, Network, Sgd, Tensor};
use crate::seed;
use crate::Real;

pub use crate::dataio::EpochRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::Config(format!(
                "need learning_rate > 0 and momentum in [0, 1), got {} and {}",
                self.learning_rate, self.momentum
            )));
        }
        Ok(())
    }
}

/// 3D CNN on fingerprint volumes: conv blocks (Conv3d + ELU + MaxPool 2³)
/// followed by a dense head and a sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub dense_hidden: Vec<usize>,
    pub elu_alpha: f64,
    /// Dropout after each dense hidden activation; 0 disables it.
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_channels: vec![32, 64, 128],
            kernel: 3,
            padding: 1,
            dense_hidden: vec![128],
            elu_alpha: 1.0,
            dropout: 0.0,
            train: TrainConfig { epochs: 50, batch_size: 64, learning_rate: 0.001, momentum: 0.9, seed: 0 },
        }
    }
}

/// Fully connected network on vectorized ROI matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcnConfig {
    pub hidden: Vec<usize>,
    pub elu_alpha: f64,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for FcnConfig {
    fn default() -> Self {
        FcnConfig {
            hidden: vec![800, 500, 100, 20],
            elu_alpha: 1.0,
            dropout: 0.2,
            train: TrainConfig { epochs: 30, batch_size: 64, learning_rate: 0.01, momentum: 0.9, seed: 0 },
        }
    }
}

/// Layer list with its input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn instantiate<T: Real>(&self, init_seed: u64) -> Result<Network<T>> {
        Ok(Network::from_specs(self.input_shape.clone(), &self.layers, init_seed)?)
    }
}

fn dense_head(layers: &mut Vec<LayerSpec>, mut dim: usize, hidden: &[usize], alpha: f64, dropout: f64) -> Result<()> {
    for &h in hidden {
        if h == 0 {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        layers.push(LayerSpec::Dense { in_dim: dim, out_dim: h });
        layers.push(LayerSpec::Elu { alpha });
        if dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: dropout });
        }
        dim = h;
    }
    layers.push(LayerSpec::Dense { in_dim: dim, out_dim: 1 });
    layers.push(LayerSpec::Sigmoid);
    Ok(())
}

/// CNN for `channels` input channels on an `[nx, ny, nz]` grid. Odd extents
/// are center-cropped to the next lower even size before each pooling stage
/// (ahead of the block's convolution when the convolution preserves size).
pub fn build_cnn(cfg: &CnnConfig, channels: usize, grid: [usize; 3]) -> Result<ModelGraph> {
    if channels == 0 || cfg.conv_channels.is_empty() || cfg.conv_channels.contains(&0) {
        return Err(ModelError::Config("CNN needs input channels and nonzero conv widths".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", cfg.dropout)));
    }
    let (k, p) = (cfg.kernel, cfg.padding);
    let mut spatial = [grid[2], grid[1], grid[0]];
    let input_shape = vec![channels, spatial[0], spatial[1], spatial[2]];
    let mut layers = Vec::new();
    let mut c_in = channels;
    let preserving = 2 * p + 1 == k;
    let even = |s: [usize; 3]| s.map(|d| d - d % 2);
    for (b, &c_out) in cfg.conv_channels.iter().enumerate() {
        if spatial.iter().any(|&d| d + 2 * p < k) {
            return Err(ModelError::Config(format!("block {b}: extents {spatial:?} too small for kernel {k}")));
        }
        if preserving && spatial.iter().any(|d| d % 2 == 1) {
            spatial = even(spatial);
            if spatial.contains(&0) {
                return Err(ModelError::Config(format!("grid {grid:?} too small for {} pooling stages", cfg.conv_channels.len())));
            }
            layers.push(LayerSpec::CenterCrop3d { target: spatial });
        }
        layers.push(LayerSpec::Conv3d { in_ch: c_in, out_ch: c_out, kernel: k, padding: p });
        layers.push(LayerSpec::Elu { alpha: cfg.elu_alpha });
        spatial = spatial.map(|d| d + 2 * p + 1 - k);
        if spatial.iter().any(|d| d % 2 == 1) {
            spatial = even(spatial);
            if spatial.contains(&0) {
                return Err(ModelError::Config(format!("grid {grid:?} too small for {} pooling stages", cfg.conv_channels.len())));
            }
            layers.push(LayerSpec::CenterCrop3d { target: spatial });
        }
        layers.push(LayerSpec::MaxPool3d);
        spatial = spatial.map(|d| d / 2);
        c_in = c_out;
    }
    layers.push(LayerSpec::Flatten);
    let flat = c_in * spatial.iter().product::<usize>();
    dense_head(&mut layers, flat, &cfg.dense_hidden, cfg.elu_alpha, cfg.dropout)?;
    let g = ModelGraph { input_shape, layers };
    g.shapes()?;
    Ok(g)
}

/// Dense(D, h₁) + ELU + Dropout … Dense(h_last, 1) + Sigmoid.
pub fn build_fcn(cfg: &FcnConfig, input_dim: usize) -> Result<ModelGraph> {
    if input_dim == 0 {
        return Err(ModelError::Config("FCN input dimension must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", cfg.dropout)));
    }
    let mut layers = Vec::new();
    dense_head(&mut layers, input_dim, &cfg.hidden, cfg.elu_alpha, cfg.dropout)?;
    Ok(ModelGraph { input_shape: vec![input_dim], layers })
}

/// Network plus optimizer state, resumable from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T: Real> {
    pub net: Network<T>,
    pub sgd: Sgd<T>,
    pub cfg: TrainConfig,
    pub history: Vec<EpochRecord>,
}

impl<T: Real> Trainer<T> {
    pub fn new(net: Network<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let sgd = Sgd::new(&net, cfg.learning_rate, cfg.momentum);
        Ok(Trainer { net, sgd, cfg, history: Vec::new() })
    }

    pub fn epochs_completed(&self) -> usize {
        self.history.len()
    }

    /// Trains until `until` epochs are complete. Epoch `e` shuffles and
    /// draws dropout from the stream derived from `(seed, e)`, so resuming
    /// from a checkpoint reproduces an uninterrupted run.
    pub fn run(&mut self, inputs: &[&Tensor<T>], labels: &[u8], until: usize) -> Result<()> {
        check_training_set(inputs.len(), labels)?;
        let n = inputs.len();
        let mut grads = self.net.zero_grads();
        for epoch in self.epochs_completed()..until {
            let mut rng = seed::rng(seed::derive(self.cfg.seed, &format!("epoch/{epoch}")));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut correct = 0usize;
            for batch in order.chunks(self.cfg.batch_size) {
                grads.reset();
                for &i in batch {
                    let (out, caches) = self.net.forward(inputs[i], ForwardMode::Train(&mut rng))?;
                    let z = out.data()[0];
                    let (loss, dz) = bce_with_logits(z, labels[i]);
                    total += loss.as_f64();
                    correct += usize::from(u8::from(z.as_f64() > 0.0) == labels[i]);
                    self.net.backward(&caches, Tensor::from_vec(vec![dz]), &mut grads, false)?;
                }
                grads.scale(T::from_f64(1.0 / batch.len() as f64));
                self.sgd.step(&mut self.net, &grads)?;
            }
            let mean_loss = total / n as f64;
            if !mean_loss.is_finite() || self.net.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(ModelError::Divergence { epoch: epoch + 1, loss: mean_loss });
            }
            log::debug!("epoch {}: mean loss {mean_loss:.6}", epoch + 1);
            self.history.push(EpochRecord { epoch: epoch + 1, mean_loss, train_accuracy: correct as f64 / n as f64 });
        }
        Ok(())
    }

    pub fn run_to_end(&mut self, inputs: &[&Tensor<T>], labels: &[u8]) -> Result<()> {
        self.run(inputs, labels, self.cfg.epochs)
    }

    pub fn to_checkpoint(&self, family: &str, atlas_id: &str, config: serde_json::Value) -> Checkpoint {
        let architecture =
            Architecture::Network { input_shape: self.net.input_shape().to_vec(), layers: self.net.specs(), has_velocity: true };
        let tensors: Vec<Vec<f64>> = self
            .net
            .params()
            .into_iter()
            .chain(self.sgd.velocity.iter().map(Vec::as_slice))
            .map(|t| t.iter().map(|v| v.as_f64()).collect())
            .collect();
        let entries = architecture.expected_tensors().into_iter().map(|(name, len)| TensorEntry { name, len }).collect();
        Checkpoint {
            meta: CheckpointMeta {
                family: family.to_string(),
                atlas_id: atlas_id.to_string(),
                architecture,
                dtype: T::DTYPE.to_string(),
                tensors: entries,
                training: Some(TrainingState {
                    epochs: self.cfg.epochs,
                    batch_size: self.cfg.batch_size,
                    learning_rate: self.cfg.learning_rate,
                    momentum: self.cfg.momentum,
                    seed: self.cfg.seed,
                    epochs_completed: self.epochs_completed(),
                    history: self.history.clone(),
                }),
                config,
                blob: String::new(),
            },
            tensors,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.validate()?;
        let Architecture::Network { input_shape, layers, has_velocity } = &c.meta.architecture else {
            return Err(ModelError::Config(format!("checkpoint family {:?} is not a network", c.meta.family)));
        };
        let to_t = |v: &Vec<f64>| v.iter().map(|&x| T::from_f64(x)).collect::<Vec<T>>();
        let n_params = if *has_velocity { c.tensors.len() / 2 } else { c.tensors.len() };
        let params = c.tensors[..n_params].iter().map(to_t).collect();
        let net = Network::from_parts(input_shape.clone(), layers, params)?;
        let state = c.meta.training.clone().ok_or_else(|| ModelError::Config("checkpoint has no training state".into()))?;
        let cfg = TrainConfig {
            epochs: state.epochs,
            batch_size: state.batch_size,
            learning_rate: state.learning_rate,
            momentum: state.momentum,
            seed: state.seed,
        };
        let mut t = Trainer::new(net, cfg)?;
        if *has_velocity {
            t.sgd.velocity = c.tensors[n_params..].iter().map(to_t).collect();
        }
        if state.history.len() != state.epochs_completed {
            return Err(ModelError::Config("checkpoint history does not match epochs_completed".into()));
        }
        t.history = state.history;
        Ok(t)
    }
}

/// Trains a fresh copy of `net` for `cfg.epochs` epochs.
pub fn train<T: Real>(
    net: Network<T>,
    inputs: &[&Tensor<T>],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(Network<T>, Vec<EpochRecord>)> {
    let mut t = Trainer::new(net, cfg.clone())?;
    t.run_to_end(inputs, labels)?;
    Ok((t.net, t.history))
}

impl<T: Real> Classifier<T> for Network<T> {
    fn score(&self, x: &Tensor<T>) -> Result<f64> {
        Ok(self.logit(x)?.as_f64())
    }
}

/// Fits a network from a fixed graph: weights initialized from
/// `(seed, "init")`, training stream seeded with `seed`.
#[derive(Debug, Clone)]
pub struct NetLearner {
    pub graph: ModelGraph,
    pub train: TrainConfig,
}

impl<T: Real> Learner<T> for NetLearner {
    type Model = Network<T>;

    fn fit(&self, inputs: &[&Tensor<T>], labels: &[u8], seed_value: u64) -> Result<Network<T>> {
        let net = self.graph.instantiate(seed::derive(seed_value, "init"))?;
        let cfg = TrainConfig { seed: seed_value, ..self.train.clone() };
        Ok(train(net, inputs, labels, &cfg)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent parameter count for the default CNN: conv k³·C_in·C_out + C_out
    /// per block, then the dense head.
    fn cnn_param_oracle(r: usize, grid: usize, convs: &[usize], dense: &[usize]) -> usize {
        let mut total = 0;
        let mut c = r;
        let mut g = grid;
        for &o in convs {
            total += 27 * c * o + o;
            c = o;
            g -= g % 2;
            g /= 2;
        }
        let mut d = c * g * g * g;
        for &h in dense {
            total += d * h + h;
            d = h;
        }
        total + d + 1
    }

    #[test]
    fn default_cnn_parameter_count() {
        let g = build_cnn(&CnnConfig::default(), 8, [16, 16, 16]).unwrap();
        assert_eq!(g.param_count(), cnn_param_oracle(8, 16, &[32, 64, 128], &[128]));
        assert_eq!(g.input_shape, vec![8, 16, 16, 16]);
        let net: Network<f32> = g.instantiate(0).unwrap();
        assert_eq!(net.param_count(), g.param_count());
    }

    #[test]
    fn single_pointwise_block_has_weight_and_bias() {
        let cfg = CnnConfig { conv_channels: vec![1], kernel: 1, padding: 0, dense_hidden: vec![], ..Default::default() };
        let g = build_cnn(&cfg, 1, [2, 2, 2]).unwrap();
        let conv: usize = g.layers.iter().filter(|l| matches!(l, LayerSpec::Conv3d { .. })).map(LayerSpec::param_count).sum();
        assert_eq!(conv, 2);
    }

    #[test]
    fn odd_grid_is_cropped_before_first_block() {
        let g = build_cnn(&CnnConfig::default(), 4, [15, 15, 15]).unwrap();
        assert_eq!(g.layers[0], LayerSpec::CenterCrop3d { target: [14, 14, 14] });
        let shapes = g.shapes().unwrap();
        // 15 → 14 → 7 → 6 → 3 → 2 → 1
        let pooled: Vec<Vec<usize>> =
            g.layers.iter().zip(&shapes).filter(|(l, _)| **l == LayerSpec::MaxPool3d).map(|(_, s)| s.clone()).collect();
        assert_eq!(pooled, vec![vec![32, 7, 7, 7], vec![64, 3, 3, 3], vec![128, 1, 1, 1]]);
        assert!(build_cnn(&CnnConfig::default(), 4, [4, 4, 4]).is_err());
    }

    #[test]
    fn non_cubic_grid_uses_tensor_axis_order() {
        let cfg = CnnConfig { conv_channels: vec![2], dense_hidden: vec![], ..Default::default() };
        let g = build_cnn(&cfg, 3, [4, 6, 8]).unwrap();
        assert_eq!(g.input_shape, vec![3, 8, 6, 4]);
    }

    #[test]
    fn fcn_layout_and_counts() {
        let g = build_fcn(&FcnConfig::default(), 3).unwrap();
        let want = 3 * 800 + 800 + 800 * 500 + 500 + 500 * 100 + 100 + 100 * 20 + 20 + 20 + 1;
        assert_eq!(g.param_count(), want);
        let widths: Vec<usize> = g
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { out_dim, .. } => Some(*out_dim),
                _ => None,
            })
            .collect();
        assert_eq!(widths, vec![800, 500, 100, 20, 1]);
        assert_eq!(g.layers.iter().filter(|l| **l == LayerSpec::Dropout { rate: 0.2 }).count(), 4);
        assert_eq!(g.layers.iter().filter(|l| **l == LayerSpec::Elu { alpha: 1.0 }).count(), 4);
        assert_eq!(g.layers.last(), Some(&LayerSpec::Sigmoid));
        let big = build_fcn(&FcnConfig::default(), 19900).unwrap();
        assert_eq!(big.layers[0].param_count(), 19900 * 800 + 800);
    }

    #[test]
    fn default_recipes() {
        let c = CnnConfig::default().train;
        assert_eq!((c.epochs, c.batch_size, c.learning_rate, c.momentum), (50, 64, 0.001, 0.9));
        let f = FcnConfig::default().train;
        assert_eq!((f.epochs, f.batch_size, f.learning_rate, f.momentum), (30, 64, 0.01, 0.9));
        assert_eq!(CnnConfig::default().dropout, 0.0);
    }

    fn toy_problem(n: usize, seed_value: u64) -> (Vec<Tensor<f64>>, Vec<u8>) {
        let mut rng = seed::rng(seed_value);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u8;
            let shift = if y == 1 { 1.0 } else { -1.0 };
            xs.push(Tensor::from_vec((0..4).map(|k| if k == 0 { shift } else { 0.0 } + rng.random_range(-0.5..0.5)).collect()));
            ys.push(y);
        }
        (xs, ys)
    }

    fn small_fcn() -> ModelGraph {
        let cfg = FcnConfig { hidden: vec![6], dropout: 0.1, ..Default::default() };
        build_fcn(&cfg, 4).unwrap()
    }

    #[test]
    fn training_separates_toy_data_and_is_deterministic() {
        let (xs, ys) = toy_problem(40, 1);
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let cfg = TrainConfig { epochs: 40, batch_size: 8, learning_rate: 0.05, momentum: 0.9, seed: 3 };
        let (net, hist) = train(small_fcn().instantiate::<f64>(1).unwrap(), &refs, &ys, &cfg).unwrap();
        assert_eq!(hist.len(), 40);
        assert!(hist.last().unwrap().mean_loss <= hist[0].mean_loss);
        let acc = xs.iter().zip(&ys).filter(|(x, &y)| net.predict_label(x).unwrap() == y).count() as f64 / 40.0;
        assert!(acc >= 0.95, "accuracy {acc}");
        let (again, _) = train(small_fcn().instantiate::<f64>(1).unwrap(), &refs, &ys, &cfg).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let (xs, ys) = toy_problem(10, 2);
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let init = small_fcn().instantiate::<f64>(5).unwrap();
        let cfg = TrainConfig { epochs: 0, batch_size: 4, learning_rate: 0.1, momentum: 0.9, seed: 0 };
        assert_eq!(train(init.clone(), &refs, &ys, &cfg).unwrap().0, init);
    }

    #[test]
    fn single_class_is_rejected() {
        let (xs, _) = toy_problem(4, 2);
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, learning_rate: 0.1, momentum: 0.9, seed: 0 };
        let r = train(small_fcn().instantiate::<f64>(5).unwrap(), &refs, &[1, 1, 1, 1], &cfg);
        assert!(matches!(r, Err(ModelError::Data(_))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let (xs, ys) = toy_problem(20, 4);
        let scaled: Vec<Tensor<f64>> = xs.iter().map(|x| Tensor::from_vec(x.data().iter().map(|v| v * 1e150).collect())).collect();
        let refs: Vec<&Tensor<f64>> = scaled.iter().collect();
        let cfg = TrainConfig { epochs: 5, batch_size: 4, learning_rate: 1e10, momentum: 0.9, seed: 0 };
        let r = train(small_fcn().instantiate::<f64>(5).unwrap(), &refs, &ys, &cfg);
        assert!(matches!(r, Err(ModelError::Divergence { .. })));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (xs, ys) = toy_problem(30, 6);
        let xs32: Vec<Tensor<f32>> = xs.iter().map(Tensor::cast).collect();
        let refs32: Vec<&Tensor<f32>> = xs32.iter().collect();
        let cfg = TrainConfig { epochs: 11, batch_size: 8, learning_rate: 0.05, momentum: 0.9, seed: 9 };
        let mut full = Trainer::new(small_fcn().instantiate::<f32>(2).unwrap(), cfg.clone()).unwrap();
        full.run_to_end(&refs32, &ys).unwrap();

        let mut part = Trainer::new(small_fcn().instantiate::<f32>(2).unwrap(), cfg).unwrap();
        part.run(&refs32, &ys, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fcn.json");
        crate::dataio::save_checkpoint(&part.to_checkpoint("fcn", "a", serde_json::Value::Null), &path).unwrap();
        let mut resumed = Trainer::<f32>::from_checkpoint(&crate::dataio::load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(resumed, part);
        resumed.run_to_end(&refs32, &ys).unwrap();
        assert_eq!(resumed, full);

        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        crate::dataio::save_checkpoint(&full.to_checkpoint("fcn", "a", serde_json::Value::Null), &a).unwrap();
        crate::dataio::save_checkpoint(&resumed.to_checkpoint("fcn", "a", serde_json::Value::Null), &b).unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.bin")).unwrap(), std::fs::read(dir.path().join("b.bin")).unwrap());
    }

    #[test]
    fn loaded_checkpoint_predicts_identically() {
        let g = build_cnn(&CnnConfig { conv_channels: vec![4, 4], dense_hidden: vec![8], ..Default::default() }, 2, [8, 8, 8]).unwrap();
        let t = Trainer::new(g.instantiate::<f32>(4).unwrap(), CnnConfig::default().train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.json");
        crate::dataio::save_checkpoint(&t.to_checkpoint("cnn", "a", serde_json::Value::Null), &path).unwrap();
        let back = Trainer::<f32>::from_checkpoint(&crate::dataio::load_checkpoint(&path).unwrap()).unwrap();
        let mut rng = seed::rng(1);
        let x = Tensor::new(vec![2, 8, 8, 8], (0..1024).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        assert_eq!(t.net.score(&x).unwrap().to_bits(), back.net.score(&x).unwrap().to_bits());
    }

    #[test]
    fn zeroed_head_gives_half_and_label_zero() {
        let g = small_fcn();
        let mut net = g.instantiate::<f64>(1).unwrap();
        let n = net.params().len();
        for p in net.params_mut().into_iter().skip(n - 2) {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(vec![0.3, -0.2, 0.1, 0.9]);
        assert_eq!(net.predict_proba(&x).unwrap(), 0.5);
        assert_eq!(net.predict_label(&x).unwrap(), 0);
        // probability increases with the final bias
        let last = net.params_mut().pop().unwrap();
        last[0] = 0.5;
        let p1 = net.predict_proba(&x).unwrap();
        net.params_mut().pop().unwrap()[0] = 1.0;
        assert!(net.predict_proba(&x).unwrap() > p1 && p1 > 0.5);
    }
}

use rand::{Rng, RngCore};

use super::layers::{
    center_crop_backward, center_crop_forward, dropout_mask, elu, elu_backward, maxpool3d_backward, maxpool3d_forward,
    maxpool3d_gather, sigmoid, Conv3d, Dense,
};
use super::{LayerSpec, NnError, Result, Tensor};
use crate::seed;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv3d(Conv3d<T>),
    MaxPool3d,
    CenterCrop3d { target: [usize; 3] },
    Dense(Dense<T>),
    Elu { alpha: f64 },
    Sigmoid,
    Dropout { rate: f64 },
    Flatten,
}

impl<T: Real> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv3d(c) => LayerSpec::Conv3d { in_ch: c.in_ch, out_ch: c.out_ch, kernel: c.kernel, padding: c.padding },
            Layer::MaxPool3d => LayerSpec::MaxPool3d,
            Layer::CenterCrop3d { target } => LayerSpec::CenterCrop3d { target: *target },
            Layer::Dense(d) => LayerSpec::Dense { in_dim: d.in_dim, out_dim: d.out_dim },
            Layer::Elu { alpha } => LayerSpec::Elu { alpha: *alpha },
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    fn params(&self) -> Option<(&[T], &[T])> {
        match self {
            Layer::Conv3d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<T>, &mut Vec<T>)> {
        match self {
            Layer::Conv3d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv { cols: Vec<T>, in_shape: Vec<usize> },
    Pool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Crop { in_shape: Vec<usize> },
    Dense { input: Vec<T> },
    Elu { input: Vec<T> },
    Sigmoid { output: Vec<T> },
    Dropout { mask: Option<Vec<T>> },
    Flatten { in_shape: Vec<usize> },
}

pub enum ForwardMode<'a> {
    /// Dropout off, pooling decided by the forward pass.
    Inference,
    /// Dropout drawn from the given stream.
    Train(&'a mut dyn RngCore),
    /// Dropout off, each pooling layer reuses the given argmax indices
    /// (one entry per pooling layer, in order).
    FrozenPool(&'a [Vec<usize>]),
}

/// Gradient buffers with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// `(weight, bias)` per layer; empty for parameter-free layers.
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn scale(&mut self, s: T) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *v * s);
        }
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .filter(|(w, _)| !w.is_empty())
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = T::zero());
        }
    }
}

/// A feed-forward stack of layers with a scalar output.
///
/// A trailing `Sigmoid` layer is treated as the probability head: training and
/// saliency work on the pre-sigmoid logit, `predict_proba` applies it.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    sign_flip_backward: bool,
}

fn glorot_limit(spec: &LayerSpec) -> f64 {
    match *spec {
        LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => {
            let k3 = kernel.pow(3) as f64;
            (6.0 / (in_ch as f64 * k3 + out_ch as f64 * k3)).sqrt()
        }
        LayerSpec::Dense { in_dim, out_dim } => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        _ => 0.0,
    }
}

impl<T: Real> Network<T> {
    /// Builds the stack and draws weights uniformly in ±√(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn from_specs(input_shape: Vec<usize>, specs: &[LayerSpec], init_seed: u64) -> Result<Self> {
        let mut rng = seed::rng(init_seed);
        let mut params = Vec::new();
        for spec in specs {
            let n = spec.param_count();
            if n == 0 {
                continue;
            }
            let limit = glorot_limit(spec);
            let out = match *spec {
                LayerSpec::Conv3d { out_ch, .. } => out_ch,
                LayerSpec::Dense { out_dim, .. } => out_dim,
                _ => unreachable!(),
            };
            let w: Vec<T> = (0..n - out).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect();
            params.push(w);
            params.push(vec![T::zero(); out]);
        }
        Self::from_parts(input_shape, specs, params)
    }

    /// Rebuilds a network from its layer list and parameter tensors
    /// (weight then bias for each parametric layer, in layer order).
    pub fn from_parts(input_shape: Vec<usize>, specs: &[LayerSpec], params: Vec<Vec<T>>) -> Result<Self> {
        if specs.is_empty() {
            return Err(NnError::Config("network needs at least one layer".into()));
        }
        let mut shape = input_shape.clone();
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(NnError::Shape(format!("invalid input shape {shape:?}")));
        }
        let mut params = params.into_iter();
        let mut next = |what: &str, len: usize| -> Result<Vec<T>> {
            let p = params.next().ok_or_else(|| NnError::Shape(format!("missing {what} parameters")))?;
            if p.len() != len {
                return Err(NnError::Shape(format!("{what}: expected {len} parameters, got {}", p.len())));
            }
            Ok(p)
        };
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            shape = spec.output_shape(&shape)?;
            let layer = match *spec {
                LayerSpec::Conv3d { in_ch, out_ch, kernel, padding } => {
                    let w = next("conv3d weight", out_ch * in_ch * kernel.pow(3))?;
                    let b = next("conv3d bias", out_ch)?;
                    Layer::Conv3d(Conv3d::new(in_ch, out_ch, kernel, padding, w, b)?)
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let w = next("dense weight", in_dim * out_dim)?;
                    let b = next("dense bias", out_dim)?;
                    Layer::Dense(Dense::new(in_dim, out_dim, w, b)?)
                }
                LayerSpec::MaxPool3d => Layer::MaxPool3d,
                LayerSpec::CenterCrop3d { target } => Layer::CenterCrop3d { target },
                LayerSpec::Elu { alpha } => Layer::Elu { alpha },
                LayerSpec::Sigmoid => Layer::Sigmoid,
                LayerSpec::Dropout { rate } => Layer::Dropout { rate },
                LayerSpec::Flatten => Layer::Flatten,
            };
            layers.push(layer);
        }
        if params.next().is_some() {
            return Err(NnError::Shape("more parameter tensors than layers need".into()));
        }
        if shape != [1] {
            return Err(NnError::Shape(format!("network must end in a scalar output, got {shape:?}")));
        }
        Ok(Network { input_shape, layers, sign_flip_backward: false })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }
    pub fn param_count(&self) -> usize {
        self.specs().iter().map(LayerSpec::param_count).sum()
    }

    /// Parameter tensors, weight then bias per parametric layer.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().filter_map(Layer::params).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().filter_map(Layer::params_mut).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| match l.params() {
                    Some((w, b)) => (vec![T::zero(); w.len()], vec![T::zero(); b.len()]),
                    None => (Vec::new(), Vec::new()),
                })
                .collect(),
        }
    }

    /// Negates every weight gradient in `backward`. Negative control for the
    /// gradient checker; never set in normal use.
    pub fn inject_sign_flip(&mut self) {
        self.sign_flip_backward = true;
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let params = self.params().iter().map(|p| p.iter().map(|v| U::from_f64(v.as_f64())).collect()).collect();
        let mut net = Network::from_parts(self.input_shape.clone(), &self.specs(), params).expect("same architecture");
        net.sign_flip_backward = self.sign_flip_backward;
        net
    }

    fn logit_end(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Sigmoid) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Runs every layer up to (not including) a trailing sigmoid.
    pub fn forward(&self, input: &Tensor<T>, mut mode: ForwardMode<'_>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(NnError::Shape(format!("network expects {:?}, got {:?}", self.input_shape, input.shape())));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut pool_index = 0;
        let mut x = input.clone();
        for layer in &self.layers[..self.logit_end()] {
            let (y, cache) = match layer {
                Layer::Conv3d(c) => {
                    let in_shape = x.shape().to_vec();
                    let (y, cols) = c.forward(&x)?;
                    (y, Cache::Conv { cols, in_shape })
                }
                Layer::MaxPool3d => {
                    let in_shape = x.shape().to_vec();
                    let (y, argmax) = match &mode {
                        ForwardMode::FrozenPool(frozen) => {
                            let arg = frozen
                                .get(pool_index)
                                .ok_or_else(|| NnError::Shape("missing frozen argmax".into()))?
                                .clone();
                            (maxpool3d_gather(&x, &arg)?, arg)
                        }
                        _ => maxpool3d_forward(&x)?,
                    };
                    pool_index += 1;
                    (y, Cache::Pool { argmax, in_shape })
                }
                Layer::CenterCrop3d { target } => {
                    let in_shape = x.shape().to_vec();
                    (center_crop_forward(&x, *target)?, Cache::Crop { in_shape })
                }
                Layer::Dense(d) => {
                    let y = d.forward(&x)?;
                    (y, Cache::Dense { input: x.into_data() })
                }
                Layer::Elu { alpha } => {
                    let a = T::from_f64(*alpha);
                    let input = x.data().to_vec();
                    x.data_mut().iter_mut().for_each(|v| *v = elu(*v, a));
                    (x, Cache::Elu { input })
                }
                Layer::Sigmoid => {
                    x.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                    let output = x.data().to_vec();
                    (x, Cache::Sigmoid { output })
                }
                Layer::Dropout { rate } => match &mut mode {
                    ForwardMode::Train(rng) if *rate > 0.0 => {
                        let mask: Tensor<T> = dropout_mask(x.shape(), *rate, &mut **rng)?;
                        x.data_mut().iter_mut().zip(mask.data()).for_each(|(v, &m)| *v = *v * m);
                        (x, Cache::Dropout { mask: Some(mask.into_data()) })
                    }
                    _ => (x, Cache::Dropout { mask: None }),
                },
                Layer::Flatten => {
                    let in_shape = x.shape().to_vec();
                    let n = x.numel();
                    (x.reshape(vec![n])?, Cache::Flatten { in_shape })
                }
            };
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Scalar pre-sigmoid score in inference mode.
    pub fn logit(&self, input: &Tensor<T>) -> Result<T> {
        let (y, _) = self.forward(input, ForwardMode::Inference)?;
        Ok(y.data()[0])
    }

    pub fn predict_proba(&self, input: &Tensor<T>) -> Result<T> {
        Ok(sigmoid(self.logit(input)?))
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the logit-stage output)
    /// through the cached forward pass, accumulating parameter gradients.
    pub fn backward(
        &self,
        caches: &[Cache<T>],
        grad_out: Tensor<T>,
        grads: &mut Gradients<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let end = self.logit_end();
        if caches.len() != end || grads.layers.len() != self.layers.len() {
            return Err(NnError::Shape("backward: cache/gradient layout mismatch".into()));
        }
        // the first layer that needs its input gradient computed
        let first_param = self.layers.iter().position(|l| l.params().is_some()).unwrap_or(0);
        let mut g = grad_out;
        for (i, (layer, cache)) in self.layers[..end].iter().zip(caches).enumerate().rev() {
            let want_input = need_input || i > first_param;
            let next = match (layer, cache) {
                (Layer::Conv3d(c), Cache::Conv { cols, in_shape }) => {
                    let (gw, gb) = &mut grads.layers[i];
                    let dx = c.backward(&g, cols, in_shape, gw, gb, want_input)?;
                    if self.sign_flip_backward {
                        gw.iter_mut().for_each(|v| *v = -*v);
                    }
                    dx
                }
                (Layer::Dense(d), Cache::Dense { input }) => {
                    let (gw, gb) = &mut grads.layers[i];
                    let dx = d.backward(&g, input, gw, gb, want_input)?;
                    if self.sign_flip_backward {
                        gw.iter_mut().for_each(|v| *v = -*v);
                    }
                    dx
                }
                (Layer::MaxPool3d, Cache::Pool { argmax, in_shape }) => Some(maxpool3d_backward(&g, argmax, in_shape)?),
                (Layer::CenterCrop3d { .. }, Cache::Crop { in_shape }) => Some(center_crop_backward(&g, in_shape)?),
                (Layer::Elu { alpha }, Cache::Elu { input }) => {
                    let a = T::from_f64(*alpha);
                    g.data_mut().iter_mut().zip(input).for_each(|(gv, &x)| *gv = *gv * elu_backward(x, a));
                    Some(g)
                }
                (Layer::Sigmoid, Cache::Sigmoid { output }) => {
                    g.data_mut().iter_mut().zip(output).for_each(|(gv, &s)| *gv = *gv * s * (T::one() - s));
                    Some(g)
                }
                (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        g.data_mut().iter_mut().zip(mask).for_each(|(gv, &m)| *gv = *gv * m);
                    }
                    Some(g)
                }
                (Layer::Flatten, Cache::Flatten { in_shape }) => Some(g.reshape(in_shape.clone())?),
                _ => return Err(NnError::Shape(format!("backward: cache does not match layer {i}"))),
            };
            match next {
                Some(t) => g = t,
                None => return Ok(None),
            }
        }
        Ok(if need_input { Some(g) } else { None })
    }

    /// Gradient of the pre-sigmoid score with respect to the input, one
    /// backward pass in inference mode.
    pub fn input_gradient(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, caches) = self.forward(input, ForwardMode::Inference)?;
        let mut scratch = self.zero_grads();
        let g = self
            .backward(&caches, Tensor::from_vec(vec![T::one()]), &mut scratch, true)?
            .expect("input gradient requested");
        Ok(g)
    }

    /// Gradient of the sigmoid probability with respect to the input.
    pub fn input_gradient_proba(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.predict_proba(input)?;
        let mut g = self.input_gradient(input)?;
        let s = p * (T::one() - p);
        g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cnn() -> Network<f64> {
        let specs = vec![
            LayerSpec::Conv3d { in_ch: 2, out_ch: 3, kernel: 3, padding: 1 },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::MaxPool3d,
            LayerSpec::Flatten,
            LayerSpec::Dense { in_dim: 3 * 8, out_dim: 4 },
            LayerSpec::Elu { alpha: 1.0 },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense { in_dim: 4, out_dim: 1 },
            LayerSpec::Sigmoid,
        ];
        Network::from_specs(vec![2, 4, 4, 4], &specs, 7).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = small_cnn();
        let b = small_cnn();
        assert_eq!(a, b);
        let limit = (6.0f64 / (2.0 * 27.0 + 3.0 * 27.0)).sqrt();
        assert!(a.params()[0].iter().all(|w| w.abs() <= limit));
        assert!(a.params()[1].iter().all(|&b| b == 0.0));
        assert_eq!(a.param_count(), 2 * 3 * 27 + 3 + 24 * 4 + 4 + 4 + 1);
    }

    #[test]
    fn shape_errors_reported() {
        let net = small_cnn();
        assert!(matches!(net.logit(&Tensor::zeros(vec![2, 4, 4, 2])), Err(NnError::Shape(_))));
        let bad = [LayerSpec::Dense { in_dim: 3, out_dim: 2 }];
        assert!(Network::<f64>::from_specs(vec![3], &bad, 0).is_err());
    }

    #[test]
    fn inference_ignores_dropout_and_is_deterministic() {
        let net = small_cnn();
        let x = Tensor::new(vec![2, 4, 4, 4], (0..128).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let p1 = net.predict_proba(&x).unwrap();
        let p2 = net.predict_proba(&x).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 > 0.0 && p1 < 1.0);
    }

    #[test]
    fn from_parts_rejects_wrong_blob_sizes() {
        let net = small_cnn();
        let mut params: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();
        params[2].pop();
        assert!(Network::from_parts(net.input_shape().to_vec(), &net.specs(), params).is_err());
    }
}

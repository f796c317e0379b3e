use rand::Rng;

use super::{NnError, Result, Tensor};
use crate::Real;

/// 3D convolution (cross-correlation), stride 1, cubic kernel, zero padding.
///
/// Weights are laid out `[out_ch, in_ch, k, k, k]`, which read as a row-major
/// `out_ch × (in_ch·k³)` matrix multiplies the im2col matrix directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv3d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, padding: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != out_ch * in_ch * kernel.pow(3) || bias.len() != out_ch {
            return Err(NnError::Shape(format!(
                "conv3d {in_ch}->{out_ch} k={kernel}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Conv3d { in_ch, out_ch, kernel, padding, weight, bias })
    }

    fn out_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = dims[i] + 2 * self.padding;
            if padded < self.kernel {
                return Err(NnError::Shape(format!("extent {} too small for kernel {}", dims[i], self.kernel)));
            }
            out[i] = padded - self.kernel + 1;
        }
        Ok(out)
    }

    fn im2col(&self, x: &[T], dims: [usize; 3], out: [usize; 3]) -> Vec<T> {
        let k = self.kernel;
        let p = self.padding as isize;
        let n_out = out[0] * out[1] * out[2];
        let rows = self.in_ch * k * k * k;
        let mut cols = vec![T::zero(); rows * n_out];
        let plane = dims[1] * dims[2];
        for c in 0..self.in_ch {
            let xc = &x[c * dims[0] * plane..(c + 1) * dims[0] * plane];
            for i in 0..k {
                for j in 0..k {
                    for l in 0..k {
                        let row = ((c * k + i) * k + j) * k + l;
                        let dst = &mut cols[row * n_out..(row + 1) * n_out];
                        // valid w range so that 0 <= w + l - p < dims[2]
                        let off2 = l as isize - p;
                        let w_lo = (-off2).max(0) as usize;
                        let w_hi = ((dims[2] as isize - off2).min(out[2] as isize)).max(0) as usize;
                        for u in 0..out[0] {
                            let a = u as isize + i as isize - p;
                            if a < 0 || a >= dims[0] as isize {
                                continue;
                            }
                            for v in 0..out[1] {
                                let b = v as isize + j as isize - p;
                                if b < 0 || b >= dims[1] as isize {
                                    continue;
                                }
                                if w_lo >= w_hi {
                                    continue;
                                }
                                let src_base = a as usize * plane + b as usize * dims[2];
                                let src_lo = (src_base as isize + w_lo as isize + off2) as usize;
                                let dst_base = (u * out[1] + v) * out[2];
                                dst[dst_base + w_lo..dst_base + w_hi]
                                    .copy_from_slice(&xc[src_lo..src_lo + (w_hi - w_lo)]);
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], dims: [usize; 3], out: [usize; 3]) -> Vec<T> {
        let k = self.kernel;
        let p = self.padding as isize;
        let n_out = out[0] * out[1] * out[2];
        let plane = dims[1] * dims[2];
        let mut x = vec![T::zero(); self.in_ch * dims[0] * plane];
        for c in 0..self.in_ch {
            let xc = &mut x[c * dims[0] * plane..(c + 1) * dims[0] * plane];
            for i in 0..k {
                for j in 0..k {
                    for l in 0..k {
                        let row = ((c * k + i) * k + j) * k + l;
                        let src = &cols[row * n_out..(row + 1) * n_out];
                        let off2 = l as isize - p;
                        let w_lo = (-off2).max(0) as usize;
                        let w_hi = ((dims[2] as isize - off2).min(out[2] as isize)).max(0) as usize;
                        if w_lo >= w_hi {
                            continue;
                        }
                        for u in 0..out[0] {
                            let a = u as isize + i as isize - p;
                            if a < 0 || a >= dims[0] as isize {
                                continue;
                            }
                            for v in 0..out[1] {
                                let b = v as isize + j as isize - p;
                                if b < 0 || b >= dims[1] as isize {
                                    continue;
                                }
                                let dst_lo = (a as usize * plane + b as usize * dims[2]) as isize + w_lo as isize + off2;
                                let dst_lo = dst_lo as usize;
                                let src_base = (u * out[1] + v) * out[2];
                                for (d, s) in xc[dst_lo..dst_lo + (w_hi - w_lo)]
                                    .iter_mut()
                                    .zip(&src[src_base + w_lo..src_base + w_hi])
                                {
                                    *d = *d + *s;
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the im2col matrix needed by `backward`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let (c, dims) = input.volume_dims()?;
        if c != self.in_ch {
            return Err(NnError::Shape(format!("conv3d expects {} channels, got {c}", self.in_ch)));
        }
        let out = self.out_dims(dims)?;
        let n_out = out[0] * out[1] * out[2];
        let kk = self.in_ch * self.kernel.pow(3);
        let cols = self.im2col(input.data(), dims, out);
        let mut y = Vec::with_capacity(self.out_ch * n_out);
        for &b in &self.bias {
            y.extend(std::iter::repeat_n(b, n_out));
        }
        T::gemm(self.out_ch, kk, n_out, T::one(), &self.weight, (kk as isize, 1), &cols, (n_out as isize, 1), T::one(), &mut y);
        Ok((Tensor::new(vec![self.out_ch, out[0], out[1], out[2]], y)?, cols))
    }

    /// Forward pass without keeping the im2col buffer.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Accumulates weight and bias gradients into `grad_w`/`grad_b` and
    /// returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        grad_out: &Tensor<T>,
        cols: &[T],
        input_shape: &[usize],
        grad_w: &mut [T],
        grad_b: &mut [T],
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let dims = match input_shape {
            &[_, a, b, c] => [a, b, c],
            s => return Err(NnError::Shape(format!("bad conv input shape {s:?}"))),
        };
        let out = self.out_dims(dims)?;
        let n_out = out[0] * out[1] * out[2];
        let kk = self.in_ch * self.kernel.pow(3);
        if grad_out.shape() != [self.out_ch, out[0], out[1], out[2]] || cols.len() != kk * n_out {
            return Err(NnError::Shape(format!("conv3d backward: unexpected grad shape {:?}", grad_out.shape())));
        }
        let g = grad_out.data();
        // dW += dY · colsᵀ
        T::gemm(self.out_ch, n_out, kk, T::one(), g, (n_out as isize, 1), cols, (1, n_out as isize), T::one(), grad_w);
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb = *gb + g[o * n_out..(o + 1) * n_out].iter().copied().sum::<T>();
        }
        if !need_input {
            return Ok(None);
        }
        // dcols = Wᵀ · dY
        let mut dcols = vec![T::zero(); kk * n_out];
        T::gemm(kk, self.out_ch, n_out, T::one(), &self.weight, (1, kk as isize), g, (n_out as isize, 1), T::zero(), &mut dcols);
        let dx = self.col2im(&dcols, dims, out);
        Ok(Some(Tensor::new(input_shape.to_vec(), dx)?))
    }
}

/// Affine map `y = W x + b` with `W` stored row-major `[out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(NnError::Shape(format!(
                "dense {in_dim}->{out_dim}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Dense { in_dim, out_dim, weight, bias })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != [self.in_dim] {
            return Err(NnError::Shape(format!("dense expects [{}], got {:?}", self.in_dim, x.shape())));
        }
        let mut y = self.bias.clone();
        T::gemm(self.out_dim, self.in_dim, 1, T::one(), &self.weight, (self.in_dim as isize, 1), x.data(), (1, 1), T::one(), &mut y);
        Ok(Tensor::from_vec(y))
    }

    pub fn backward(
        &self,
        grad_out: &Tensor<T>,
        input: &[T],
        grad_w: &mut [T],
        grad_b: &mut [T],
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        if grad_out.shape() != [self.out_dim] || input.len() != self.in_dim {
            return Err(NnError::Shape(format!("dense backward: unexpected grad shape {:?}", grad_out.shape())));
        }
        let g = grad_out.data();
        // dW += g xᵀ
        T::gemm(self.out_dim, 1, self.in_dim, T::one(), g, (1, 1), input, (self.in_dim as isize, 1), T::one(), grad_w);
        for (gb, &gi) in grad_b.iter_mut().zip(g) {
            *gb = *gb + gi;
        }
        if !need_input {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); self.in_dim];
        T::gemm(self.in_dim, self.out_dim, 1, T::one(), &self.weight, (1, self.in_dim as isize), g, (1, 1), T::zero(), &mut dx);
        Ok(Some(Tensor::from_vec(dx)))
    }
}

/// 2×2×2 non-overlapping max pooling. Returns the output and, per output
/// element, the linear input index of the winning element. Ties go to the
/// lowest linear index.
pub fn maxpool3d_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, [a, b, d]) = input.volume_dims()?;
    if a % 2 != 0 || b % 2 != 0 || d % 2 != 0 {
        return Err(NnError::Shape(format!("maxpool3d needs even extents, got {:?}", [a, b, d])));
    }
    let (oa, ob, od) = (a / 2, b / 2, d / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oa * ob * od);
    let mut argmax = Vec::with_capacity(out.capacity());
    for ch in 0..c {
        let base = ch * a * b * d;
        for u in 0..oa {
            for v in 0..ob {
                for w in 0..od {
                    let mut best_idx = base + (2 * u * b + 2 * v) * d + 2 * w;
                    let mut best = x[best_idx];
                    for di in 0..2 {
                        for dj in 0..2 {
                            for dk in 0..2 {
                                let idx = base + ((2 * u + di) * b + 2 * v + dj) * d + 2 * w + dk;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::new(vec![c, oa, ob, od], out)?, argmax))
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool3d_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if grad_out.numel() != argmax.len() {
        return Err(NnError::Shape("maxpool3d backward: argmax length mismatch".into()));
    }
    let n: usize = input_shape.iter().product();
    let mut dx = vec![T::zero(); n];
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        if idx >= n {
            return Err(NnError::Shape("maxpool3d backward: argmax out of range".into()));
        }
        dx[idx] = dx[idx] + g;
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Gather through fixed argmax indices (used with frozen pooling decisions).
pub(crate) fn maxpool3d_gather<T: Real>(input: &Tensor<T>, argmax: &[usize]) -> Result<Tensor<T>> {
    let (c, [a, b, d]) = input.volume_dims()?;
    if argmax.len() != c * (a / 2) * (b / 2) * (d / 2) {
        return Err(NnError::Shape("frozen argmax does not match input".into()));
    }
    let out = argmax.iter().map(|&i| input.data()[i]).collect();
    Tensor::new(vec![c, a / 2, b / 2, d / 2], out)
}

fn crop_offsets(dims: [usize; 3], target: [usize; 3]) -> [usize; 3] {
    [(dims[0] - target[0]) / 2, (dims[1] - target[1]) / 2, (dims[2] - target[2]) / 2]
}

pub fn center_crop_forward<T: Real>(input: &Tensor<T>, target: [usize; 3]) -> Result<Tensor<T>> {
    let (c, dims) = input.volume_dims()?;
    if (0..3).any(|i| target[i] == 0 || target[i] > dims[i]) {
        return Err(NnError::Shape(format!("cannot crop {dims:?} to {target:?}")));
    }
    let off = crop_offsets(dims, target);
    let x = input.data();
    let mut out = Vec::with_capacity(c * target.iter().product::<usize>());
    for ch in 0..c {
        for u in 0..target[0] {
            for v in 0..target[1] {
                let start = ((ch * dims[0] + u + off[0]) * dims[1] + v + off[1]) * dims[2] + off[2];
                out.extend_from_slice(&x[start..start + target[2]]);
            }
        }
    }
    Tensor::new(vec![c, target[0], target[1], target[2]], out)
}

pub fn center_crop_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let (c, target) = grad_out.volume_dims()?;
    let dims = match input_shape {
        &[_, a, b, d] => [a, b, d],
        s => return Err(NnError::Shape(format!("bad crop input shape {s:?}"))),
    };
    let off = crop_offsets(dims, target);
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    let g = grad_out.data();
    for ch in 0..c {
        for u in 0..target[0] {
            for v in 0..target[1] {
                let start = ((ch * dims[0] + u + off[0]) * dims[1] + v + off[1]) * dims[2] + off[2];
                let src = ((ch * target[0] + u) * target[1] + v) * target[2];
                dx[start..start + target[2]].copy_from_slice(&g[src..src + target[2]]);
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `x` for `x > 0`, `alpha (e^x - 1)` otherwise.
pub fn elu<T: Real>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x.exp_m1()
    }
}

/// Derivative of [`elu`] at `x`.
pub fn elu_backward<T: Real>(x: T, alpha: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        alpha * x.exp()
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    let n: usize = shape.iter().product();
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let data = if rate == 0.0 {
        vec![T::one(); n]
    } else {
        (0..n).map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale }).collect()
    };
    Tensor::new(shape.to_vec(), data)
}

//! Minimal CPU network engine: tensors, layers with hand-written backward
//! passes, binary cross-entropy, SGD with momentum, dropout and
//! finite-difference gradient checking.

mod gradcheck;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{grad_check, input_grad_check, GradCheckReport};
pub use layers::{
    center_crop_backward, center_crop_forward, dropout_mask, elu, elu_backward, maxpool3d_backward,
    maxpool3d_forward, sigmoid, Conv3d, Dense,
};
pub use loss::bce_with_logits;
pub use network::{Cache, ForwardMode, Gradients, Layer, Network};
pub use optim::{sgd_momentum_step, Sgd};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Serializable description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Cross-correlation, stride 1, cubic kernel, symmetric zero padding.
    Conv3d { in_ch: usize, out_ch: usize, kernel: usize, padding: usize },
    /// 2×2×2 window, stride 2.
    MaxPool3d,
    /// Center crop of the spatial extents to `target`.
    CenterCrop3d { target: [usize; 3] },
    Dense { in_dim: usize, out_dim: usize },
    Elu { alpha: f64 },
    Sigmoid,
    Dropout { rate: f64 },
    Flatten,
}

impl LayerSpec {
    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, [usize; 3])> {
            match input {
                &[c, a, b, d] => Ok((c, [a, b, d])),
                s => Err(NnError::Shape(format!("{what} expects [C, X, Y, Z], got {s:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv3d { in_ch, out_ch, kernel, padding } => {
                let (c, dims) = spatial("conv3d")?;
                if c != in_ch {
                    return Err(NnError::Shape(format!("conv3d expects {in_ch} channels, got {c}")));
                }
                if kernel == 0 || out_ch == 0 {
                    return Err(NnError::Config("conv3d needs kernel >= 1 and out_ch >= 1".into()));
                }
                let mut out = vec![out_ch];
                for d in dims {
                    if d + 2 * padding < kernel {
                        return Err(NnError::Shape(format!(
                            "extent {d} with padding {padding} smaller than kernel {kernel}"
                        )));
                    }
                    out.push(d + 2 * padding - kernel + 1);
                }
                Ok(out)
            }
            LayerSpec::MaxPool3d => {
                let (c, dims) = spatial("maxpool3d")?;
                if dims.iter().any(|d| d % 2 != 0) {
                    return Err(NnError::Shape(format!("maxpool3d needs even extents, got {dims:?}")));
                }
                Ok(vec![c, dims[0] / 2, dims[1] / 2, dims[2] / 2])
            }
            LayerSpec::CenterCrop3d { target } => {
                let (c, dims) = spatial("center_crop3d")?;
                if (0..3).any(|i| target[i] == 0 || target[i] > dims[i]) {
                    return Err(NnError::Shape(format!("cannot crop {dims:?} to {target:?}")));
                }
                Ok(vec![c, target[0], target[1], target[2]])
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err(NnError::Config("dense dims must be positive".into()));
                }
                if input != [in_dim] {
                    return Err(NnError::Shape(format!("dense expects [{in_dim}], got {input:?}")));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Elu { alpha } => {
                if !(alpha > 0.0) {
                    return Err(NnError::Config(format!("elu alpha must be > 0, got {alpha}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::Config(format!("dropout rate must be in [0, 1), got {rate}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => kernel.pow(3) * in_ch * out_ch + out_ch,
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            _ => 0,
        }
    }
}

//! Voxel-to-ROI fingerprints and ROI-to-ROI correlation matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{roi_timeseries, PreprocessError, RoiTimeSeries};
use crate::volume::{check_grid_compat, Atlas, Mask, MultiChannelVolume, TimeSeriesVolume, VolumeError};
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum ConnectivityError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
}

pub type Result<T> = std::result::Result<T, ConnectivityError>;

/// Centered copy and its Euclidean norm; a norm of zero marks a constant
/// series.
fn center(x: &[f64]) -> (Vec<f64>, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    // rounding in the mean leaves ~eps-sized residues on constant input
    if norm <= 1e-13 * scale * (x.len() as f64).sqrt() {
        (c, 0.0)
    } else {
        (c, norm)
    }
}

/// Sample Pearson correlation. Returns `(r, degenerate)`; a zero-variance
/// input yields `(0, true)`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, bool)> {
    if x.len() != y.len() {
        return Err(ConnectivityError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(ConnectivityError::TooShort(x.len()));
    }
    let (xc, nx) = center(x);
    let (yc, ny) = center(y);
    if nx == 0.0 || ny == 0.0 {
        return Ok((0.0, true));
    }
    let dot: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    Ok(((dot / (nx * ny)).clamp(-1.0, 1.0), false))
}

/// R-channel volume of voxel-to-ROI correlations, channel `r` belonging to
/// ROI id `r + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintVolume<T = f32> {
    pub volume: MultiChannelVolume<T>,
    pub atlas_id: String,
    /// In-mask voxels whose series had zero variance (all channels set to 0).
    pub degenerate_voxels: usize,
}

impl<T: Real> FingerprintVolume<T> {
    /// Channel labels in ascending ROI id order.
    pub fn channel_labels(&self) -> Vec<String> {
        (1..=self.volume.channels()).map(|id| format!("roi_{id}")).collect()
    }
}

/// Correlates each in-mask voxel with every column of `roi_ts`.
pub fn fingerprint<T: Real>(
    ts: &TimeSeriesVolume<T>,
    roi_ts: &RoiTimeSeries,
    mask: &Mask,
    atlas_id: &str,
) -> Result<FingerprintVolume<T>> {
    check_grid_compat(ts.meta(), mask.meta())?;
    if ts.frames() != roi_ts.frames {
        return Err(ConnectivityError::LengthMismatch(ts.frames(), roi_ts.frames));
    }
    if ts.frames() < 2 {
        return Err(ConnectivityError::TooShort(ts.frames()));
    }
    let n = ts.meta().voxel_count();
    let rois = roi_ts.rois;
    // unit-norm centered ROI columns; degenerate columns stay all-zero
    let cols: Vec<Vec<f64>> = (0..rois)
        .map(|r| {
            let (c, norm) = center(&roi_ts.column(r));
            if norm == 0.0 {
                vec![0.0; c.len()]
            } else {
                c.into_iter().map(|v| v / norm).collect()
            }
        })
        .collect();
    let mut data = vec![T::zero(); rois * n];
    let mut degenerate = 0;
    for v in mask.indices() {
        let (xc, norm) = center(&ts.voxel_series(v));
        if norm == 0.0 {
            degenerate += 1;
            continue;
        }
        for (r, col) in cols.iter().enumerate() {
            let dot: f64 = xc.iter().zip(col).map(|(a, b)| a * b).sum();
            data[r * n + v] = T::from_f64((dot / norm).clamp(-1.0, 1.0));
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} in-mask voxels had zero variance; fingerprint set to 0");
    }
    Ok(FingerprintVolume {
        volume: MultiChannelVolume::new(ts.meta().spatial(), rois, data)?,
        atlas_id: atlas_id.to_string(),
        degenerate_voxels: degenerate,
    })
}

/// Symmetric R×R Pearson matrix of ROI-mean series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityMatrix {
    pub atlas_id: String,
    pub rois: usize,
    /// Row-major R×R values.
    pub values: Vec<f64>,
    /// Zero-based indices of ROI columns with zero variance.
    #[serde(default)]
    pub degenerate_rois: Vec<usize>,
}

impl ConnectivityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.rois + j]
    }

    /// Rebuilds a matrix from its strict upper triangle with a unit diagonal.
    pub fn from_upper(atlas_id: &str, rois: usize, upper: &[f64]) -> Result<Self> {
        let expected = rois * rois.saturating_sub(1) / 2;
        if upper.len() != expected {
            return Err(ConnectivityError::LengthMismatch(upper.len(), expected));
        }
        let mut values = vec![0.0; rois * rois];
        let mut k = 0;
        for i in 0..rois {
            values[i * rois + i] = 1.0;
            for j in i + 1..rois {
                values[i * rois + j] = upper[k];
                values[j * rois + i] = upper[k];
                k += 1;
            }
        }
        Ok(ConnectivityMatrix { atlas_id: atlas_id.to_string(), rois, values, degenerate_rois: Vec::new() })
    }
}

pub fn roi_connectivity(roi_ts: &RoiTimeSeries, atlas_id: &str) -> Result<ConnectivityMatrix> {
    if roi_ts.frames < 2 {
        return Err(ConnectivityError::TooShort(roi_ts.frames));
    }
    let r = roi_ts.rois;
    let cols: Vec<Vec<f64>> = (0..r).map(|i| roi_ts.column(i)).collect();
    let mut values = vec![0.0; r * r];
    let mut degenerate_rois = Vec::new();
    for i in 0..r {
        values[i * r + i] = 1.0;
        if center(&cols[i]).1 == 0.0 {
            degenerate_rois.push(i);
        }
        for j in i + 1..r {
            let (v, _) = pearson(&cols[i], &cols[j])?;
            values[i * r + j] = v;
            values[j * r + i] = v;
        }
    }
    Ok(ConnectivityMatrix { atlas_id: atlas_id.to_string(), rois: r, values, degenerate_rois })
}

/// Strict upper triangle in row-major order: (0,1), (0,2), …, (R−2,R−1).
pub fn vectorize_upper(m: &ConnectivityMatrix) -> Result<Vec<f64>> {
    let r = m.rois;
    let mut out = Vec::with_capacity(r * r.saturating_sub(1) / 2);
    for i in 0..r {
        for j in i + 1..r {
            if m.get(i, j) != m.get(j, i) {
                return Err(ConnectivityError::NotSymmetric(i, j));
            }
            out.push(m.get(i, j));
        }
    }
    Ok(out)
}

/// Fingerprint volume and ROI matrix for one subject and atlas, sharing the
/// ROI mean series.
pub fn subject_connectivity<T: Real>(
    ts: &TimeSeriesVolume<T>,
    atlas: &Atlas,
    atlas_id: &str,
) -> Result<(FingerprintVolume<T>, ConnectivityMatrix)> {
    let roi = roi_timeseries(ts, atlas)?;
    let fp = fingerprint(ts, &roi, &atlas.to_mask(), atlas_id)?;
    let m = roi_connectivity(&roi, atlas_id)?;
    Ok((fp, m))
}

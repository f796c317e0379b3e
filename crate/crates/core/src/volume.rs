//! Grid metadata, volumes and atlas/mask derivations.
//!
//! All voxel buffers use one storage order: x varies fastest, then y, then z,
//! with the channel or time axis slowest. A voxel's linear index is
//! `x + nx * (y + ny * z)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("grid mismatch: {a:?} vs {b:?}")]
    GridMismatch { a: Box<GridMeta>, b: Box<GridMeta> },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("data length {got} does not match expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
    #[error("mask includes no voxels")]
    EmptyMask,
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// Voxel geometry shared by every volume type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    /// Repetition time in seconds; present only on time-series grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr_s: Option<f64>,
}

impl GridMeta {
    pub fn new(dims: [usize; 3], voxel_size_mm: [f64; 3]) -> Result<Self> {
        let meta = GridMeta { dims, voxel_size_mm, tr_s: None };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_tr(mut self, tr_s: f64) -> Result<Self> {
        self.tr_s = Some(tr_s);
        self.validate()?;
        Ok(self)
    }

    /// Isotropic grid, the common case for MNI-space inputs.
    pub fn cube(n: usize, voxel_mm: f64) -> Self {
        GridMeta { dims: [n, n, n], voxel_size_mm: [voxel_mm; 3], tr_s: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidGrid(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.voxel_size_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::InvalidGrid(format!(
                "voxel sizes must be > 0, got {:?}",
                self.voxel_size_mm
            )));
        }
        if let Some(tr) = self.tr_s {
            if !(tr > 0.0 && tr.is_finite()) {
                return Err(VolumeError::InvalidGrid(format!("tr_s must be > 0, got {tr}")));
            }
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Same geometry without the repetition time.
    pub fn spatial(&self) -> GridMeta {
        GridMeta { tr_s: None, ..self.clone() }
    }
}

/// Succeeds iff dims and voxel sizes agree component-wise. TR is not compared.
pub fn check_grid_compat(a: &GridMeta, b: &GridMeta) -> Result<()> {
    if a.dims == b.dims && a.voxel_size_mm == b.voxel_size_mm {
        Ok(())
    } else {
        Err(VolumeError::GridMismatch { a: Box::new(a.clone()), b: Box::new(b.clone()) })
    }
}

fn check_finite<T: Real>(data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(VolumeError::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(VolumeError::Length { expected, got })
    }
}

/// Scalar field on a 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D<T = f32> {
    meta: GridMeta,
    data: Vec<T>,
}

impl<T: Real> Volume3D<T> {
    pub fn new(meta: GridMeta, data: Vec<T>) -> Result<Self> {
        meta.validate()?;
        check_len(meta.voxel_count(), data.len())?;
        check_finite(&data)?;
        Ok(Volume3D { meta, data })
    }

    pub fn zeros(meta: GridMeta) -> Self {
        let n = meta.voxel_count();
        Volume3D { meta, data: vec![T::zero(); n] }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.meta.index(x, y, z)]
    }
}

/// 4D functional series: `frames` volumes stacked along the slowest axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesVolume<T = f32> {
    meta: GridMeta,
    frames: usize,
    data: Vec<T>,
}

impl<T: Real> TimeSeriesVolume<T> {
    pub fn new(meta: GridMeta, frames: usize, data: Vec<T>) -> Result<Self> {
        meta.validate()?;
        if meta.tr_s.is_none() {
            return Err(VolumeError::InvalidGrid("time series requires tr_s".into()));
        }
        if frames == 0 {
            return Err(VolumeError::InvalidGrid("time series requires at least one frame".into()));
        }
        check_len(meta.voxel_count() * frames, data.len())?;
        check_finite(&data)?;
        Ok(TimeSeriesVolume { meta, frames, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn tr_s(&self) -> f64 {
        self.meta.tr_s.expect("validated on construction")
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// One frame as a contiguous slice.
    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.meta.voxel_count();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn value(&self, voxel: usize, t: usize) -> T {
        self.data[t * self.meta.voxel_count() + voxel]
    }

    /// Gather one voxel's series (strided in storage) as f64.
    pub fn voxel_series(&self, voxel: usize) -> Vec<f64> {
        let n = self.meta.voxel_count();
        (0..self.frames).map(|t| self.data[t * n + voxel].as_f64()).collect()
    }

    /// Keep only the listed frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        let n = self.meta.voxel_count();
        if frames.is_empty() {
            return Err(VolumeError::InvalidGrid("frame selection is empty".into()));
        }
        let mut data = Vec::with_capacity(frames.len() * n);
        for &t in frames {
            if t >= self.frames {
                return Err(VolumeError::InvalidGrid(format!("frame {t} out of range")));
            }
            data.extend_from_slice(self.frame(t));
        }
        Ok(TimeSeriesVolume { meta: self.meta.clone(), frames: frames.len(), data })
    }
}

/// Channel-stacked 3D volume, indexed (c, x, y, z) with the channel slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelVolume<T = f32> {
    meta: GridMeta,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> MultiChannelVolume<T> {
    pub fn new(meta: GridMeta, channels: usize, data: Vec<T>) -> Result<Self> {
        meta.validate()?;
        if channels == 0 {
            return Err(VolumeError::InvalidGrid("at least one channel required".into()));
        }
        check_len(meta.voxel_count() * channels, data.len())?;
        check_finite(&data)?;
        Ok(MultiChannelVolume { meta, channels, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.meta.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> T {
        self.data[c * self.meta.voxel_count() + self.meta.index(x, y, z)]
    }

    pub fn cast<U: Real>(&self) -> MultiChannelVolume<U> {
        MultiChannelVolume {
            meta: self.meta.clone(),
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Integer label volume: 0 is background, 1..=R are ROI ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    meta: GridMeta,
    labels: Vec<u32>,
    roi_count: usize,
}

impl Atlas {
    /// Builds an atlas; `roi_count` is the largest label present.
    pub fn new(meta: GridMeta, labels: Vec<u32>) -> Result<Self> {
        let roi_count = labels.iter().copied().max().unwrap_or(0) as usize;
        Self::with_roi_count(meta, labels, roi_count)
    }

    pub fn with_roi_count(meta: GridMeta, labels: Vec<u32>, roi_count: usize) -> Result<Self> {
        meta.validate()?;
        let meta = meta.spatial();
        check_len(meta.voxel_count(), labels.len())?;
        if roi_count < 2 {
            return Err(VolumeError::InvalidAtlas(format!("need at least 2 ROIs, got {roi_count}")));
        }
        let mut seen = vec![false; roi_count + 1];
        for &l in &labels {
            if l as usize > roi_count {
                return Err(VolumeError::InvalidAtlas(format!("label {l} exceeds roi_count {roi_count}")));
            }
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..=roi_count).find(|&r| !seen[r]) {
            return Err(VolumeError::InvalidAtlas(format!("ROI {missing} has no voxels")));
        }
        Ok(Atlas { meta, labels, roi_count })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
    pub fn roi_count(&self) -> usize {
        self.roi_count
    }

    /// Gray-matter mask: every voxel with a nonzero label.
    pub fn to_mask(&self) -> Mask {
        Mask { meta: self.meta.clone(), included: self.labels.iter().map(|&l| l > 0).collect() }
    }

    /// `counts[r]` is the number of voxels labeled `r + 1`.
    pub fn roi_voxel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.roi_count];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    /// Voxel indices of each ROI, ascending within each ROI.
    pub fn roi_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.roi_count];
        for (v, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                members[l as usize - 1].push(v);
            }
        }
        members
    }
}

pub fn atlas_to_mask(atlas: &Atlas) -> Mask {
    atlas.to_mask()
}

pub fn roi_voxel_counts(atlas: &Atlas) -> Vec<usize> {
    atlas.roi_voxel_counts()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    meta: GridMeta,
    included: Vec<bool>,
}

impl Mask {
    pub fn new(meta: GridMeta, included: Vec<bool>) -> Result<Self> {
        meta.validate()?;
        let meta = meta.spatial();
        check_len(meta.voxel_count(), included.len())?;
        if !included.iter().any(|&b| b) {
            return Err(VolumeError::EmptyMask);
        }
        Ok(Mask { meta, included })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }
    pub fn included(&self) -> &[bool] {
        &self.included
    }
    pub fn contains(&self, voxel: usize) -> bool {
        self.included[voxel]
    }
    pub fn count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }
    pub fn indices(&self) -> Vec<usize> {
        self.included.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    /// Voxelwise union; grids must agree.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        check_grid_compat(&self.meta, &other.meta)?;
        Ok(Mask {
            meta: self.meta.clone(),
            included: self.included.iter().zip(&other.included).map(|(&a, &b)| a || b).collect(),
        })
    }
}

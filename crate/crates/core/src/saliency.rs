//! Input-gradient saliency: per-subject gradients, channel max-abs collapse
//! and group averaging.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{atomic_write, write_json, write_volume, AnyVolume, DataError, VolumeExtras};
use crate::models::volume_to_tensor;
use crate::nn::{Network, NnError};
use crate::volume::{check_grid_compat, GridMeta, Mask, MultiChannelVolume, Volume3D, VolumeError};
use crate::Real;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("input shape {got:?} does not match model input {expected:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("saliency maps are on different grids: {0}")]
    GridMismatch(String),
    #[error("no maps to average")]
    Empty,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, SaliencyError>;

/// Which output the gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Pre-sigmoid score; does not vanish when the output saturates.
    #[default]
    Logit,
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMeta {
    /// A subject id, or "group" for averages.
    pub subject_id: String,
    pub atlas_id: String,
    pub checkpoint_id: String,
    /// Subjects that went into a group average, in input order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subjects: Vec<String>,
    #[serde(default)]
    pub masked: bool,
    #[serde(default)]
    pub max_normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub volume: Volume3D<f64>,
    pub meta: SaliencyMeta,
}

/// d(score)/d(input) for every channel and voxel, in inference mode.
pub fn input_gradient<T: Real>(net: &Network<T>, input: &MultiChannelVolume<T>, mode: ScoreMode) -> Result<MultiChannelVolume<T>> {
    let x = volume_to_tensor(input);
    if x.shape() != net.input_shape() {
        return Err(SaliencyError::Shape { expected: net.input_shape().to_vec(), got: x.shape().to_vec() });
    }
    let g = match mode {
        ScoreMode::Logit => net.input_gradient(&x)?,
        ScoreMode::Probability => net.input_gradient_proba(&x)?,
    };
    Ok(MultiChannelVolume::new(input.meta().clone(), input.channels(), g.into_data())?)
}

/// Voxelwise max over channels of |gradient|.
pub fn collapse_channels<T: Real>(grads: &MultiChannelVolume<T>, meta: SaliencyMeta) -> SaliencyMap {
    let n = grads.meta().voxel_count();
    let mut out = vec![0.0f64; n];
    for c in 0..grads.channels() {
        for (o, g) in out.iter_mut().zip(grads.channel(c)) {
            *o = o.max(g.as_f64().abs());
        }
    }
    let volume = Volume3D::new(grads.meta().spatial(), out).expect("length matches grid");
    SaliencyMap { volume, meta }
}

/// Voxelwise mean. Each voxel's values are summed in sorted order so the
/// result does not depend on the order of `maps`.
pub fn group_average(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps.first().ok_or(SaliencyError::Empty)?;
    for m in &maps[1..] {
        check_grid_compat(first.volume.meta(), m.volume.meta()).map_err(|e| SaliencyError::GridMismatch(e.to_string()))?;
    }
    let n = first.volume.meta().voxel_count();
    let mut buf = Vec::with_capacity(maps.len());
    let data = (0..n)
        .map(|v| {
            buf.clear();
            buf.extend(maps.iter().map(|m| m.volume.data()[v]));
            buf.sort_by(f64::total_cmp);
            buf.iter().sum::<f64>() / maps.len() as f64
        })
        .collect();
    let checkpoint_id = if maps.iter().all(|m| m.meta.checkpoint_id == first.meta.checkpoint_id) {
        first.meta.checkpoint_id.clone()
    } else {
        "mixed".into()
    };
    Ok(SaliencyMap {
        volume: Volume3D::new(first.volume.meta().clone(), data)?,
        meta: SaliencyMeta {
            subject_id: "group".into(),
            atlas_id: first.meta.atlas_id.clone(),
            checkpoint_id,
            subjects: maps.iter().map(|m| m.meta.subject_id.clone()).collect(),
            masked: maps.iter().all(|m| m.meta.masked),
            max_normalized: false,
            root_seed: first.meta.root_seed,
        },
    })
}

impl SaliencyMap {
    /// Zeroes every voxel outside `mask`.
    pub fn apply_mask(&mut self, mask: &Mask) -> Result<()> {
        check_grid_compat(self.volume.meta(), mask.meta()).map_err(|e| SaliencyError::GridMismatch(e.to_string()))?;
        let data = self
            .volume
            .data()
            .iter()
            .zip(mask.included())
            .map(|(&v, &inside)| if inside { v } else { 0.0 })
            .collect();
        self.volume = Volume3D::new(self.volume.meta().clone(), data)?;
        self.meta.masked = true;
        Ok(())
    }

    /// Divides by the maximum value; an all-zero map is left as is.
    pub fn max_normalized(&self) -> SaliencyMap {
        let max = self.volume.data().iter().fold(0.0f64, |a, &b| a.max(b));
        let mut out = self.clone();
        if max > 0.0 {
            out.volume = Volume3D::new(self.volume.meta().clone(), self.volume.data().iter().map(|v| v / max).collect())
                .expect("same grid");
            out.meta.max_normalized = true;
        }
        out
    }

    /// Indices of the `k` largest voxels, ties broken by lower index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let d = self.volume.data();
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    pub fn top_k_csv(&self, k: usize) -> String {
        let meta: &GridMeta = self.volume.meta();
        let mut s = String::from("x,y,z,value\n");
        for i in self.top_k(k) {
            let [x, y, z] = meta.coords(i);
            s.push_str(&format!("{x},{y},{z},{:?}\n", self.volume.data()[i]));
        }
        s
    }

    /// Writes `<stem>.cvol`, `<stem>.json` (metadata) and `<stem>_top.csv`.
    pub fn write(&self, dir: &Path, stem: &str, top_k: usize) -> Result<()> {
        let extras = VolumeExtras { atlas_id: Some(self.meta.atlas_id.clone()), root_seed: self.meta.root_seed, ..Default::default() };
        write_volume(&AnyVolume::Volume(self.volume.clone()), &extras, &dir.join(format!("{stem}.cvol")))?;
        write_json(&self.meta, &dir.join(format!("{stem}.json")))?;
        atomic_write(&dir.join(format!("{stem}_top.csv")), self.top_k_csv(top_k).as_bytes())?;
        Ok(())
    }
}

/// Fraction of the top-decile in-mask voxels that fall in `target`, divided
/// by the fraction of all in-mask voxels in `target`. 1 means no
/// concentration; the maximum is `1 / base_rate`.
pub fn concentration_ratio(map: &SaliencyMap, mask: &Mask, target: &[bool]) -> f64 {
    let d = map.volume.data();
    let mut inside: Vec<usize> = mask.indices();
    let base = inside.iter().filter(|&&i| target[i]).count() as f64 / inside.len().max(1) as f64;
    inside.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let top = (inside.len() as f64 / 10.0).ceil() as usize;
    let hits = inside[..top].iter().filter(|&&i| target[i]).count() as f64;
    if base == 0.0 || top == 0 {
        return 0.0;
    }
    hits / top as f64 / base
}

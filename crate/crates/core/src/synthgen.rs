//! Seeded two-group synthetic datasets with planted ROI-level connectivity
//! differences.
//!
//! Each group `g` has an R×R target correlation matrix `C_g`: identity plus
//! `∓Δ/2` on every planted edge (group 0 gets `−Δ/2`, group 1 `+Δ/2`). ROI
//! signals are `L_g z(t)` with `L_g` the Cholesky factor of `C_g` and `z(t)`
//! i.i.d. standard normal latents, so the latent count equals R. A voxel
//! series is its ROI signal plus white noise; background voxels are noise.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, AnyVolume, DataError, DatasetManifest, ManifestEntry, VolumeExtras};
use crate::preprocess::MotionTrace;
use crate::seed;
use crate::volume::{Atlas, GridMeta, TimeSeriesVolume, VolumeError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot fit {rois} box parcels into grid {dims:?}")]
    TooManyRois { rois: usize, dims: [usize; 3] },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub rois: usize,
    pub frames: usize,
    pub tr_s: f64,
    /// Zero-based ROI index pairs whose correlation differs between groups.
    pub planted_edges: Vec<[usize; 2]>,
    /// Between-group correlation difference on each planted edge.
    pub delta: f64,
    /// Explicit per-group R×L loadings; replaces the Cholesky construction.
    pub loadings: Option<[Vec<Vec<f64>>; 2]>,
    pub noise_sd: f64,
    pub subjects_per_group: usize,
    /// Per-frame probability of a 1 mm translation jump in the motion trace.
    pub spike_probability: f64,
    /// Standard deviation of the per-frame motion random walk (mm; rotations
    /// use the same arc length on a 50 mm sphere).
    pub motion_step_sd_mm: f64,
    /// Atlases written besides the generative one, each with jittered
    /// parcel boundaries.
    pub extra_atlases: usize,
    /// Subject ids are `<id_prefix>-<index:04>`.
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dims: [12, 12, 12],
            voxel_size_mm: [3.0; 3],
            rois: 8,
            frames: 200,
            tr_s: 2.0,
            planted_edges: vec![[0, 1], [0, 2], [1, 2]],
            delta: 0.5,
            loadings: None,
            noise_sd: 1.0,
            subjects_per_group: 100,
            spike_probability: 0.0,
            motion_step_sd_mm: 0.01,
            extra_atlases: 1,
            id_prefix: "sub".into(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.id_prefix.is_empty() || self.id_prefix.contains(['/', '\\']) {
            return bad(format!("id_prefix must be a nonempty file-name fragment, got {:?}", self.id_prefix));
        }
        if self.rois < 2 {
            return bad(format!("need at least 2 ROIs, got {}", self.rois));
        }
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if !(self.noise_sd > 0.0) {
            return bad(format!("noise_sd must be > 0, got {}", self.noise_sd));
        }
        if !(self.tr_s > 0.0) {
            return bad(format!("tr_s must be > 0, got {}", self.tr_s));
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return bad(format!("spike_probability must be in [0, 1], got {}", self.spike_probability));
        }
        if !(self.motion_step_sd_mm >= 0.0) {
            return bad("motion_step_sd_mm must be >= 0".into());
        }
        if !(self.delta.abs() < 2.0) {
            return bad(format!("|delta|/2 must be a valid correlation, got delta {}", self.delta));
        }
        for e in &self.planted_edges {
            if e[0] == e[1] || e[0] >= self.rois || e[1] >= self.rois {
                return bad(format!("planted edge {e:?} invalid for {} ROIs", self.rois));
            }
        }
        if let Some(l) = &self.loadings {
            let latents = l[0].first().map_or(0, Vec::len);
            for g in l {
                if g.len() != self.rois || g.iter().any(|row| row.len() != latents) || latents == 0 {
                    return bad("loadings must be two R×L matrices with L >= 1".into());
                }
            }
        }
        GridMeta::new(self.dims, self.voxel_size_mm)?;
        Ok(())
    }

    /// Target ROI correlation matrix of a group (row-major R×R).
    pub fn group_correlation(&self, group: u8) -> Vec<f64> {
        let r = self.rois;
        let mut c = vec![0.0; r * r];
        for i in 0..r {
            c[i * r + i] = 1.0;
        }
        let half = if group == 0 { -self.delta / 2.0 } else { self.delta / 2.0 };
        for e in &self.planted_edges {
            c[e[0] * r + e[1]] = half;
            c[e[1] * r + e[0]] = half;
        }
        c
    }

    /// R×L loadings of a group.
    pub fn group_loadings(&self, group: u8) -> Result<Vec<Vec<f64>>> {
        if let Some(l) = &self.loadings {
            return Ok(l[group as usize].clone());
        }
        let r = self.rois;
        let c = DMatrix::from_row_slice(r, r, &self.group_correlation(group));
        let chol = c.cholesky().ok_or_else(|| {
            SynthError::InvalidSpec(format!("group {group} correlation matrix is not positive definite (delta {})", self.delta))
        })?;
        let l = chol.l();
        Ok((0..r).map(|i| (0..r).map(|j| l[(i, j)]).collect()).collect())
    }
}

/// Balanced factorization of `r` into three box counts, largest first.
fn factor3(r: usize) -> [usize; 3] {
    let mut best = [r, 1, 1];
    for a in 1..=r {
        if r % a != 0 {
            continue;
        }
        for b in 1..=r / a {
            if (r / a) % b != 0 {
                continue;
            }
            let mut f = [a, b, r / a / b];
            f.sort_unstable_by(|x, y| y.cmp(x));
            if f[0] < best[0] || (f[0] == best[0] && f[1] < best[1]) {
                best = f;
            }
        }
    }
    best
}

/// Boundaries splitting `0..n` into `parts` nonempty intervals, interior cut
/// points jittered by at most one voxel when `jitter` is set.
fn split_points(n: usize, parts: usize, rng: &mut ChaCha8Rng, jitter: bool) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..=parts).map(|i| i * n / parts).collect();
    if jitter {
        for i in 1..parts {
            let d: i64 = rng.random_range(-1..=1);
            let c = cuts[i] as i64 + d;
            if c > cuts[i - 1] as i64 && c < cuts[i + 1] as i64 {
                cuts[i] = c as usize;
            }
        }
    }
    cuts
}

/// Background mask: voxels with at least two coordinates on the grid
/// boundary (the edges of the box), roughly 7–15% on 8³–12³ grids.
fn is_background(dims: [usize; 3], c: [usize; 3]) -> bool {
    (0..3).filter(|&a| dims[a] > 2 && (c[a] == 0 || c[a] == dims[a] - 1)).count() >= 2
}

fn build_atlas(meta: &GridMeta, rois: usize, rng: &mut ChaCha8Rng, jitter: bool) -> Result<Atlas> {
    if rois < 2 {
        return Err(SynthError::TooManyRois { rois, dims: meta.dims });
    }
    let f = factor3(rois);
    // largest factor on the largest axis
    let mut axes = [0usize, 1, 2];
    axes.sort_by(|&a, &b| meta.dims[b].cmp(&meta.dims[a]));
    let mut parts = [1usize; 3];
    for (k, &a) in axes.iter().enumerate() {
        parts[a] = f[k];
    }
    if (0..3).any(|a| parts[a] > meta.dims[a]) {
        return Err(SynthError::TooManyRois { rois, dims: meta.dims });
    }
    let cuts: Vec<Vec<usize>> = (0..3).map(|a| split_points(meta.dims[a], parts[a], rng, jitter)).collect();
    let cell = |a: usize, x: usize| cuts[a].iter().skip(1).position(|&c| x < c).unwrap();
    let labels: Vec<u32> = (0..meta.voxel_count())
        .map(|i| {
            let c = meta.coords(i);
            if is_background(meta.dims, c) {
                return 0;
            }
            let (ix, iy, iz) = (cell(0, c[0]), cell(1, c[1]), cell(2, c[2]));
            (1 + ix + parts[0] * (iy + parts[1] * iz)) as u32
        })
        .collect();
    Atlas::with_roi_count(meta.clone(), labels, rois).map_err(|_| SynthError::TooManyRois { rois, dims: meta.dims })
}

/// Partitions the grid into `rois` rectangular parcels with a background rim
/// on the box edges. Boundaries are jittered by the seed.
pub fn generate_atlas(meta: &GridMeta, rois: usize, seed_value: u64) -> Result<Atlas> {
    build_atlas(meta, rois, &mut seed::rng(seed_value), true)
}

/// Generator with the atlas and loadings precomputed.
#[derive(Debug, Clone)]
pub struct Synth {
    pub spec: SynthSpec,
    pub atlas: Atlas,
    loadings: [Vec<Vec<f64>>; 2],
}

impl Synth {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let meta = GridMeta::new(spec.dims, spec.voxel_size_mm)?;
        // the generative atlas keeps evenly spaced boundaries
        let atlas = build_atlas(&meta, spec.rois, &mut seed::rng(0), false)?;
        let loadings = [spec.group_loadings(0)?, spec.group_loadings(1)?];
        Ok(Synth { spec, atlas, loadings })
    }

    /// Additional atlas `k` (0-based), derived from the root seed.
    pub fn extra_atlas(&self, k: usize) -> Result<Atlas> {
        generate_atlas(self.atlas.meta(), self.spec.rois, seed::derive(self.spec.seed, &format!("atlas/{k}")))
    }

    pub fn generate_subject(&self, group: u8, rng: &mut ChaCha8Rng) -> (TimeSeriesVolume<f32>, MotionTrace) {
        let s = &self.spec;
        let meta = self.atlas.meta().clone().with_tr(s.tr_s).expect("validated tr");
        let n = meta.voxel_count();
        let load = &self.loadings[group as usize];
        let latents = load[0].len();
        let labels = self.atlas.labels();
        let mut data = vec![0.0f32; n * s.frames];
        let mut roi_signal = vec![0.0; s.rois];
        let mut z = vec![0.0; latents];
        for t in 0..s.frames {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for (r, sig) in roi_signal.iter_mut().enumerate() {
                *sig = load[r].iter().zip(&z).map(|(a, b)| a * b).sum();
            }
            let frame = &mut data[t * n..(t + 1) * n];
            for (v, out) in frame.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                let base = match labels[v] {
                    0 => 0.0,
                    l => roi_signal[l as usize - 1],
                };
                *out = (base + s.noise_sd * noise) as f32;
            }
        }
        let ts = TimeSeriesVolume::new(meta, s.frames, data).expect("finite synthetic data");
        (ts, self.generate_motion(rng))
    }

    fn generate_motion(&self, rng: &mut ChaCha8Rng) -> MotionTrace {
        let s = &self.spec;
        let mut pos = [0.0f64; 6];
        let mut frames = Vec::with_capacity(s.frames);
        for t in 0..s.frames {
            if t > 0 {
                for (i, p) in pos.iter_mut().enumerate() {
                    let step: f64 = rng.sample::<f64, _>(StandardNormal) * s.motion_step_sd_mm;
                    *p += if i < 3 { step } else { step / crate::preprocess::HEAD_RADIUS_MM };
                }
                if rng.random_bool(s.spike_probability) {
                    pos[0] += 1.0;
                }
            }
            frames.push(pos);
        }
        MotionTrace::new(frames).expect("finite motion")
    }

    /// Label of subject `i`: groups alternate so every prefix is balanced.
    pub fn subject_group(i: usize) -> u8 {
        (i % 2) as u8
    }

    pub fn subject_id(&self, i: usize) -> String {
        format!("{}-{i:04}", self.spec.id_prefix)
    }

    /// Per-subject stream; independent of generation order.
    pub fn subject_rng(&self, i: usize) -> ChaCha8Rng {
        seed::rng(seed::derive_index(seed::derive(self.spec.seed, "subject"), i as u64))
    }

    /// Atlas ids and atlases written by `generate_dataset`.
    pub fn atlases(&self) -> Result<Vec<(String, Atlas)>> {
        let mut v = vec![("synth_a".to_string(), self.atlas.clone())];
        for k in 0..self.spec.extra_atlases {
            v.push((format!("synth_{}", (b'b' + k as u8) as char), self.extra_atlas(k)?));
        }
        Ok(v)
    }
}

pub fn generate_subject(spec: &SynthSpec, group: u8, rng: &mut ChaCha8Rng) -> Result<(TimeSeriesVolume<f32>, MotionTrace)> {
    Ok(Synth::new(spec.clone())?.generate_subject(group, rng))
}

/// Writes `spec.json`, `atlases/<id>.cvol`, per-subject time series and
/// motion files under `subjects/`, and `manifest.json`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let synth = Synth::new(spec.clone())?;
    dataio::write_json(spec, &out_dir.join("spec.json"))?;
    let extras = VolumeExtras { root_seed: Some(spec.seed), ..Default::default() };
    for (id, atlas) in synth.atlases()? {
        let e = VolumeExtras { atlas_id: Some(id.clone()), ..extras.clone() };
        dataio::write_volume::<f32>(&AnyVolume::Atlas(atlas), &e, &out_dir.join("atlases").join(format!("{id}.cvol")))?;
    }
    let mut entries = Vec::with_capacity(2 * spec.subjects_per_group);
    for i in 0..2 * spec.subjects_per_group {
        let id = synth.subject_id(i);
        let group = Synth::subject_group(i);
        let (ts, motion) = synth.generate_subject(group, &mut synth.subject_rng(i));
        let ts_rel = format!("subjects/{id}_ts.cvol");
        let motion_rel = format!("subjects/{id}_motion.txt");
        dataio::write_volume(&AnyVolume::TimeSeries(ts), &extras, &out_dir.join(&ts_rel))?;
        dataio::write_motion(&motion, &out_dir.join(&motion_rel))?;
        let mut e = ManifestEntry::new(id, group);
        e.timeseries_path = Some(ts_rel);
        e.motion_params_path = Some(motion_rel);
        e.site = Some("synth".into());
        entries.push(e);
    }
    let manifest = DatasetManifest::new(entries);
    dataio::write_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

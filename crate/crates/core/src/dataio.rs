//! File formats: CVOL volumes, JSON manifests, motion text files and
//! JSON + blob checkpoints.
//!
//! CVOL layout: 8-byte magic `CVOL\0\0\0\x01`, u64 LE header length, UTF-8
//! JSON header, little-endian payload in canonical order (x fastest, then y,
//! z, then channel/time).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::LayerSpec;
use crate::preprocess::{MotionTrace, PreprocessError};
use crate::volume::{Atlas, GridMeta, MultiChannelVolume, TimeSeriesVolume, Volume3D, VolumeError};
use crate::Real;

pub const CVOL_MAGIC: [u8; 8] = *b"CVOL\0\0\0\x01";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("payload holds {got} values, header implies {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value at payload index {0}")]
    NonFinite(usize),
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("subject {subject:?} has label {label}, expected 0 or 1")]
    BadLabel { subject: String, label: i64 },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file. Creates missing parent directories.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().ok_or_else(|| DataError::Format(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        DataError::Io { path: path.to_path_buf(), source: e }
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// Serializes `value` as pretty JSON with a trailing newline and writes it
/// atomically.
pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DataError::Format(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// CVOL

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Ts4d,
    Vol3d,
    Multichannel,
    Atlas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CvolHeader {
    kind: VolumeKind,
    dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    voxel_size_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tr_s: Option<f64>,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atlas_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root_seed: Option<u64>,
}

/// Any value a CVOL file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume<T = f32> {
    TimeSeries(TimeSeriesVolume<T>),
    Volume(Volume3D<T>),
    MultiChannel(MultiChannelVolume<T>),
    Atlas(Atlas),
}

impl<T: Real> AnyVolume<T> {
    pub fn kind(&self) -> VolumeKind {
        match self {
            AnyVolume::TimeSeries(_) => VolumeKind::Ts4d,
            AnyVolume::Volume(_) => VolumeKind::Vol3d,
            AnyVolume::MultiChannel(_) => VolumeKind::Multichannel,
            AnyVolume::Atlas(_) => VolumeKind::Atlas,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        match self {
            AnyVolume::TimeSeries(v) => v.meta(),
            AnyVolume::Volume(v) => v.meta(),
            AnyVolume::MultiChannel(v) => v.meta(),
            AnyVolume::Atlas(v) => v.meta(),
        }
    }
}

/// Optional header fields carried alongside the volume.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VolumeExtras {
    pub atlas_id: Option<String>,
    pub channel_labels: Option<Vec<String>>,
    pub root_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvolFile<T = f32> {
    pub volume: AnyVolume<T>,
    pub extras: VolumeExtras,
}

pub fn encode_volume<T: Real>(volume: &AnyVolume<T>, extras: &VolumeExtras) -> Result<Vec<u8>> {
    let meta = volume.meta();
    let mut header = CvolHeader {
        kind: volume.kind(),
        dims: meta.dims,
        frames: None,
        channels: None,
        voxel_size_mm: meta.voxel_size_mm,
        tr_s: None,
        dtype: T::DTYPE.to_string(),
        roi_count: None,
        atlas_id: extras.atlas_id.clone(),
        channel_labels: extras.channel_labels.clone(),
        root_seed: extras.root_seed,
    };
    let mut payload = Vec::new();
    match volume {
        AnyVolume::TimeSeries(v) => {
            header.frames = Some(v.frames());
            header.tr_s = Some(v.tr_s());
            v.data().iter().for_each(|x| x.write_le(&mut payload));
        }
        AnyVolume::Volume(v) => v.data().iter().for_each(|x| x.write_le(&mut payload)),
        AnyVolume::MultiChannel(v) => {
            header.channels = Some(v.channels());
            v.data().iter().for_each(|x| x.write_le(&mut payload));
        }
        AnyVolume::Atlas(a) => {
            header.dtype = "i32le".into();
            header.roi_count = Some(a.roi_count());
            for &l in a.labels() {
                let l = i32::try_from(l).map_err(|_| DataError::Format(format!("label {l} exceeds i32")))?;
                payload.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
    let json = serde_json::to_vec(&header).map_err(|e| DataError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(&CVOL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn decode_reals(payload: &[u8], dtype: &str, expected: usize) -> Result<Vec<f64>> {
    let width = match dtype {
        "f32le" => 4,
        "f64le" => 8,
        "i32le" => 4,
        d => return Err(DataError::Format(format!("unsupported dtype {d:?}"))),
    };
    if payload.len() % width != 0 || payload.len() / width != expected {
        return Err(DataError::Dimension { expected, got: payload.len() / width });
    }
    Ok(payload
        .chunks_exact(width)
        .map(|c| match dtype {
            "f32le" => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            "f64le" => f64::from_le_bytes(c.try_into().unwrap()),
            _ => i32::from_le_bytes(c.try_into().unwrap()) as f64,
        })
        .collect())
}

fn to_real<T: Real>(values: Vec<f64>) -> Result<Vec<T>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite(i));
    }
    Ok(values.into_iter().map(T::from_f64).collect())
}

pub fn decode_volume<T: Real>(bytes: &[u8]) -> Result<CvolFile<T>> {
    if bytes.len() < 16 || bytes[..8] != CVOL_MAGIC {
        return Err(DataError::Format("bad CVOL magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(DataError::Format(format!("header length {hlen} exceeds file size")));
    }
    let header: CvolHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| DataError::Format(format!("bad CVOL header: {e}")))?;
    let payload = &body[hlen..];
    let mut meta = GridMeta::new(header.dims, header.voxel_size_mm)?;
    let n = meta.voxel_count();
    let extras = VolumeExtras {
        atlas_id: header.atlas_id.clone(),
        channel_labels: header.channel_labels.clone(),
        root_seed: header.root_seed,
    };
    let volume = match header.kind {
        VolumeKind::Ts4d => {
            let frames = header.frames.ok_or_else(|| DataError::Format("ts4d header needs frames".into()))?;
            let tr = header.tr_s.ok_or_else(|| DataError::Format("ts4d header needs tr_s".into()))?;
            meta = meta.with_tr(tr)?;
            let data = to_real(decode_reals(payload, &header.dtype, n * frames)?)?;
            AnyVolume::TimeSeries(TimeSeriesVolume::new(meta, frames, data)?)
        }
        VolumeKind::Vol3d => AnyVolume::Volume(Volume3D::new(meta, to_real(decode_reals(payload, &header.dtype, n)?)?)?),
        VolumeKind::Multichannel => {
            let c = header.channels.ok_or_else(|| DataError::Format("multichannel header needs channels".into()))?;
            let data = to_real(decode_reals(payload, &header.dtype, n * c)?)?;
            AnyVolume::MultiChannel(MultiChannelVolume::new(meta, c, data)?)
        }
        VolumeKind::Atlas => {
            let raw = decode_reals(payload, &header.dtype, n)?;
            let mut labels = Vec::with_capacity(n);
            for (i, v) in raw.into_iter().enumerate() {
                if !v.is_finite() || v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                    return Err(DataError::Format(format!("atlas label {v} at index {i} is not a non-negative integer")));
                }
                labels.push(v as u32);
            }
            let atlas = match header.roi_count {
                Some(r) => Atlas::with_roi_count(meta, labels, r)?,
                None => Atlas::new(meta, labels)?,
            };
            AnyVolume::Atlas(atlas)
        }
    };
    Ok(CvolFile { volume, extras })
}

pub fn write_volume<T: Real>(volume: &AnyVolume<T>, extras: &VolumeExtras, path: &Path) -> Result<()> {
    atomic_write(path, &encode_volume(volume, extras)?)
}

pub fn read_volume<T: Real>(path: &Path) -> Result<CvolFile<T>> {
    decode_volume(&read_bytes(path)?)
}

fn wrong_kind(path: &Path, want: &str, got: VolumeKind) -> DataError {
    DataError::Format(format!("{}: expected a {want} volume, found {got:?}", path.display()))
}

pub fn read_timeseries<T: Real>(path: &Path) -> Result<TimeSeriesVolume<T>> {
    match read_volume(path)?.volume {
        AnyVolume::TimeSeries(v) => Ok(v),
        other => Err(wrong_kind(path, "ts4d", other.kind())),
    }
}

pub fn read_atlas(path: &Path) -> Result<Atlas> {
    match read_volume::<f32>(path)?.volume {
        AnyVolume::Atlas(v) => Ok(v),
        other => Err(wrong_kind(path, "atlas", other.kind())),
    }
}

pub fn read_multichannel<T: Real>(path: &Path) -> Result<(MultiChannelVolume<T>, VolumeExtras)> {
    let f = read_volume(path)?;
    match f.volume {
        AnyVolume::MultiChannel(v) => Ok((v, f.extras)),
        other => Err(wrong_kind(path, "multichannel", other.kind())),
    }
}

pub fn read_vol3d<T: Real>(path: &Path) -> Result<(Volume3D<T>, VolumeExtras)> {
    let f = read_volume(path)?;
    match f.volume {
        AnyVolume::Volume(v) => Ok((v, f.extras)),
        other => Err(wrong_kind(path, "vol3d", other.kind())),
    }
}

// ---------------------------------------------------------------------------
// manifests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    /// 0 = control, 1 = case.
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeseries_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint_path: Option<String>,
    /// ROI-to-ROI matrix JSON, used by the linear and FCN baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_params_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

impl ManifestEntry {
    pub fn new(subject_id: impl Into<String>, label: u8) -> Self {
        ManifestEntry {
            subject_id: subject_id.into(),
            label,
            timeseries_path: None,
            fingerprint_path: None,
            matrix_path: None,
            motion_params_path: None,
            site: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against; set by `read_manifest`.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { entries, base_dir: None }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.subject_id.as_str()) {
                return Err(DataError::DuplicateSubject(e.subject_id.clone()));
            }
            if e.label > 1 {
                return Err(DataError::BadLabel { subject: e.subject_id.clone(), label: e.label as i64 });
            }
        }
        Ok(())
    }

    /// Training manifests need at least one subject of each class.
    pub fn require_both_classes(&self) -> Result<()> {
        for class in 0..=1u8 {
            if !self.entries.iter().any(|e| e.label == class) {
                return Err(DataError::Format(format!("manifest has no subject with label {class}")));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let value: serde_json::Value = read_json(path)?;
    // labels outside u8 range would otherwise surface as a generic parse error
    if let Some(entries) = value.get("entries").and_then(|e| e.as_array()) {
        for e in entries {
            if let Some(l) = e.get("label").and_then(|l| l.as_i64()) {
                if !(0..=1).contains(&l) {
                    let subject = e.get("subject_id").and_then(|s| s.as_str()).unwrap_or("?").to_string();
                    return Err(DataError::BadLabel { subject, label: l });
                }
            }
        }
    }
    let mut m: DatasetManifest =
        serde_json::from_value(value).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    m.validate()?;
    m.base_dir = path.parent().map(Path::to_path_buf);
    Ok(m)
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.validate()?;
    write_json(m, path)
}

// ---------------------------------------------------------------------------
// motion parameters

pub fn parse_motion(text: &str) -> Result<MotionTrace> {
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| DataError::Format(format!("motion line {}: {e}", lineno + 1)))?;
        let row: [f64; 6] = vals
            .try_into()
            .map_err(|v: Vec<f64>| DataError::Format(format!("motion line {} has {} columns, expected 6", lineno + 1, v.len())))?;
        frames.push(row);
    }
    MotionTrace::new(frames).map_err(|e: PreprocessError| DataError::Format(e.to_string()))
}

pub fn format_motion(m: &MotionTrace) -> String {
    let mut s = String::new();
    for row in m.frames() {
        let cols: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cols.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_motion(path: &Path) -> Result<MotionTrace> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    parse_motion(&text)
}

pub fn write_motion(m: &MotionTrace, path: &Path) -> Result<()> {
    atomic_write(path, format_motion(m).as_bytes())
}

// ---------------------------------------------------------------------------
// checkpoints

/// Model structure recorded in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Network { input_shape: Vec<usize>, layers: Vec<LayerSpec>, has_velocity: bool },
    /// Linear decision function over z-scored features.
    Linear { dim: usize },
}

impl Architecture {
    /// Names and lengths of the tensors the blob must contain, in order.
    pub fn expected_tensors(&self) -> Vec<(String, usize)> {
        match self {
            Architecture::Network { layers, has_velocity, .. } => {
                let mut v = Vec::new();
                for (i, spec) in layers.iter().enumerate() {
                    let (w, b) = match *spec {
                        LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => (in_ch * out_ch * kernel.pow(3), out_ch),
                        LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, out_dim),
                        _ => continue,
                    };
                    v.push((format!("layer{i}.weight"), w));
                    v.push((format!("layer{i}.bias"), b));
                }
                if *has_velocity {
                    let vel: Vec<_> = v.iter().map(|(n, l)| (format!("velocity.{n}"), *l)).collect();
                    v.extend(vel);
                }
                v
            }
            Architecture::Linear { dim } => vec![
                ("weight".into(), *dim),
                ("bias".into(), 1),
                ("feature_mean".into(), *dim),
                ("feature_scale".into(), *dim),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub epochs_completed: usize,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub family: String,
    pub atlas_id: String,
    pub architecture: Architecture,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingState>,
    /// Full model configuration as given.
    #[serde(default)]
    pub config: serde_json::Value,
    /// File name of the parameter blob, next to the metadata file.
    pub blob: String,
}

/// Metadata plus parameter tensors. Values are held as `f64` and written in
/// the declared `dtype`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        let expected = self.meta.architecture.expected_tensors();
        if expected.len() != self.meta.tensors.len() || expected.len() != self.tensors.len() {
            return Err(DataError::ArchitectureMismatch(format!(
                "architecture needs {} tensors, checkpoint lists {} and holds {}",
                expected.len(),
                self.meta.tensors.len(),
                self.tensors.len()
            )));
        }
        for ((name, len), (entry, data)) in expected.iter().zip(self.meta.tensors.iter().zip(&self.tensors)) {
            if *name != entry.name || *len != entry.len || *len != data.len() {
                return Err(DataError::ArchitectureMismatch(format!(
                    "tensor {:?}: architecture needs {name:?} of length {len}, found length {} (data {})",
                    entry.name,
                    entry.len,
                    data.len()
                )));
            }
        }
        Ok(())
    }

    fn encode_blob(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for t in &self.tensors {
            match self.meta.dtype.as_str() {
                "f32le" => t.iter().for_each(|&v| (v as f32).write_le(&mut out)),
                "f64le" => t.iter().for_each(|&v| v.write_le(&mut out)),
                d => return Err(DataError::Format(format!("unsupported checkpoint dtype {d:?}"))),
            }
        }
        Ok(out)
    }
}

/// Writes `<path>` (JSON metadata) and `<path stem>.bin` beside it; the
/// metadata records the blob file name.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    c.validate()?;
    let blob_path = path.with_extension("bin");
    let mut meta = c.meta.clone();
    meta.blob = blob_path.file_name().expect("path has a file name").to_string_lossy().into_owned();
    atomic_write(&blob_path, &c.encode_blob()?)?;
    write_json(&meta, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let meta: CheckpointMeta = read_json(path)?;
    let blob = read_bytes(&path.with_file_name(&meta.blob))?;
    let width = match meta.dtype.as_str() {
        "f32le" => 4,
        "f64le" => 8,
        d => return Err(DataError::Format(format!("unsupported checkpoint dtype {d:?}"))),
    };
    let total: usize = meta.tensors.iter().map(|t| t.len).sum();
    if blob.len() != total * width {
        return Err(DataError::ArchitectureMismatch(format!(
            "blob has {} bytes, tensor list implies {}",
            blob.len(),
            total * width
        )));
    }
    let values = decode_reals(&blob, &meta.dtype, total)?;
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    let mut at = 0;
    for t in &meta.tensors {
        tensors.push(values[at..at + t.len].to_vec());
        at += t.len;
    }
    let c = Checkpoint { meta, tensors };
    c.validate()?;
    Ok(c)
}

//! Motion quality control and signal cleaning.
//!
//! Order used for raw inputs: scrub → band-pass → global signal regression →
//! ROI extraction / fingerprints. The band-pass runs on the concatenated
//! post-scrub frames.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{check_grid_compat, Atlas, Mask, TimeSeriesVolume, VolumeError};
use crate::Real;

/// Radius (mm) of the sphere used to turn rotations into arc length.
pub const HEAD_RADIUS_MM: f64 = 50.0;
pub const DEFAULT_FD_THRESHOLD_MM: f64 = 0.5;
pub const MIN_RETAINED_FRAMES: usize = 100;
pub const MIN_RETAINED_SECONDS: f64 = 240.0;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("bad band: {0}")]
    BadBand(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("ROI {0} has no voxels")]
    EmptyRoi(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid motion trace: {0}")]
    Motion(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Per-frame rigid-body parameters: `[dx, dy, dz]` in mm, `[rx, ry, rz]` in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrace {
    frames: Vec<[f64; 6]>,
}

impl MotionTrace {
    pub fn new(frames: Vec<[f64; 6]>) -> Result<Self> {
        if frames.is_empty() {
            return Err(PreprocessError::Motion("no frames".into()));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PreprocessError::Motion("non-finite motion parameter".into()));
        }
        Ok(MotionTrace { frames })
    }

    pub fn zeros(frames: usize) -> Self {
        MotionTrace { frames: vec![[0.0; 6]; frames.max(1)] }
    }

    pub fn frames(&self) -> &[[f64; 6]] {
        &self.frames
    }
    pub fn len(&self) -> usize {
        self.frames.len()
    }
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrubResult {
    pub kept_indices: Vec<usize>,
    pub removed_indices: Vec<usize>,
    pub fd: Vec<f64>,
}

/// Sum of absolute backward differences of the six parameters, rotations
/// converted to arc length on a 50 mm sphere. `fd[0] = 0`.
pub fn framewise_displacement(motion: &MotionTrace) -> Vec<f64> {
    let f = motion.frames();
    let mut fd = vec![0.0; f.len()];
    for t in 1..f.len() {
        let trans: f64 = (0..3).map(|i| (f[t][i] - f[t - 1][i]).abs()).sum();
        let rot: f64 = (3..6).map(|i| (f[t][i] - f[t - 1][i]).abs()).sum();
        fd[t] = trans + HEAD_RADIUS_MM * rot;
    }
    fd
}

/// Removes every frame with `fd > threshold` together with one frame before
/// and two after, clamped to the series.
pub fn scrub(fd: &[f64], threshold_mm: f64) -> ScrubResult {
    let n = fd.len();
    let mut removed = vec![false; n];
    for (t, &v) in fd.iter().enumerate() {
        if v > threshold_mm {
            let lo = t.saturating_sub(1);
            let hi = (t + 2).min(n.saturating_sub(1));
            removed[lo..=hi].iter_mut().for_each(|r| *r = true);
        }
    }
    let (removed_indices, kept_indices): (Vec<usize>, Vec<usize>) = (0..n).partition(|&t| removed[t]);
    ScrubResult { kept_indices, removed_indices, fd: fd.to_vec() }
}

/// True iff at least 100 frames or at least 4 minutes of data remain.
pub fn qc_retention(kept_count: usize, tr_s: f64) -> bool {
    kept_count >= MIN_RETAINED_FRAMES || kept_count as f64 * tr_s >= MIN_RETAINED_SECONDS
}

/// Ideal DFT-domain band-pass: bins with frequency below `lo_hz` or above
/// `hi_hz` are zeroed.
pub fn bandpass(series: &[f64], tr_s: f64, lo_hz: f64, hi_hz: f64) -> Result<Vec<f64>> {
    let mut planner = FftPlanner::new();
    let mut out = series.to_vec();
    Bandpass::new(&mut planner, series.len(), tr_s, lo_hz, hi_hz)?.apply(&mut out);
    Ok(out)
}

/// A band-pass filter planned for one series length.
pub struct Bandpass {
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    keep: Vec<bool>,
    buffer: Vec<Complex<f64>>,
}

impl Bandpass {
    pub fn new(planner: &mut FftPlanner<f64>, len: usize, tr_s: f64, lo_hz: f64, hi_hz: f64) -> Result<Self> {
        if len < 2 {
            return Err(PreprocessError::BadBand(format!("band-pass needs at least 2 frames, got {len}")));
        }
        if !(tr_s > 0.0) {
            return Err(PreprocessError::BadBand(format!("tr_s must be > 0, got {tr_s}")));
        }
        if !(lo_hz >= 0.0 && lo_hz < hi_hz) {
            return Err(PreprocessError::BadBand(format!("need 0 <= lo < hi, got [{lo_hz}, {hi_hz}]")));
        }
        let nyquist = 1.0 / (2.0 * tr_s);
        if hi_hz > nyquist {
            return Err(PreprocessError::BadBand(format!(
                "upper edge {hi_hz} Hz exceeds the Nyquist frequency {nyquist} Hz for TR {tr_s} s"
            )));
        }
        let df = 1.0 / (len as f64 * tr_s);
        let keep = (0..len)
            .map(|k| {
                let f = k.min(len - k) as f64 * df;
                f >= lo_hz && f <= hi_hz
            })
            .collect();
        Ok(Bandpass {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            keep,
            buffer: vec![Complex::new(0.0, 0.0); len],
        })
    }

    pub fn apply(&mut self, series: &mut [f64]) {
        let n = self.keep.len();
        assert_eq!(series.len(), n, "series length differs from the planned length");
        for (b, &v) in self.buffer.iter_mut().zip(series.iter()) {
            *b = Complex::new(v, 0.0);
        }
        self.forward.process(&mut self.buffer);
        for (b, &k) in self.buffer.iter_mut().zip(&self.keep) {
            if !k {
                *b = Complex::new(0.0, 0.0);
            }
        }
        self.inverse.process(&mut self.buffer);
        let scale = 1.0 / n as f64;
        for (s, b) in series.iter_mut().zip(&self.buffer) {
            *s = b.re * scale;
        }
    }
}

/// Band-pass every voxel series of a volume.
pub fn bandpass_volume<T: Real>(ts: &TimeSeriesVolume<T>, lo_hz: f64, hi_hz: f64) -> Result<TimeSeriesVolume<T>> {
    let mut planner = FftPlanner::new();
    let mut filter = Bandpass::new(&mut planner, ts.frames(), ts.tr_s(), lo_hz, hi_hz)?;
    let n = ts.meta().voxel_count();
    let mut data = vec![T::zero(); ts.data().len()];
    for v in 0..n {
        let mut s = ts.voxel_series(v);
        filter.apply(&mut s);
        for (t, val) in s.into_iter().enumerate() {
            data[t * n + v] = T::from_f64(val);
        }
    }
    Ok(TimeSeriesVolume::new(ts.meta().clone(), ts.frames(), data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsrOutput<T> {
    pub volume: TimeSeriesVolume<T>,
    /// Set when the global signal had zero variance and only the intercept
    /// was removed.
    pub degenerate: bool,
}

/// Regresses every in-mask voxel on `{1, g}` where `g` is the in-mask mean
/// series; out-of-mask voxels are zeroed.
pub fn global_signal_regress<T: Real>(ts: &TimeSeriesVolume<T>, mask: &Mask) -> Result<GsrOutput<T>> {
    check_grid_compat(ts.meta(), mask.meta())?;
    let n = ts.meta().voxel_count();
    let frames = ts.frames();
    let members = mask.indices();
    let mut g = vec![0.0; frames];
    for (t, gt) in g.iter_mut().enumerate() {
        let frame = ts.frame(t);
        *gt = members.iter().map(|&v| frame[v].as_f64()).sum::<f64>() / members.len() as f64;
    }
    let g_mean = g.iter().sum::<f64>() / frames as f64;
    let gc: Vec<f64> = g.iter().map(|v| v - g_mean).collect();
    let g_var: f64 = gc.iter().map(|v| v * v).sum();
    let g_max = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = g_var <= (1e-12 * g_max).powi(2) * frames as f64 || g_var == 0.0;

    let mut data = vec![T::zero(); n * frames];
    for &v in &members {
        let s = ts.voxel_series(v);
        let mean = s.iter().sum::<f64>() / frames as f64;
        let beta = if degenerate {
            0.0
        } else {
            s.iter().zip(&gc).map(|(x, gcv)| (x - mean) * gcv).sum::<f64>() / g_var
        };
        for t in 0..frames {
            data[t * n + v] = T::from_f64(s[t] - mean - beta * gc[t]);
        }
    }
    if degenerate {
        log::warn!("global signal has zero variance; removed intercept only");
    }
    Ok(GsrOutput { volume: TimeSeriesVolume::new(ts.meta().clone(), frames, data)?, degenerate })
}

/// T×R matrix of ROI-mean series, stored row-major (one row per frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTimeSeries {
    pub frames: usize,
    pub rois: usize,
    pub data: Vec<f64>,
}

impl RoiTimeSeries {
    pub fn new(frames: usize, rois: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * rois {
            return Err(PreprocessError::LengthMismatch(format!(
                "{frames}x{rois} matrix needs {} values, got {}",
                frames * rois,
                data.len()
            )));
        }
        Ok(RoiTimeSeries { frames, rois, data })
    }

    pub fn get(&self, t: usize, r: usize) -> f64 {
        self.data[t * self.rois + r]
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.get(t, r)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&t| self.data[t * self.rois..(t + 1) * self.rois].iter().copied()).collect();
        RoiTimeSeries { frames: rows.len(), rois: self.rois, data }
    }
}

/// Column `r` is the per-frame mean of the voxels labeled `r + 1`.
pub fn roi_timeseries<T: Real>(ts: &TimeSeriesVolume<T>, atlas: &Atlas) -> Result<RoiTimeSeries> {
    check_grid_compat(ts.meta(), atlas.meta())?;
    let members = atlas.roi_members();
    if let Some(r) = members.iter().position(Vec::is_empty) {
        return Err(PreprocessError::EmptyRoi(r + 1));
    }
    let rois = members.len();
    let mut data = Vec::with_capacity(ts.frames() * rois);
    for t in 0..ts.frames() {
        let frame = ts.frame(t);
        for m in &members {
            data.push(m.iter().map(|&v| frame[v].as_f64()).sum::<f64>() / m.len() as f64);
        }
    }
    RoiTimeSeries::new(ts.frames(), rois, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub fd_threshold_mm: f64,
    /// `None` skips the band-pass step.
    pub bandpass: Option<Band>,
    pub global_signal_regression: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            fd_threshold_mm: DEFAULT_FD_THRESHOLD_MM,
            bandpass: Some(Band { lo_hz: 0.01, hi_hz: 0.1 }),
            global_signal_regression: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub subject_id: String,
    pub frames_before: usize,
    pub frames_after: usize,
    pub fd_max: f64,
    pub retained: bool,
}

pub struct CleanedSubject<T> {
    pub volume: Option<TimeSeriesVolume<T>>,
    pub qc: QcReport,
    pub scrub: ScrubResult,
    pub gsr_degenerate: bool,
}

/// Runs scrub → QC gate → band-pass → GSR for one subject. Subjects failing
/// the retention rule come back with `volume: None`.
pub fn clean_subject<T: Real>(
    subject_id: &str,
    ts: &TimeSeriesVolume<T>,
    motion: &MotionTrace,
    mask: &Mask,
    cfg: &PreprocessConfig,
) -> Result<CleanedSubject<T>> {
    if motion.len() != ts.frames() {
        return Err(PreprocessError::LengthMismatch(format!(
            "motion trace has {} frames, time series has {}",
            motion.len(),
            ts.frames()
        )));
    }
    let fd = framewise_displacement(motion);
    let scrubbed = scrub(&fd, cfg.fd_threshold_mm);
    let kept = scrubbed.kept_indices.len();
    let retained = qc_retention(kept, ts.tr_s());
    let qc = QcReport {
        subject_id: subject_id.to_string(),
        frames_before: ts.frames(),
        frames_after: kept,
        fd_max: fd.iter().copied().fold(0.0, f64::max),
        retained,
    };
    if !retained {
        return Ok(CleanedSubject { volume: None, qc, scrub: scrubbed, gsr_degenerate: false });
    }
    let mut vol = ts.select_frames(&scrubbed.kept_indices)?;
    if let Some(band) = &cfg.bandpass {
        vol = bandpass_volume(&vol, band.lo_hz, band.hi_hz)?;
    }
    let mut gsr_degenerate = false;
    if cfg.global_signal_regression {
        let out = global_signal_regress(&vol, mask)?;
        gsr_degenerate = out.degenerate;
        vol = out.volume;
    }
    Ok(CleanedSubject { volume: Some(vol), qc, scrub: scrubbed, gsr_degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridMeta;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    /// Interval-union oracle for the scrubbing rule.
    fn scrub_oracle(fd: &[f64], thr: f64) -> Vec<usize> {
        let n = fd.len() as isize;
        let mut set = std::collections::BTreeSet::new();
        for (t, &v) in fd.iter().enumerate() {
            if v > thr {
                for d in -1isize..=2 {
                    let u = t as isize + d;
                    if u >= 0 && u < n {
                        set.insert(u as usize);
                    }
                }
            }
        }
        set.into_iter().collect()
    }

    /// Naive O(n²) DFT used to check the filter independently of the FFT.
    fn naive_dft_filter(x: &[f64], tr: f64, lo: f64, hi: f64) -> Vec<f64> {
        let n = x.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re[k] += v * a.cos();
                im[k] += v * a.sin();
            }
            let f = k.min(n - k) as f64 / (n as f64 * tr);
            if f < lo || f > hi {
                re[k] = 0.0;
                im[k] = 0.0;
            }
        }
        (0..n)
            .map(|t| {
                (0..n)
                    .map(|k| {
                        let a = 2.0 * PI * (k * t) as f64 / n as f64;
                        re[k] * a.cos() - im[k] * a.sin()
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect()
    }

    fn motion_with(frames: usize, t: usize, axis: usize, value: f64) -> MotionTrace {
        let mut f = vec![[0.0; 6]; frames];
        for row in f.iter_mut().skip(t) {
            row[axis] = value;
        }
        MotionTrace::new(f).unwrap()
    }

    #[test]
    fn fd_examples() {
        assert!(framewise_displacement(&MotionTrace::zeros(5)).iter().all(|&v| v == 0.0));
        let fd = framewise_displacement(&motion_with(3, 1, 0, 0.2));
        assert_eq!(fd, vec![0.0, 0.2, 0.0]);
        let fd = framewise_displacement(&motion_with(3, 1, 3, 0.01));
        assert!((fd[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scrub_removes_guard_window() {
        let r = scrub(&[0.0, 0.0, 0.6, 0.0, 0.0, 0.0], 0.5);
        assert_eq!(r.removed_indices, vec![1, 2, 3, 4]);
        assert_eq!(r.kept_indices, vec![0, 5]);
        let r = scrub(&[0.0, 0.1, 0.2], 0.5);
        assert_eq!(r.kept_indices, vec![0, 1, 2]);
        let r = scrub(&[0.7, 0.0, 0.0, 0.0, 0.0], 0.5);
        assert_eq!(r.removed_indices, vec![0, 1, 2]);
        // exactly at threshold is not "exceeding"
        let r = scrub(&[0.0, 0.5, 0.0], 0.5);
        assert!(r.removed_indices.is_empty());
        // offenders at the end are clamped
        let r = scrub(&[0.0, 0.0, 0.0, 0.9], 0.5);
        assert_eq!(r.removed_indices, vec![2, 3]);
    }

    #[test]
    fn retention_rule() {
        assert!(qc_retention(120, 2.0));
        assert!(qc_retention(90, 3.0));
        assert!(!qc_retention(50, 2.0));
        assert!(!qc_retention(40, 2.0));
        assert!(qc_retention(100, 0.5));
    }

    #[test]
    fn bandpass_removes_dc() {
        let y = bandpass(&[3.0; 64], 2.0, 0.01, 0.1).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bandpass_keeps_in_band_bin_and_kills_out_of_band_bin() {
        let n = 100;
        let tr = 2.0;
        // bin k has frequency k / (n tr) = k * 0.005 Hz
        let sine = |k: usize| -> Vec<f64> { (0..n).map(|t| (2.0 * PI * (k * t) as f64 / n as f64).sin()).collect() };
        let inband = sine(10); // 0.05 Hz
        let y = bandpass(&inband, tr, 0.01, 0.1).unwrap();
        let norm = inband.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = inband.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / norm < 1e-5);
        let high = sine(30); // 0.15 Hz
        let y = bandpass(&high, tr, 0.01, 0.1).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn bandpass_matches_naive_dft() {
        let mut rng = seed::rng(12);
        let x: Vec<f64> = (0..57).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = bandpass(&x, 1.5, 0.02, 0.2).unwrap();
        let slow = naive_dft_filter(&x, 1.5, 0.02, 0.2);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn bandpass_rejects_band_above_nyquist() {
        // the literal 0.01-10 Hz band is impossible at TR = 2 s
        assert!(matches!(bandpass(&[0.0; 16], 2.0, 0.01, 10.0), Err(PreprocessError::BadBand(_))));
        assert!(matches!(bandpass(&[0.0; 16], 2.0, 0.1, 0.05), Err(PreprocessError::BadBand(_))));
        assert!(matches!(bandpass(&[0.0], 2.0, 0.01, 0.1), Err(PreprocessError::BadBand(_))));
    }

    fn ts_from_series(meta: GridMeta, series: &[Vec<f64>]) -> TimeSeriesVolume<f64> {
        let n = meta.voxel_count();
        let frames = series[0].len();
        let mut data = vec![0.0; n * frames];
        for (v, s) in series.iter().enumerate() {
            for (t, &x) in s.iter().enumerate() {
                data[t * n + v] = x;
            }
        }
        TimeSeriesVolume::new(meta.with_tr(2.0).unwrap(), frames, data).unwrap()
    }

    #[test]
    fn gsr_identical_voxels_give_zero_residuals() {
        let meta = GridMeta::new([2, 2, 1], [3.0; 3]).unwrap();
        let s = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let ts = ts_from_series(meta.clone(), &vec![s; 4]);
        let mask = Mask::new(meta, vec![true; 4]).unwrap();
        let out = global_signal_regress(&ts, &mask).unwrap();
        assert!(!out.degenerate);
        assert!(out.volume.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gsr_leaves_orthogonal_series_and_zeroes_outside_mask() {
        let meta = GridMeta::new([3, 1, 1], [3.0; 3]).unwrap();
        // voxel 0 and 1 average to g = [1,-1,1,-1]; voxel 2 is outside the mask
        // b2 is zero-mean and orthogonal to g; a2 is chosen so the pair averages to g
        let twice_g = [2.0, -2.0, 2.0, -2.0];
        let junk = vec![7.0, 8.0, 9.0, 10.0];
        let b2: Vec<f64> = vec![1.0, 1.0, -1.0, -1.0];
        let a2: Vec<f64> = twice_g.iter().zip(&b2).map(|(x, y)| x - y).collect();
        let ts = ts_from_series(meta.clone(), &[a2, b2.clone(), junk]);
        let mask = Mask::new(meta, vec![true, true, false]).unwrap();
        let out = global_signal_regress(&ts, &mask).unwrap();
        let res_b = out.volume.voxel_series(1);
        for (x, y) in res_b.iter().zip(&b2) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(out.volume.voxel_series(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gsr_flags_constant_global_signal() {
        let meta = GridMeta::new([2, 1, 1], [3.0; 3]).unwrap();
        let ts = ts_from_series(meta.clone(), &[vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]]);
        let mask = Mask::new(meta, vec![true, true]).unwrap();
        let out = global_signal_regress(&ts, &mask).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.volume.voxel_series(0), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn gsr_residual_mean_vanishes() {
        let meta = GridMeta::cube(3, 3.0);
        let mut rng = seed::rng(77);
        let series: Vec<Vec<f64>> = (0..27).map(|_| (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ts = ts_from_series(meta.clone(), &series);
        let included: Vec<bool> = (0..27).map(|i| i % 4 != 0).collect();
        let mask = Mask::new(meta, included).unwrap();
        let out = global_signal_regress(&ts, &mask).unwrap();
        let members = mask.indices();
        for t in 0..30 {
            let m: f64 = members.iter().map(|&v| out.volume.value(v, t)).sum::<f64>() / members.len() as f64;
            assert!(m.abs() <= 1e-5);
        }
    }

    #[test]
    fn roi_means() {
        let meta = GridMeta::new([3, 1, 1], [3.0; 3]).unwrap();
        let ts = ts_from_series(meta.clone(), &[vec![1.0, 2.0], vec![3.0, 4.0], vec![9.0, -9.0]]);
        let atlas = Atlas::new(meta, vec![1, 1, 2]).unwrap();
        let roi = roi_timeseries(&ts, &atlas).unwrap();
        assert_eq!(roi.column(0), vec![2.0, 3.0]);
        assert_eq!(roi.column(1), vec![9.0, -9.0]);
    }

    #[test]
    fn roi_means_match_brute_force() {
        let meta = GridMeta::cube(6, 3.0);
        let mut rng = seed::rng(5);
        let series: Vec<Vec<f64>> = (0..216).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ts = ts_from_series(meta.clone(), &series);
        let labels: Vec<u32> = (0..216).map(|i| (i % 4) as u32).collect();
        let atlas = Atlas::new(meta, labels.clone()).unwrap();
        let roi = roi_timeseries(&ts, &atlas).unwrap();
        for r in 0..3 {
            for t in 0..8 {
                let mut sum = 0.0;
                let mut count = 0;
                for v in 0..216 {
                    if labels[v] == r as u32 + 1 {
                        sum += series[v][t];
                        count += 1;
                    }
                }
                assert!((roi.get(t, r) - sum / count as f64).abs() < 1e-12);
            }
        }
        assert!(roi_timeseries(&ts, &Atlas::new(GridMeta::cube(2, 3.0), vec![1, 2, 0, 0, 0, 0, 0, 0]).unwrap()).is_err());
    }

    #[test]
    fn clean_subject_excludes_short_runs() {
        let meta = GridMeta::new([2, 1, 1], [3.0; 3]).unwrap();
        let mut rng = seed::rng(1);
        let series: Vec<Vec<f64>> = (0..2).map(|_| (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ts = ts_from_series(meta.clone(), &series);
        let mask = Mask::new(meta, vec![true, true]).unwrap();
        let out = clean_subject("s1", &ts, &MotionTrace::zeros(40), &mask, &PreprocessConfig::default()).unwrap();
        assert!(!out.qc.retained);
        assert_eq!(out.qc.frames_after, 40);
        assert!(out.volume.is_none());
        assert!(clean_subject("s1", &ts, &MotionTrace::zeros(39), &mask, &PreprocessConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn scrub_matches_interval_union(fd in proptest::collection::vec(0.0f64..1.0, 1..60), thr in 0.05f64..1.0) {
            let r = scrub(&fd, thr);
            prop_assert_eq!(&r.removed_indices, &scrub_oracle(&fd, thr));
            let mut all: Vec<usize> = r.kept_indices.iter().chain(&r.removed_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..fd.len()).collect::<Vec<_>>());
        }

        #[test]
        fn scrub_is_monotone_in_threshold(fd in proptest::collection::vec(0.0f64..1.0, 1..60), a in 0.05f64..1.0, b in 0.05f64..1.0) {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            let kept_hi = scrub(&fd, hi).kept_indices;
            let kept_lo = scrub(&fd, lo).kept_indices;
            prop_assert!(kept_lo.iter().all(|t| kept_hi.contains(t)));
        }

        #[test]
        fn bandpass_is_idempotent_and_linear(
            x in proptest::collection::vec(-1.0f64..1.0, 16..80),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let y: Vec<f64> = x.iter().rev().copied().collect();
            let once = bandpass(&x, 2.0, 0.01, 0.1).unwrap();
            let twice = bandpass(&once, 2.0, 0.01, 0.1).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let fy = bandpass(&y, 2.0, 0.01, 0.1).unwrap();
            let fmix = bandpass(&mix, 2.0, 0.01, 0.1).unwrap();
            for i in 0..x.len() {
                prop_assert!((fmix[i] - (alpha * once[i] + beta * fy[i])).abs() < 1e-6);
            }
        }

        #[test]
        fn roi_extraction_commutes_with_frame_selection(seed_value in 0u64..500, keep_mask in proptest::collection::vec(any::<bool>(), 10)) {
            let rows: Vec<usize> = (0..10).filter(|&t| keep_mask[t]).collect();
            prop_assume!(!rows.is_empty());
            let meta = GridMeta::cube(3, 3.0);
            let mut rng = seed::rng(seed_value);
            let series: Vec<Vec<f64>> = (0..27).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ts = ts_from_series(meta.clone(), &series);
            let labels: Vec<u32> = (0..27).map(|i| (i % 3) as u32).collect();
            let atlas = Atlas::new(meta, labels).unwrap();
            let a = roi_timeseries(&ts, &atlas).unwrap().select_rows(&rows);
            let b = roi_timeseries(&ts.select_frames(&rows).unwrap(), &atlas).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

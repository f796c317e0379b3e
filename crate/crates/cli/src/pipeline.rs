//! Stage implementations. Every stage reads its inputs from the previous
//! stage's directory under the output root and writes atomically.
//!
//! Layout under `<out>`:
//!
//! ```text
//! synth/                      spec.json, atlases/, subjects/, manifest.json
//! preprocess/                 <id>_clean.cvol, <id>_qc.json, qc_table.json, manifest.json
//! fingerprint/<atlas>/        atlas.cvol, <id>_fp.cvol, <id>_matrix.json, manifest.json
//! cv/<family>/<atlas>/        report.json, report_roc.csv, search.json
//! train/<family>/<atlas>/     model.json, model.bin, history.csv
//! test/<family>/<atlas>/      report.json, report_roc.csv
//! ensemble/<stage>/<family>/  report.json, report_roc.csv
//! saliency/<atlas>/           group.cvol, group.json, group_top.csv, subjects/
//! verify/                     report.json
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use connectome_core::connectivity::{subject_connectivity, ConnectivityMatrix};
use connectome_core::dataio::{
    self, read_json, read_manifest, write_json, AnyVolume, Checkpoint, DatasetManifest, ManifestEntry, VolumeExtras,
};
use connectome_core::evaluation::{self, EvalReport, FoldPlan, Protocol};
use connectome_core::models::{
    build_cnn, build_fcn, evaluate_grid, matrix_to_tensor, volume_to_tensor, Classifier, Family, LinearKind, LinearModel,
    ModelGraph, NetLearner, Penalty, RidgeLearner, SearchResult, SvmLearner, TrainConfig, Trainer,
};
use connectome_core::nn::{Network, Tensor};
use connectome_core::preprocess::{clean_subject, QcReport, ScrubResult};
use connectome_core::saliency::{collapse_channels, group_average, input_gradient, SaliencyMap, SaliencyMeta};
use connectome_core::synthgen::generate_dataset;
use connectome_core::verify::{gradient_suite, oracle_suite, Fault, VerifyReport};
use connectome_core::{seed, Atlas, Mask, Real};

use crate::config::{FoldStrategy, RunConfig};
use crate::error::{CliError, Result};

/// Resolved configuration plus the output root.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn dir(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.out.clone(), |p, s| p.join(s))
    }

    fn extras(&self) -> VolumeExtras {
        VolumeExtras { root_seed: Some(self.cfg.seed), ..Default::default() }
    }

    fn stream(&self, tag: &str) -> u64 {
        seed::derive(self.cfg.seed, tag)
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `.cvol` files in `dir`, sorted by name.
fn list_cvol(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::Validation(format!("cannot list {}: {e}", dir.display())))?;
    let mut v: Vec<PathBuf> =
        rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "cvol")).collect();
    v.sort();
    Ok(v)
}

/// Subdirectory names of `dir`, sorted.
fn list_dirs(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::Validation(format!("cannot list {}: {e}", dir.display())))?;
    let mut v: Vec<String> = rd
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    v.sort();
    Ok(v)
}

/// Atlas and its id (header `atlas_id`, else the file stem).
pub fn load_atlas(path: &Path) -> Result<(String, Atlas)> {
    let f = dataio::read_volume::<f32>(path)?;
    let AnyVolume::Atlas(atlas) = f.volume else {
        return Err(CliError::Validation(format!("{} is not an atlas volume", path.display())));
    };
    let id = f
        .extras
        .atlas_id
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok((id, atlas))
}

fn atlas_paths(ctx: &Ctx, flags: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let v = if !flags.is_empty() {
        flags.to_vec()
    } else if !ctx.cfg.inputs.atlases.is_empty() {
        ctx.cfg.inputs.atlases.clone()
    } else {
        list_cvol(&ctx.dir(&["synth", "atlases"]))?
    };
    if v.is_empty() {
        return Err(CliError::Validation("no atlases given or found".into()));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// synth

pub fn cmd_synth(ctx: &Ctx) -> Result<DatasetManifest> {
    let spec = connectome_core::synthgen::SynthSpec { seed: ctx.stream("synth"), ..ctx.cfg.synth.clone() };
    let m = generate_dataset(&spec, &ctx.dir(&["synth"]))?;
    log::info!("synth: wrote {} subjects", m.entries.len());
    Ok(m)
}

// ---------------------------------------------------------------------------
// preprocess

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectStatus {
    Ok,
    QcFailed,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub subject_id: String,
    pub status: SubjectStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atlas_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc: Option<QcReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct QcFile<'a> {
    qc: &'a QcReport,
    scrub: &'a ScrubResult,
    gsr_degenerate: bool,
    root_seed: u64,
}

fn fail_count(rows: &[TableRow]) -> usize {
    rows.iter().filter(|r| r.status == SubjectStatus::Error).count()
}

fn preprocess_one<T: Real>(ctx: &Ctx, m: &DatasetManifest, e: &ManifestEntry, mask: &Mask, dir: &Path) -> Result<(TableRow, Option<ManifestEntry>)> {
    let ts_path = e.timeseries_path.as_deref().ok_or_else(|| runtime("manifest entry has no timeseries_path"))?;
    let motion_path = e.motion_params_path.as_deref().ok_or_else(|| runtime("manifest entry has no motion_params_path"))?;
    let motion = dataio::read_motion(&m.resolve(motion_path))?;
    let ts = dataio::read_timeseries::<T>(&m.resolve(ts_path))?;
    let cleaned = clean_subject(&e.subject_id, &ts, &motion, mask, &ctx.cfg.preprocess).map_err(runtime)?;
    let qc_file = QcFile { qc: &cleaned.qc, scrub: &cleaned.scrub, gsr_degenerate: cleaned.gsr_degenerate, root_seed: ctx.cfg.seed };
    write_json(&qc_file, &dir.join(format!("{}_qc.json", e.subject_id)))?;
    let row = |status| TableRow { subject_id: e.subject_id.clone(), status, atlas_id: None, qc: Some(cleaned.qc.clone()), error: None };
    match cleaned.volume {
        None => Ok((row(SubjectStatus::QcFailed), None)),
        Some(vol) => {
            let rel = format!("{}_clean.cvol", e.subject_id);
            dataio::write_volume(&AnyVolume::TimeSeries(vol), &ctx.extras(), &dir.join(&rel))?;
            let mut out = ManifestEntry::new(e.subject_id.clone(), e.label);
            out.timeseries_path = Some(rel);
            out.site = e.site.clone();
            Ok((row(SubjectStatus::Ok), Some(out)))
        }
    }
}

/// Scrub, QC gate, band-pass and GSR per subject. The GSR mask is the
/// union of all atlas masks. Subjects failing QC are listed and left out of
/// the output manifest; hard errors are isolated per subject and reported
/// at the end.
pub fn cmd_preprocess<T: Real>(ctx: &Ctx, manifest: Option<&Path>, atlas_flags: &[PathBuf]) -> Result<Vec<TableRow>> {
    let mpath = manifest.map(Path::to_path_buf).or_else(|| ctx.cfg.inputs.manifest.clone()).unwrap_or_else(|| ctx.dir(&["synth", "manifest.json"]));
    let m = read_manifest(&mpath)?;
    let mut mask: Option<Mask> = None;
    for p in atlas_paths(ctx, atlas_flags)? {
        let (_, a) = load_atlas(&p)?;
        let am = a.to_mask();
        mask = Some(match mask {
            None => am,
            Some(prev) => prev.union(&am).map_err(runtime)?,
        });
    }
    let mask = mask.expect("at least one atlas");
    let dir = ctx.dir(&["preprocess"]);
    let results: Vec<(TableRow, Option<ManifestEntry>)> = m
        .entries
        .par_iter()
        .map(|e| {
            preprocess_one::<T>(ctx, &m, e, &mask, &dir).unwrap_or_else(|err| {
                let row = TableRow {
                    subject_id: e.subject_id.clone(),
                    status: SubjectStatus::Error,
                    atlas_id: None,
                    qc: None,
                    error: Some(err.to_string()),
                };
                (row, None)
            })
        })
        .collect();
    let (rows, kept): (Vec<TableRow>, Vec<Option<ManifestEntry>>) = results.into_iter().unzip();
    write_json(&rows, &dir.join("qc_table.json"))?;
    dataio::write_manifest(&DatasetManifest::new(kept.into_iter().flatten().collect()), &dir.join("manifest.json"))?;
    let failed = fail_count(&rows);
    let qc_failed = rows.iter().filter(|r| r.status == SubjectStatus::QcFailed).count();
    log::info!("preprocess: {} subjects, {qc_failed} failed QC, {failed} errors", rows.len());
    if failed > 0 {
        eprintln!("{}", serde_json::to_string(&rows.iter().filter(|r| r.status == SubjectStatus::Error).collect::<Vec<_>>()).unwrap_or_default());
        return Err(CliError::Runtime(format!("preprocess: {failed} of {} subjects failed; see qc_table.json", rows.len())));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// fingerprint

/// Fingerprint volume and ROI matrix per subject and atlas, one directory
/// per atlas.
pub fn cmd_fingerprint<T: Real>(ctx: &Ctx, manifest: Option<&Path>, atlas_flags: &[PathBuf]) -> Result<Vec<TableRow>> {
    let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| ctx.dir(&["preprocess", "manifest.json"]));
    let m = read_manifest(&mpath)?;
    let mut all_rows = Vec::new();
    for p in atlas_paths(ctx, atlas_flags)? {
        let (atlas_id, atlas) = load_atlas(&p)?;
        let dir = ctx.dir(&["fingerprint", &atlas_id]);
        let ae = VolumeExtras { atlas_id: Some(atlas_id.clone()), ..ctx.extras() };
        dataio::write_volume::<f32>(&AnyVolume::Atlas(atlas.clone()), &ae, &dir.join("atlas.cvol"))?;
        let results: Vec<(TableRow, Option<ManifestEntry>)> = m
            .entries
            .par_iter()
            .map(|e| {
                let one = || -> Result<ManifestEntry> {
                    let ts_path = e.timeseries_path.as_deref().ok_or_else(|| runtime("manifest entry has no timeseries_path"))?;
                    let ts = dataio::read_timeseries::<T>(&m.resolve(ts_path))?;
                    let (fp, mat) = subject_connectivity(&ts, &atlas, &atlas_id).map_err(runtime)?;
                    let fp_rel = format!("{}_fp.cvol", e.subject_id);
                    let mat_rel = format!("{}_matrix.json", e.subject_id);
                    let extras = VolumeExtras { channel_labels: Some(fp.channel_labels()), ..ae.clone() };
                    dataio::write_volume(&AnyVolume::MultiChannel(fp.volume), &extras, &dir.join(&fp_rel))?;
                    write_json(&mat, &dir.join(&mat_rel))?;
                    let mut out = ManifestEntry::new(e.subject_id.clone(), e.label);
                    out.fingerprint_path = Some(fp_rel);
                    out.matrix_path = Some(mat_rel);
                    out.site = e.site.clone();
                    Ok(out)
                };
                let mut row = TableRow { subject_id: e.subject_id.clone(), status: SubjectStatus::Ok, atlas_id: Some(atlas_id.clone()), qc: None, error: None };
                match one() {
                    Ok(entry) => (row, Some(entry)),
                    Err(err) => {
                        row.status = SubjectStatus::Error;
                        row.error = Some(err.to_string());
                        (row, None)
                    }
                }
            })
            .collect();
        let (rows, kept): (Vec<TableRow>, Vec<Option<ManifestEntry>>) = results.into_iter().unzip();
        dataio::write_manifest(&DatasetManifest::new(kept.into_iter().flatten().collect()), &dir.join("manifest.json"))?;
        log::info!("fingerprint {atlas_id}: {} subjects, {} errors", rows.len(), fail_count(&rows));
        all_rows.extend(rows);
    }
    let failed = fail_count(&all_rows);
    if failed > 0 {
        write_json(&all_rows, &ctx.dir(&["fingerprint", "errors.json"]))?;
        return Err(CliError::Runtime(format!("fingerprint: {failed} subject/atlas pairs failed; see fingerprint/errors.json")));
    }
    Ok(all_rows)
}

// ---------------------------------------------------------------------------
// datasets and learners

/// Model inputs for one atlas, in manifest order.
pub struct Dataset<T: Real> {
    pub atlas_id: String,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub sites: Vec<Option<String>>,
    pub inputs: Vec<Tensor<T>>,
}

fn fingerprint_manifest(root: &Path, atlas_id: &str) -> PathBuf {
    root.join("fingerprint").join(atlas_id).join("manifest.json")
}

pub fn load_dataset<T: Real>(manifest_path: &Path, atlas_id: &str, family: Family) -> Result<Dataset<T>> {
    let m = read_manifest(manifest_path)?;
    let inputs: Vec<Tensor<T>> = m
        .entries
        .par_iter()
        .map(|e| -> Result<Tensor<T>> {
            if family.uses_volumes() {
                let p = e.fingerprint_path.as_deref().ok_or_else(|| runtime(format!("{}: no fingerprint_path", e.subject_id)))?;
                Ok(volume_to_tensor(&dataio::read_multichannel::<T>(&m.resolve(p))?.0))
            } else {
                let p = e.matrix_path.as_deref().ok_or_else(|| runtime(format!("{}: no matrix_path", e.subject_id)))?;
                let mat: ConnectivityMatrix = read_json(&m.resolve(p))?;
                Ok(matrix_to_tensor(&mat)?)
            }
        })
        .collect::<Result<_>>()?;
    if let Some(first) = inputs.first() {
        if inputs.iter().any(|x| x.shape() != first.shape()) {
            return Err(runtime(format!("{atlas_id}: inputs have differing shapes")));
        }
    }
    Ok(Dataset {
        atlas_id: atlas_id.into(),
        ids: m.entries.iter().map(|e| e.subject_id.clone()).collect(),
        labels: m.labels(),
        sites: m.entries.iter().map(|e| e.site.clone()).collect(),
        inputs,
    })
}

fn net_graph(cfg: &RunConfig, family: Family, sample_shape: &[usize]) -> Result<(ModelGraph, TrainConfig)> {
    match family {
        Family::Cnn => {
            let [c, nz, ny, nx] = sample_shape else {
                return Err(runtime(format!("CNN needs [C, nz, ny, nx] inputs, got {sample_shape:?}")));
            };
            Ok((build_cnn(&cfg.models.cnn, *c, [*nx, *ny, *nz])?, cfg.models.cnn.train.clone()))
        }
        Family::Fcn => Ok((build_fcn(&cfg.models.fcn, sample_shape.iter().product())?, cfg.models.fcn.train.clone())),
        _ => unreachable!("linear families have no graph"),
    }
}

fn linear_kind(family: Family, value: f64) -> LinearKind {
    match family {
        Family::Ridge => LinearKind::Ridge { alpha: value },
        Family::SvmL2 => LinearKind::Svm { beta: value, penalty: Penalty::L2 },
        Family::SvmL1 => LinearKind::Svm { beta: value, penalty: Penalty::L1 },
        _ => unreachable!("network families have no linear kind"),
    }
}

fn search_linear<T: Real>(family: Family, grid: &[f64], d: &Dataset<T>, plan: FoldPlan, seed_value: u64) -> Result<SearchResult> {
    let r = match family {
        Family::Ridge => evaluate_grid(|a| RidgeLearner { alpha: a }, grid, &d.inputs, &d.labels, plan, seed_value)?,
        Family::SvmL2 => evaluate_grid(|b| SvmLearner { beta: b, penalty: Penalty::L2 }, grid, &d.inputs, &d.labels, plan, seed_value)?,
        Family::SvmL1 => evaluate_grid(|b| SvmLearner { beta: b, penalty: Penalty::L1 }, grid, &d.inputs, &d.labels, plan, seed_value)?,
        _ => unreachable!(),
    };
    Ok(r)
}

fn linear_oof<T: Real>(kind: LinearKind, d: &Dataset<T>, plan: &FoldPlan, seed_value: u64) -> Result<Vec<evaluation::SubjectScore>> {
    let s = match kind {
        LinearKind::Ridge { alpha } => evaluation::out_of_fold(&RidgeLearner { alpha }, &d.inputs, &d.ids, &d.labels, plan, seed_value)?,
        LinearKind::Svm { beta, penalty } => evaluation::out_of_fold(&SvmLearner { beta, penalty }, &d.inputs, &d.ids, &d.labels, plan, seed_value)?,
    };
    Ok(s)
}

fn fold_plan<T: Real>(cfg: &RunConfig, d: &Dataset<T>, seed_value: u64) -> Result<FoldPlan> {
    let k = cfg.evaluation.folds;
    Ok(match cfg.evaluation.strategy {
        FoldStrategy::Stratified => evaluation::stratified_kfold(&d.labels, k, seed_value)?,
        FoldStrategy::SiteStratified => evaluation::site_stratified_kfold(&d.labels, &d.sites, k, seed_value)?,
    })
}

fn atlas_ids(ctx: &Ctx, root: &Path, flags: &[String]) -> Result<Vec<String>> {
    if !flags.is_empty() {
        return Ok(flags.to_vec());
    }
    let ids: Vec<String> = list_dirs(&root.join("fingerprint"))?;
    if ids.is_empty() {
        return Err(CliError::Validation(format!("no fingerprint directories under {}", ctx.out.display())));
    }
    Ok(ids)
}

fn families(ctx: &Ctx, flags: &[Family]) -> Vec<Family> {
    if flags.is_empty() {
        ctx.cfg.models.families.clone()
    } else {
        flags.to_vec()
    }
}

fn with_seed_note(mut r: EvalReport, root_seed: u64) -> EvalReport {
    r.notes.insert("root_seed".into(), serde_json::Value::from(root_seed));
    r
}

// ---------------------------------------------------------------------------
// cv

/// Stratified k-fold CV per family and atlas on one shared fold plan. The
/// linear baselines pick their hyperparameter on the same folds and are
/// reported as optimistic CV.
pub fn cmd_cv<T: Real>(ctx: &Ctx, family_flags: &[Family], atlas_flags: &[String]) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for atlas_id in atlas_ids(ctx, &ctx.out, atlas_flags)? {
        for &family in &families(ctx, family_flags) {
            let d = load_dataset::<T>(&fingerprint_manifest(&ctx.out, &atlas_id), &atlas_id, family)?;
            let plan = fold_plan(&ctx.cfg, &d, ctx.stream("cv/folds"))?;
            let run_seed = ctx.stream(&format!("cv/{}/{atlas_id}", family.name()));
            let dir = ctx.dir(&["cv", family.name(), &atlas_id]);
            let report = match family {
                Family::Cnn | Family::Fcn => {
                    let (graph, train) = net_graph(&ctx.cfg, family, d.inputs[0].shape())?;
                    let learner = NetLearner { graph, train };
                    evaluation::cross_validate(family.name(), &atlas_id, &learner, &d.inputs, &d.ids, &d.labels, &plan, run_seed)?
                }
                _ => {
                    let search = search_linear(family, ctx.cfg.grid(family), &d, plan.clone(), run_seed)?;
                    write_json(&search, &dir.join("search.json"))?;
                    let subjects = linear_oof(linear_kind(family, search.best), &d, &plan, run_seed)?;
                    let mut r = EvalReport::from_subjects(family.name(), &atlas_id, Protocol::OptimisticCv, subjects)?;
                    r.notes.insert("hyperparameter".into(), serde_json::Value::from(search.best));
                    r
                }
            };
            let report = with_seed_note(report, ctx.cfg.seed);
            report.write(&dir, "report")?;
            log::info!("cv {} {atlas_id}: accuracy {:.4} auc {:?}", family.name(), report.accuracy, report.auc);
            reports.push(report);
        }
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedConfig {
    pub family: Family,
    pub root_seed: u64,
    pub train_ids: Vec<String>,
    pub model: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchResult>,
}

fn history_csv(h: &[connectome_core::models::EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_loss,train_accuracy\n");
    for r in h {
        s.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.mean_loss, r.train_accuracy));
    }
    s
}

/// Fits each family on every subject of each atlas and writes checkpoints.
/// Linear baselines choose their hyperparameter by k-fold CV first.
pub fn cmd_train<T: Real>(ctx: &Ctx, family_flags: &[Family], atlas_flags: &[String]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for atlas_id in atlas_ids(ctx, &ctx.out, atlas_flags)? {
        for &family in &families(ctx, family_flags) {
            let d = load_dataset::<T>(&fingerprint_manifest(&ctx.out, &atlas_id), &atlas_id, family)?;
            let run_seed = ctx.stream(&format!("train/{}/{atlas_id}", family.name()));
            let dir = ctx.dir(&["train", family.name(), &atlas_id]);
            let refs: Vec<&Tensor<T>> = d.inputs.iter().collect();
            let checkpoint: Checkpoint = match family {
                Family::Cnn | Family::Fcn => {
                    let (graph, train) = net_graph(&ctx.cfg, family, d.inputs[0].shape())?;
                    let net = graph.instantiate::<T>(seed::derive(run_seed, "init"))?;
                    let mut trainer = Trainer::new(net, TrainConfig { seed: run_seed, ..train })?;
                    trainer.run_to_end(&refs, &d.labels)?;
                    dataio::atomic_write(&dir.join("history.csv"), history_csv(&trainer.history).as_bytes())?;
                    let model = match family {
                        Family::Cnn => serde_json::to_value(&ctx.cfg.models.cnn),
                        _ => serde_json::to_value(&ctx.cfg.models.fcn),
                    }
                    .map_err(runtime)?;
                    let cfg = TrainedConfig { family, root_seed: ctx.cfg.seed, train_ids: d.ids.clone(), model, search: None };
                    trainer.to_checkpoint(family.name(), &atlas_id, serde_json::to_value(&cfg).map_err(runtime)?)
                }
                _ => {
                    let plan = fold_plan(&ctx.cfg, &d, seed::derive(run_seed, "folds"))?;
                    let search = search_linear(family, ctx.cfg.grid(family), &d, plan, run_seed)?;
                    let xs: Vec<Vec<f64>> = d.inputs.iter().map(|x| x.data().iter().map(|v| v.as_f64()).collect()).collect();
                    let kind = linear_kind(family, search.best);
                    let model = LinearModel::fit(kind, &xs, &d.labels)?;
                    let mut c = model.to_checkpoint(&atlas_id);
                    let cfg = TrainedConfig {
                        family,
                        root_seed: ctx.cfg.seed,
                        train_ids: d.ids.clone(),
                        model: serde_json::to_value(kind).map_err(runtime)?,
                        search: Some(search),
                    };
                    c.meta.config = serde_json::to_value(&cfg).map_err(runtime)?;
                    c
                }
            };
            let path = dir.join("model.json");
            dataio::save_checkpoint(&checkpoint, &path)?;
            log::info!("train {} {atlas_id}: wrote {}", family.name(), path.display());
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// test

/// A checkpoint loaded as either family kind.
pub enum LoadedModel<T: Real> {
    Net(Network<T>),
    Linear(LinearModel),
}

impl<T: Real> Classifier<T> for LoadedModel<T> {
    fn score(&self, x: &Tensor<T>) -> connectome_core::models::Result<f64> {
        match self {
            LoadedModel::Net(n) => n.score(x),
            LoadedModel::Linear(l) => Classifier::<T>::score(l, x),
        }
    }
}

/// Loads `model.json` and the training config stored with it.
pub fn load_model<T: Real>(path: &Path) -> Result<(LoadedModel<T>, TrainedConfig)> {
    let c = dataio::load_checkpoint(path)?;
    let cfg: TrainedConfig = serde_json::from_value(c.meta.config.clone())
        .map_err(|e| CliError::Runtime(format!("{}: checkpoint config: {e}", path.display())))?;
    let model = match c.meta.architecture {
        dataio::Architecture::Network { .. } => {
            // the stored linear config is replaced by the trained-config wrapper, so networks go through the trainer
            LoadedModel::Net(Trainer::<T>::from_checkpoint(&c)?.net)
        }
        dataio::Architecture::Linear { .. } => {
            let mut inner = c.clone();
            inner.meta.config = cfg.model.clone();
            LoadedModel::Linear(LinearModel::from_checkpoint(&inner)?)
        }
    };
    Ok((model, cfg))
}

/// Scores a separately processed dataset (its own output root) with the
/// checkpoints from `train`, per atlas and as a majority-vote ensemble.
pub fn cmd_test<T: Real>(ctx: &Ctx, test_root: &Path, family_flags: &[Family], atlas_flags: &[String]) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &family in &families(ctx, family_flags) {
        let mut per_atlas = Vec::new();
        for atlas_id in atlas_ids(ctx, test_root, atlas_flags)? {
            let (model, tc) = load_model::<T>(&ctx.dir(&["train", family.name(), &atlas_id, "model.json"]))?;
            let d = load_dataset::<T>(&fingerprint_manifest(test_root, &atlas_id), &atlas_id, family)?;
            let r = evaluation::holdout_test(family.name(), &atlas_id, &model, &tc.train_ids, &d.inputs, &d.ids, &d.labels)?;
            let r = with_seed_note(r, ctx.cfg.seed);
            r.write(&ctx.dir(&["test", family.name(), &atlas_id]), "report")?;
            log::info!("test {} {atlas_id}: accuracy {:.4}", family.name(), r.accuracy);
            per_atlas.push(r);
        }
        let e = with_seed_note(evaluation::ensemble(family.name(), &per_atlas)?, ctx.cfg.seed);
        e.write(&ctx.dir(&["test", family.name(), "ensemble"]), "report")?;
        out.extend(per_atlas);
        out.push(e);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// ensemble

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Cv,
    Test,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Cv => "cv",
            Stage::Test => "test",
        }
    }
}

/// Majority vote over the per-atlas reports of a stage.
pub fn cmd_ensemble(ctx: &Ctx, stage: Stage, family_flags: &[Family], atlas_flags: &[String]) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &family in &families(ctx, family_flags) {
        let base = ctx.dir(&[stage.name(), family.name()]);
        let atlases: Vec<String> = if atlas_flags.is_empty() {
            list_dirs(&base)?.into_iter().filter(|a| a != "ensemble").collect()
        } else {
            atlas_flags.to_vec()
        };
        let reports: Vec<EvalReport> =
            atlases.iter().map(|a| read_json(&base.join(a).join("report.json"))).collect::<std::result::Result<_, _>>()?;
        let mut e = evaluation::ensemble(family.name(), &reports)?;
        e.notes.insert("stage".into(), serde_json::Value::from(stage.name()));
        let e = with_seed_note(e, ctx.cfg.seed);
        e.write(&ctx.dir(&["ensemble", stage.name(), family.name()]), "report")?;
        log::info!("ensemble {} {}: accuracy {:.4}", stage.name(), family.name(), e.accuracy);
        out.push(e);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// saliency

/// Input-gradient saliency of each trained CNN over the subjects of a
/// fingerprint manifest, plus the group average.
pub fn cmd_saliency<T: Real>(ctx: &Ctx, manifest: Option<&Path>, atlas_flags: &[String]) -> Result<Vec<SaliencyMap>> {
    let sc = &ctx.cfg.saliency;
    let mut groups = Vec::new();
    for atlas_id in atlas_ids(ctx, &ctx.out, atlas_flags)? {
        let ck = ctx.dir(&["train", Family::Cnn.name(), &atlas_id, "model.json"]);
        let net = match load_model::<T>(&ck)?.0 {
            LoadedModel::Net(n) => n,
            LoadedModel::Linear(_) => return Err(CliError::Validation(format!("{} is not a network checkpoint", ck.display()))),
        };
        let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| fingerprint_manifest(&ctx.out, &atlas_id));
        let m = read_manifest(&mpath)?;
        let mask = if sc.apply_mask {
            Some(load_atlas(&ctx.dir(&["fingerprint", &atlas_id, "atlas.cvol"]))?.1.to_mask())
        } else {
            None
        };
        let checkpoint_id = format!("train/cnn/{atlas_id}/model.json");
        let dir = ctx.dir(&["saliency", &atlas_id]);
        let maps: Vec<SaliencyMap> = m
            .entries
            .par_iter()
            .map(|e| -> Result<SaliencyMap> {
                let p = e.fingerprint_path.as_deref().ok_or_else(|| runtime(format!("{}: no fingerprint_path", e.subject_id)))?;
                let (vol, _) = dataio::read_multichannel::<T>(&m.resolve(p))?;
                let g = input_gradient(&net, &vol, sc.mode)?;
                let meta = SaliencyMeta {
                    subject_id: e.subject_id.clone(),
                    atlas_id: atlas_id.clone(),
                    checkpoint_id: checkpoint_id.clone(),
                    subjects: vec![],
                    masked: false,
                    max_normalized: false,
                    root_seed: Some(ctx.cfg.seed),
                };
                let mut map = collapse_channels(&g, meta);
                if let Some(mask) = &mask {
                    map.apply_mask(mask)?;
                }
                if sc.per_subject {
                    map.write(&dir.join("subjects"), &e.subject_id, sc.top_k)?;
                }
                Ok(map)
            })
            .collect::<Result<_>>()?;
        let group = group_average(&maps)?;
        group.write(&dir, "group", sc.top_k)?;
        if sc.max_normalize {
            group.max_normalized().write(&dir, "group_normalized", sc.top_k)?;
        }
        log::info!("saliency {atlas_id}: averaged {} subjects", maps.len());
        groups.push(group);
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// verify

/// Gradient and oracle suites; always 64-bit.
pub fn cmd_verify(ctx: &Ctx, fault: Option<Fault>) -> Result<VerifyReport> {
    let g = gradient_suite(ctx.stream("verify"), fault).map_err(runtime)?;
    let o = oracle_suite(ctx.stream("verify"), 100).map_err(runtime)?;
    let report = VerifyReport::merge("verify", vec![g, o]);
    write_json(&report, &ctx.dir(&["verify", "report.json"]))?;
    print!("{}", report.summary());
    if !report.passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::Verification(format!("verification failed: {}", failed.join(", "))));
    }
    Ok(report)
}

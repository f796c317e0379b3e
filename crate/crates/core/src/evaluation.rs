//! Stratified folds, accuracy, ROC/AUC, cross-validation, held-out testing
//! and majority-vote ensembles.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{atomic_write, DataError};
use crate::models::{Classifier, Learner, ModelError};
use crate::nn::Tensor;
use crate::{seed, Real};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("too few samples: class {class} has {count} members but k = {k}")]
    TooFewSamples { class: u8, count: usize, k: usize },
    #[error("k must be >= 2, got {0}")]
    BadK(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("subject {0} appears in both training and test sets")]
    SubjectOverlap(String),
    #[error("fold plan does not cover the dataset: {0}")]
    BadPlan(String),
    #[error("ensemble inputs disagree: {0}")]
    EnsembleMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Held-out subject indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Training indices for fold `f` (the complement), ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let held: HashSet<usize> = self.folds[f].iter().copied().collect();
        let n: usize = self.folds.iter().map(Vec::len).sum();
        (0..n).filter(|i| !held.contains(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_covers(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.folds.iter().flatten() {
            if i >= n || seen[i] {
                return Err(EvalError::BadPlan(format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(EvalError::BadPlan(format!("plan covers {} of {n} subjects", self.len())));
        }
        Ok(())
    }
}

/// Per-class shuffled round-robin assignment. The fold offset carries over
/// from one class to the next so fold sizes differ by at most one overall.
pub fn stratified_kfold(labels: &[u8], k: usize, seed_value: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(EvalError::BadPlan("labels must be 0 or 1".into()));
    }
    let mut rng = seed::rng(seed::derive(seed_value, "folds"));
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(EvalError::TooFewSamples { class, count: members.len(), k });
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { k, seed: seed_value, folds })
}

/// Like [`stratified_kfold`] but balancing (site, label) strata: within each
/// class the members are shuffled per site and dealt site by site, in
/// sorted site order, so every fold gets its share of each site. Subjects
/// without a site form one stratum.
pub fn site_stratified_kfold(labels: &[u8], sites: &[Option<String>], k: usize, seed_value: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    if sites.len() != labels.len() {
        return Err(EvalError::LengthMismatch(sites.len(), labels.len()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(EvalError::BadPlan("labels must be 0 or 1".into()));
    }
    let mut rng = seed::rng(seed::derive(seed_value, "site-folds"));
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut strata: std::collections::BTreeMap<&str, Vec<usize>> = std::collections::BTreeMap::new();
        for i in (0..labels.len()).filter(|&i| labels[i] == class) {
            strata.entry(sites[i].as_deref().unwrap_or("")).or_default().push(i);
        }
        let count: usize = strata.values().map(Vec::len).sum();
        if count < k {
            return Err(EvalError::TooFewSamples { class, count, k });
        }
        for members in strata.values_mut() {
            members.shuffle(&mut rng);
            for &i in members.iter() {
                folds[next].push(i);
                next = (next + 1) % k;
            }
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { k, seed: seed_value, folds })
}

pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// ROC points for a descending threshold sweep over the unique scores,
/// plus the Mann–Whitney AUC with half credit for ties.
pub fn roc_and_auc(scores: &[f64], labels: &[u8]) -> Result<(Vec<(f64, f64)>, f64)> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the Mann–Whitney count, kept integral
    let mut u2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        // positives in this group beat every negative further down and tie this group's negatives
        u2 += (gn as u128) * (2 * tp as u128 + gp as u128);
        tp += gp;
        fp += gn;
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = u2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((roc, auc))
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub zeros: usize,
    pub ones: usize,
}

/// Mode of the per-model labels. Ties go to label 1 only if the mean
/// probability is strictly above 0.5.
pub fn majority_vote(labels: &[u8], probs: &[f64]) -> (u8, VoteCounts) {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let counts = VoteCounts { zeros: labels.len() - ones, ones };
    let label = match ones.cmp(&counts.zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => {
            let mean = probs.iter().sum::<f64>() / probs.len().max(1) as f64;
            u8::from(mean > 0.5)
        }
    };
    (label, counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub id: String,
    pub label: u8,
    /// Predicted probability of label 1.
    pub score: f64,
    pub predicted: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Cv,
    /// Hyperparameters were chosen on the same folds that are reported.
    OptimisticCv,
    Holdout,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub atlas_id: String,
    pub protocol: Protocol,
    pub subjects: Vec<SubjectScore>,
    pub accuracy: f64,
    pub roc: Vec<(f64, f64)>,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn from_subjects(model: &str, atlas_id: &str, protocol: Protocol, subjects: Vec<SubjectScore>) -> Result<Self> {
        let pred: Vec<u8> = subjects.iter().map(|s| s.predicted).collect();
        let truth: Vec<u8> = subjects.iter().map(|s| s.label).collect();
        let scores: Vec<f64> = subjects.iter().map(|s| s.score).collect();
        let acc = accuracy(&pred, &truth)?;
        let (roc, auc) = match roc_and_auc(&scores, &truth) {
            Ok((r, a)) => (r, Some(a)),
            Err(EvalError::SingleClass) => (Vec::new(), None),
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            model: model.into(),
            atlas_id: atlas_id.into(),
            protocol,
            subjects,
            accuracy: acc,
            roc,
            auc,
            notes: BTreeMap::new(),
        })
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in &self.roc {
            s.push_str(&format!("{f:?},{t:?}\n"));
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>_roc.csv` next to each other.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::dataio::write_json(self, &dir.join(format!("{stem}.json")))?;
        atomic_write(&dir.join(format!("{stem}_roc.csv")), self.roc_csv().as_bytes())?;
        Ok(())
    }
}

fn score_subjects<T: Real, M: Classifier<T>>(
    model: &M,
    inputs: &[&Tensor<T>],
    ids: &[String],
    labels: &[u8],
) -> Result<Vec<SubjectScore>> {
    inputs
        .iter()
        .zip(ids.iter().zip(labels))
        .map(|(x, (id, &label))| {
            let p = model.predict_proba(x)?;
            Ok(SubjectScore { id: id.clone(), label, score: p, predicted: u8::from(p > 0.5) })
        })
        .collect()
}

/// Out-of-fold probabilities for every subject, in subject order. Fold `f`
/// trains with seed `derive(seed, "fold/f")`.
pub fn out_of_fold<T: Real, L: Learner<T>>(
    learner: &L,
    inputs: &[Tensor<T>],
    ids: &[String],
    labels: &[u8],
    plan: &FoldPlan,
    seed_value: u64,
) -> Result<Vec<SubjectScore>> {
    let n = inputs.len();
    if ids.len() != n || labels.len() != n {
        return Err(EvalError::LengthMismatch(n, labels.len().min(ids.len())));
    }
    plan.check_covers(n)?;
    // folds are independent; results are placed by index so the output does
    // not depend on scheduling
    let per_fold: Vec<Result<Vec<SubjectScore>>> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let train = plan.train_indices(f);
            let xs: Vec<&Tensor<T>> = train.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let fold_seed = seed::derive(seed_value, &format!("fold/{f}"));
            let model = learner
                .fit(&xs, &ys, fold_seed)
                .map_err(|e| ModelError::Fold { fold: f, source: Box::new(e) })?;
            let held = &plan.folds[f];
            let hx: Vec<&Tensor<T>> = held.iter().map(|&i| &inputs[i]).collect();
            let hid: Vec<String> = held.iter().map(|&i| ids[i].clone()).collect();
            let hy: Vec<u8> = held.iter().map(|&i| labels[i]).collect();
            log::info!("fold {}/{} done", f + 1, plan.k);
            score_subjects(&model, &hx, &hid, &hy)
        })
        .collect();
    let mut out: Vec<Option<SubjectScore>> = vec![None; n];
    for (f, scores) in per_fold.into_iter().enumerate() {
        for (i, s) in plan.folds[f].iter().zip(scores?) {
            out[*i] = Some(s);
        }
    }
    Ok(out.into_iter().map(|s| s.expect("plan covers all subjects")).collect())
}

pub fn cross_validate<T: Real, L: Learner<T>>(
    model_name: &str,
    atlas_id: &str,
    learner: &L,
    inputs: &[Tensor<T>],
    ids: &[String],
    labels: &[u8],
    plan: &FoldPlan,
    seed_value: u64,
) -> Result<EvalReport> {
    let subjects = out_of_fold(learner, inputs, ids, labels, plan, seed_value)?;
    EvalReport::from_subjects(model_name, atlas_id, Protocol::Cv, subjects)
}

/// Rejects test subjects that were seen during training.
pub fn check_disjoint(train_ids: &[String], test_ids: &[String]) -> Result<()> {
    let train: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    match test_ids.iter().find(|id| train.contains(id.as_str())) {
        Some(id) => Err(EvalError::SubjectOverlap(id.clone())),
        None => Ok(()),
    }
}

pub fn holdout_test<T: Real, M: Classifier<T>>(
    model_name: &str,
    atlas_id: &str,
    model: &M,
    train_ids: &[String],
    inputs: &[Tensor<T>],
    ids: &[String],
    labels: &[u8],
) -> Result<EvalReport> {
    check_disjoint(train_ids, ids)?;
    let refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let subjects = score_subjects(model, &refs, ids, labels)?;
    EvalReport::from_subjects(model_name, atlas_id, Protocol::Holdout, subjects)
}

/// Combines per-atlas reports over the same subjects: label by majority
/// vote, score by mean probability.
pub fn ensemble(model_name: &str, reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| EvalError::EnsembleMismatch("no reports".into()))?;
    if reports.len() == 1 {
        let mut r = first.clone();
        r.model = model_name.into();
        r.atlas_id = "ensemble".into();
        r.protocol = Protocol::Ensemble;
        return Ok(r);
    }
    for r in reports {
        if r.subjects.len() != first.subjects.len()
            || r.subjects.iter().zip(&first.subjects).any(|(a, b)| a.id != b.id || a.label != b.label)
        {
            return Err(EvalError::EnsembleMismatch(format!("{} and {} cover different subjects", first.atlas_id, r.atlas_id)));
        }
    }
    let subjects = (0..first.subjects.len())
        .map(|i| {
            let labels: Vec<u8> = reports.iter().map(|r| r.subjects[i].predicted).collect();
            let probs: Vec<f64> = reports.iter().map(|r| r.subjects[i].score).collect();
            let (predicted, _) = majority_vote(&labels, &probs);
            SubjectScore {
                id: first.subjects[i].id.clone(),
                label: first.subjects[i].label,
                score: probs.iter().sum::<f64>() / probs.len() as f64,
                predicted,
            }
        })
        .collect();
    let mut r = EvalReport::from_subjects(model_name, "ensemble", Protocol::Ensemble, subjects)?;
    r.notes.insert(
        "atlases".into(),
        serde_json::Value::from(reports.iter().map(|r| r.atlas_id.clone()).collect::<Vec<_>>()),
    );
    Ok(r)
}

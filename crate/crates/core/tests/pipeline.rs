//! Library-level pipeline: synthetic data through cleaning, connectivity,
//! model selection and evaluation, without the command line.

use connectome_core::connectivity::subject_connectivity;
use connectome_core::dataio::{self, read_manifest, AnyVolume, VolumeExtras};
use connectome_core::evaluation::{self, cross_validate, ensemble, out_of_fold, stratified_kfold, EvalReport, Protocol};
use connectome_core::models::{
    build_cnn, hyper_search, matrix_to_tensor, volume_to_tensor, CnnConfig, LinearKind, LinearModel, NetLearner,
    RidgeLearner, TrainConfig,
};
use connectome_core::nn::Tensor;
use connectome_core::preprocess::{clean_subject, PreprocessConfig};
use connectome_core::synthgen::{generate_dataset, Synth, SynthSpec};
use proptest::prelude::*;

fn spec(delta: f64, per_group: usize, seed: u64) -> SynthSpec {
    SynthSpec { dims: [8, 8, 8], rois: 4, frames: 120, planted_edges: vec![[0, 1]], delta, subjects_per_group: per_group, seed, ..Default::default() }
}

struct Prepared {
    ids: Vec<String>,
    labels: Vec<u8>,
    matrices: Vec<Tensor<f64>>,
    volumes: Vec<Tensor<f64>>,
}

fn prepare(spec: &SynthSpec) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(spec, dir.path()).unwrap();
    let m = read_manifest(&dir.path().join("manifest.json")).unwrap();
    let atlas = dataio::read_atlas(&dir.path().join("atlases/synth_a.cvol")).unwrap();
    let mask = atlas.to_mask();
    let mut out = Prepared { ids: vec![], labels: vec![], matrices: vec![], volumes: vec![] };
    for e in &m.entries {
        let ts = dataio::read_timeseries::<f64>(&m.resolve(e.timeseries_path.as_deref().unwrap())).unwrap();
        let motion = dataio::read_motion(&m.resolve(e.motion_params_path.as_deref().unwrap())).unwrap();
        let clean = clean_subject(&e.subject_id, &ts, &motion, &mask, &PreprocessConfig::default()).unwrap();
        let vol = clean.volume.expect("synthetic subjects pass QC");
        let (fp, mat) = subject_connectivity(&vol, &atlas, "synth_a").unwrap();
        assert!(fp.volume.data().iter().all(|r| (-1.0..=1.0).contains(r)));
        out.ids.push(e.subject_id.clone());
        out.labels.push(e.label);
        out.matrices.push(matrix_to_tensor(&mat).unwrap());
        out.volumes.push(volume_to_tensor(&fp.volume));
    }
    out
}

#[test]
fn planted_edge_is_recovered_by_ridge() {
    let p = prepare(&spec(0.9, 12, 4));
    let search = hyper_search(|a| RidgeLearner { alpha: a }, &[0.1, 1.0, 10.0], &p.matrices, &p.labels, 4, 2).unwrap();
    let oof = out_of_fold(&RidgeLearner { alpha: search.best }, &p.matrices, &p.ids, &p.labels, &search.plan, 2).unwrap();
    let r = EvalReport::from_subjects("ridge", "synth_a", Protocol::OptimisticCv, oof).unwrap();
    assert!(r.accuracy >= 0.8, "accuracy {}", r.accuracy);
    assert!(r.auc.unwrap() >= 0.8);

    // the planted (0, 1) edge, first in the upper triangle, has the largest group difference
    let xs: Vec<Vec<f64>> = p.matrices.iter().map(|t| t.data().to_vec()).collect();
    let dim = xs[0].len();
    let effect: Vec<f64> = (0..dim)
        .map(|j| {
            let mean = |g: u8| {
                let v: Vec<f64> = xs.iter().zip(&p.labels).filter(|(_, &l)| l == g).map(|(x, _)| x[j]).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            (mean(1) - mean(0)).abs()
        })
        .collect();
    let top = (0..dim).max_by(|&a, &b| effect[a].total_cmp(&effect[b])).unwrap();
    assert_eq!(top, 0, "group differences {effect:?}");
    let m = LinearModel::fit(LinearKind::Ridge { alpha: search.best }, &xs, &p.labels).unwrap();
    assert_eq!(m.effective_weights().len(), dim);
}

#[test]
fn small_cnn_cross_validates_on_fingerprints() {
    let p = prepare(&spec(0.9, 8, 5));
    let cfg = CnnConfig {
        conv_channels: vec![4, 8],
        dense_hidden: vec![8],
        train: TrainConfig { epochs: 15, batch_size: 4, learning_rate: 0.01, momentum: 0.9, seed: 0 },
        ..Default::default()
    };
    let graph = build_cnn(&cfg, 4, [8, 8, 8]).unwrap();
    let learner = NetLearner { graph, train: cfg.train.clone() };
    let plan = stratified_kfold(&p.labels, 4, 1).unwrap();
    let a = cross_validate("cnn", "synth_a", &learner, &p.volumes, &p.ids, &p.labels, &plan, 3).unwrap();
    let b = cross_validate("cnn", "synth_a", &learner, &p.volumes, &p.ids, &p.labels, &plan, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.accuracy >= 0.75, "accuracy {}", a.accuracy);
    let e = ensemble("cnn", &[a.clone(), b]).unwrap();
    assert_eq!(e.accuracy, a.accuracy);
}

#[test]
fn null_data_stays_near_chance() {
    let p = prepare(&spec(0.0, 20, 6));
    let plan = stratified_kfold(&p.labels, 5, 1).unwrap();
    let r = cross_validate("ridge", "synth_a", &RidgeLearner { alpha: 1.0 }, &p.matrices, &p.ids, &p.labels, &plan, 1).unwrap();
    assert!((0.25..=0.75).contains(&r.accuracy), "accuracy {}", r.accuracy);
}

#[test]
fn cleaned_volumes_round_trip_through_files() {
    let s = Synth::new(spec(0.5, 1, 8)).unwrap();
    let (ts, motion) = s.generate_subject(1, &mut s.subject_rng(0));
    let clean = clean_subject("x", &ts, &motion, &s.atlas.to_mask(), &PreprocessConfig::default()).unwrap();
    let vol = clean.volume.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.cvol");
    let extras = VolumeExtras { root_seed: Some(8), ..Default::default() };
    dataio::write_volume(&AnyVolume::TimeSeries(vol.clone()), &extras, &path).unwrap();
    let f = dataio::read_volume::<f32>(&path).unwrap();
    assert_eq!(f.volume, AnyVolume::TimeSeries(vol));
    assert_eq!(f.extras.root_seed, Some(8));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fold_plans_partition_subjects(n0 in 5usize..40, n1 in 5usize..40, k in 2usize..6, seed in any::<u64>()) {
        let labels: Vec<u8> = (0..n0 + n1).map(|i| u8::from(i >= n0)).collect();
        let plan = stratified_kfold(&labels, k, seed).unwrap();
        let mut all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n0 + n1).collect::<Vec<_>>());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let train = plan.train_indices(f);
            prop_assert!(train.iter().all(|i| !plan.folds[f].contains(i)));
            prop_assert_eq!(train.len() + plan.folds[f].len(), n0 + n1);
        }
    }

    #[test]
    fn holdout_refuses_shared_subjects(n in 2usize..20, shared in 0usize..20) {
        let shared = shared % n;
        let train: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let mut test: Vec<String> = (0..n).map(|i| format!("b{i}")).collect();
        test[shared] = train[shared].clone();
        prop_assert!(matches!(evaluation::check_disjoint(&train, &test), Err(evaluation::EvalError::SubjectOverlap(_))));
        test[shared] = format!("b{shared}");
        prop_assert!(evaluation::check_disjoint(&train, &test).is_ok());
    }
}

//! Grid search over one scalar hyperparameter by stratified k-fold CV.

use serde::{Deserialize, Serialize};

use super::{Classifier, Learner, ModelError, Result};
use crate::evaluation::{stratified_kfold, FoldPlan};
use crate::nn::Tensor;
use crate::{seed, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    pub accuracy: f64,
    /// Folds whose fit failed and were left out of the accuracy.
    pub skipped_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: f64,
    pub best_accuracy: f64,
    pub grid: Vec<GridPoint>,
    pub plan: FoldPlan,
}

/// CV accuracy of every grid value on one shared fold plan; the best value
/// wins with ties going to the smaller value.
pub fn hyper_search<T, L, F>(make: F, grid: &[f64], inputs: &[Tensor<T>], labels: &[u8], k: usize, seed_value: u64) -> Result<SearchResult>
where
    T: Real,
    L: Learner<T>,
    F: Fn(f64) -> L,
{
    if grid.is_empty() {
        return Err(ModelError::Config("empty hyperparameter grid".into()));
    }
    if inputs.len() != labels.len() {
        return Err(ModelError::Data(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let plan = stratified_kfold(labels, k, seed_value).map_err(|e| ModelError::Data(e.to_string()))?;
    evaluate_grid(make, grid, inputs, labels, plan, seed_value)
}

pub fn evaluate_grid<T, L, F>(make: F, grid: &[f64], inputs: &[Tensor<T>], labels: &[u8], plan: FoldPlan, seed_value: u64) -> Result<SearchResult>
where
    T: Real,
    L: Learner<T>,
    F: Fn(f64) -> L,
{
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let learner = make(value);
        let (mut correct, mut total) = (0usize, 0usize);
        let mut skipped = Vec::new();
        for f in 0..plan.k {
            let train = plan.train_indices(f);
            let xs: Vec<&Tensor<T>> = train.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let model = match learner.fit(&xs, &ys, seed::derive(seed_value, &format!("fold/{f}"))) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("grid value {value}: fold {f} fit failed, skipped: {e}");
                    skipped.push(f);
                    continue;
                }
            };
            for &i in &plan.folds[f] {
                correct += usize::from(model.predict_label(&inputs[i])? == labels[i]);
                total += 1;
            }
        }
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        points.push(GridPoint { value, accuracy, skipped_folds: skipped });
    }
    if points.iter().all(|p| p.skipped_folds.len() == plan.k) {
        return Err(ModelError::Config("every fit failed for every grid value".into()));
    }
    let best = points
        .iter()
        .filter(|p| p.skipped_folds.len() < plan.k)
        .fold(None::<&GridPoint>, |acc, p| match acc {
            Some(b) if b.accuracy > p.accuracy || (b.accuracy == p.accuracy && b.value <= p.value) => Some(b),
            _ => Some(p),
        })
        .expect("at least one evaluated point");
    Ok(SearchResult { best: best.value, best_accuracy: best.accuracy, grid: points.clone(), plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ridge_alpha_grid, RidgeLearner};

    /// Toy family: the hyperparameter selects which feature to threshold.
    struct Pick(f64);
    struct PickModel(usize);
    impl Classifier<f64> for PickModel {
        fn score(&self, x: &Tensor<f64>) -> Result<f64> {
            Ok(x.data()[self.0])
        }
    }
    impl Learner<f64> for Pick {
        type Model = PickModel;
        fn fit(&self, _: &[&Tensor<f64>], _: &[u8], _: u64) -> Result<PickModel> {
            if self.0 < 0.0 {
                return Err(ModelError::Config("negative".into()));
            }
            Ok(PickModel(self.0 as usize))
        }
    }

    fn data() -> (Vec<Tensor<f64>>, Vec<u8>) {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let inputs = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let sep = if l == 1 { 1.0 } else { -1.0 };
                let noise = if i % 4 < 2 { 1.0 } else { -1.0 };
                Tensor::from_vec(vec![noise, sep])
            })
            .collect();
        (inputs, labels)
    }

    #[test]
    fn single_value_grid() {
        let (x, y) = data();
        let r = hyper_search(Pick, &[0.0], &x, &y, 5, 0).unwrap();
        assert_eq!(r.best, 0.0);
    }

    #[test]
    fn separating_value_wins() {
        let (x, y) = data();
        let r = hyper_search(Pick, &[0.0, 1.0], &x, &y, 5, 0).unwrap();
        assert_eq!(r.best, 1.0);
        assert_eq!(r.best_accuracy, 1.0);
    }

    #[test]
    fn ties_go_to_smaller_value() {
        let (x, y) = data();
        let r = hyper_search(Pick, &[1.9, 1.0, 1.5], &x, &y, 5, 0).unwrap();
        assert_eq!(r.best, 1.0);
    }

    #[test]
    fn failed_fits_are_skipped_and_flagged() {
        let (x, y) = data();
        let r = hyper_search(Pick, &[-1.0, 0.0], &x, &y, 5, 0).unwrap();
        assert_eq!(r.grid[0].skipped_folds, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.best, 0.0);
        assert!(hyper_search(Pick, &[-1.0], &x, &y, 5, 0).is_err());
        assert!(hyper_search(Pick, &[], &x, &y, 5, 0).is_err());
    }

    #[test]
    fn ridge_search_on_default_grid() {
        let (x, y) = data();
        let r = hyper_search(|a| RidgeLearner { alpha: a }, &ridge_alpha_grid(), &x, &y, 5, 0).unwrap();
        assert_eq!(r.grid.len(), 10);
        assert_eq!(r.best_accuracy, 1.0);
        assert_eq!(r.best, 0.1);
    }
}

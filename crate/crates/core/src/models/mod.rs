//! Classifier families: the 3D CNN on fingerprint volumes, the fully
//! connected network and two linear baselines (ridge, squared-hinge SVM) on
//! vectorized ROI matrices.

mod linear;
mod net;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectivity::{vectorize_upper, ConnectivityError, ConnectivityMatrix};
use crate::dataio::DataError;
use crate::nn::{sigmoid, NnError, Tensor};
use crate::volume::MultiChannelVolume;
use crate::Real;

pub use linear::{
    linspace, logspace, ridge_alpha_grid, ridge_fit, svm_beta_grid, svm_fit, svm_objective, LinearFit, LinearKind,
    LinearModel, Penalty, RidgeLearner, Scaler, SvmFit, SvmLearner,
};
pub use net::{
    build_cnn, build_fcn, train, CnnConfig, EpochRecord, FcnConfig, ModelGraph, NetLearner, TrainConfig, Trainer,
};
pub use search::{evaluate_grid, hyper_search, GridPoint, SearchResult};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] DataError),
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<ModelError> },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Common prediction interface of every model family.
///
/// `score` is the real-valued decision function (the network logit, or
/// `w·x + b` for linear models); the probability is its sigmoid and the
/// label is 1 iff the probability is strictly above 0.5.
pub trait Classifier<T: Real>: Send + Sync {
    fn score(&self, x: &Tensor<T>) -> Result<f64>;

    fn predict_proba(&self, x: &Tensor<T>) -> Result<f64> {
        Ok(sigmoid(self.score(x)?))
    }

    fn predict_label(&self, x: &Tensor<T>) -> Result<u8> {
        Ok(u8::from(self.predict_proba(x)? > 0.5))
    }
}

/// Something that can be fit on labeled inputs. `seed` controls every
/// random choice made during fitting.
pub trait Learner<T: Real>: Send + Sync {
    type Model: Classifier<T>;
    fn fit(&self, inputs: &[&Tensor<T>], labels: &[u8], seed: u64) -> Result<Self::Model>;
}

/// Model family names used in configs, checkpoints and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cnn,
    Fcn,
    Ridge,
    SvmL2,
    SvmL1,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Fcn => "fcn",
            Family::Ridge => "ridge",
            Family::SvmL2 => "svm_l2",
            Family::SvmL1 => "svm_l1",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        [Family::Cnn, Family::Fcn, Family::Ridge, Family::SvmL2, Family::SvmL1].into_iter().find(|f| f.name() == s)
    }

    /// True for families that read fingerprint volumes rather than matrices.
    pub fn uses_volumes(self) -> bool {
        self == Family::Cnn
    }
}

/// Fingerprint volume as a `[C, nz, ny, nx]` tensor (x fastest), sharing the
/// canonical storage order.
pub fn volume_to_tensor<T: Real>(v: &MultiChannelVolume<T>) -> Tensor<T> {
    let [nx, ny, nz] = v.meta().dims;
    Tensor::new(vec![v.channels(), nz, ny, nx], v.data().to_vec()).expect("volume length matches its grid")
}

/// Upper-triangle feature vector of a connectivity matrix.
pub fn matrix_to_tensor<T: Real>(m: &ConnectivityMatrix) -> Result<Tensor<T>> {
    Ok(Tensor::from_vec(vectorize_upper(m)?.into_iter().map(T::from_f64).collect()))
}

pub(crate) fn check_training_set(inputs: usize, labels: &[u8]) -> Result<()> {
    if inputs != labels.len() {
        return Err(ModelError::Data(format!("{inputs} inputs but {} labels", labels.len())));
    }
    if labels.is_empty() {
        return Err(ModelError::Data("empty training set".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(ModelError::Data(format!("label {l} is not 0 or 1")));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(ModelError::Data("training set contains a single class".into()));
    }
    Ok(())
}

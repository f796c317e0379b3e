//! Connectome classification from voxel-level connectivity fingerprints.
//!
//! The crate is organized bottom-up:
//!
//! * [`volume`] holds grid metadata, volumes, atlases and masks.
//! * [`dataio`] reads and writes CVOL volumes, manifests, motion files and checkpoints.
//! * [`preprocess`] covers motion QC and signal cleaning.
//! * [`connectivity`] computes fingerprints and ROI-to-ROI matrices.
//! * [`nn`] is a small CPU network engine with hand-written backward passes.
//! * [`models`] builds the 3D CNN, the fully connected network and the linear baselines.
//! * [`evaluation`] runs cross-validation, held-out testing, ROC/AUC and ensembling.
//! * [`saliency`] derives input-gradient saliency maps from trained networks.
//! * [`synthgen`] generates seeded two-group datasets with planted connectivity differences.
//! * [`verify`] bundles gradient checks and oracle comparisons used by `connectome verify`.

pub mod connectivity;
pub mod dataio;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod real;
pub mod saliency;
pub mod seed;
pub mod synthgen;
pub mod verify;
pub mod volume;

pub use real::Real;
pub use volume::{Atlas, GridMeta, Mask, MultiChannelVolume, TimeSeriesVolume, Volume3D};

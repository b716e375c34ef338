//! Refinery: split labeled classes into finer sub-classes, retrain probe
//! networks on the refined labels and measure how well the resulting
//! representations transfer to new tasks.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`data`] | Feature matrices, labeled datasets, FINF binary I/O, label CSVs |
//! | [`hierarchy`] | Leveled class DAG, finer-level construction, relabeling |
//! | [`probe`] | One-hidden-layer ReLU network trained with softmax cross-entropy |
//! | [`linear`] | Binary logistic/hinge models, one-vs-all probes, 1-NN lookup |
//! | [`splitters`] | Random-K, k-means, spectral, affinity propagation, mean-shift |
//! | [`bucbam`] | Over-split, prune small clusters, classifier-based merging |
//! | [`fusion`] | L-∞ normalisation and concatenation of two representations |
//! | [`eval`] | Accuracy / AP / mAP and the transfer-evaluation harness |
//! | [`stats`] | Cluster size/variance histograms and per-class PCA |
//! | [`synth`] | Planted-subconcept data generator and recovery scores |
//! | [`pipeline`] | Config-driven end-to-end run |

pub mod bucbam;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod hierarchy;
pub mod linear;
mod math;
pub mod pipeline;
pub mod probe;
pub mod rng;
pub mod splitters;
pub mod stats;
pub mod synth;

pub use data::{ClassView, FeatureMatrix, LabeledDataset};
pub use error::{Error, Result};

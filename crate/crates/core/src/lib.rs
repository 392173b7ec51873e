//! Rashomon sets for 2-D embeddings.
//!
//! Dimension reduction rarely has a unique answer: many embeddings preserve
//! the structure of a high-dimensional dataset about equally well. This crate
//! works with that multiplicity directly instead of hiding it:
//!
//! * [`engine`] optimizes embedding coordinates under a pair-based
//!   neighborhood objective, optionally steered toward the principal
//!   components ([`engine::pca_alignment_loss_and_grad`]) or toward an
//!   external concept axis ([`engine::concept_alignment_loss_and_grad`]).
//! * [`rashomon`] generates embedding ensembles over (lambda, seed) grids,
//!   filters them into loss- or graph-based Rashomon sets, and compares
//!   induced neighbor-weight matrices with the soft Jaccard distance.
//! * [`consensus`] estimates per-edge calibration statistics across a
//!   Rashomon set, scores candidate neighbors with a variance-penalized
//!   upper-confidence rule, certifies pairwise comparisons with an empirical
//!   Bernstein bound, and rebuilds a consensus embedding on the refined
//!   neighbor graph.
//! * [`metrics`] scores embeddings: triplet agreement against the PCA
//!   reference, silhouette, leave-one-out kNN accuracy, and a kernel-SVM
//!   accuracy on Nystroem features.
//!
//! All randomized operations take explicit seeds and are deterministic for a
//! fixed seed, including under parallel execution.

pub mod consensus;
pub mod data;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod pairs;
pub mod pca;
pub mod rashomon;

pub use data::{load_dataset, mask_concepts, Dataset, DatasetFormat};
pub use embedding::{
    read_embedding, standardize_embedding, write_embedding, Embedding, Provenance,
};
pub use engine::{optimize_embedding, LossBreakdown, LossConfig, LossRecord};
pub use error::{Error, Result};
pub use graph::{build_knn_graph, read_graph_tsv, write_graph_tsv, NeighborGraph};
pub use pairs::{sample_pairs, sample_pairs_with_neighbors, PairCounts, PairSets};
pub use pca::{pca_project, PcaProjection};

//! Rank-based optimization of face image quality labels.
//!
//! Baseline quality scores from any external scorer are rearranged using the
//! similarity of cluster-stratified mated pairs in an FR embedding space, then
//! distilled into a small embedding-to-quality regressor. Every scorer can be
//! evaluated with error-versus-reject curves on verification pairs.

pub mod cluster;
pub mod datamodel;
pub mod distill;
pub mod error;
pub mod eval;
pub mod pairing;
pub mod rankopt;
pub mod seed;
pub mod stats;
pub mod synth;

pub use cluster::{cluster_identity, kmeans, ClusterAssignment};
pub use datamodel::{validate_bundle, DatasetBundle, EmbeddingRecord, OptimConfig, QualityTable};
pub use distill::{l1_loss, normalize_scores, predict_quality, train_regressor, RegressorModel, TrainConfig};
pub use error::{Error, Result};
pub use eval::{build_verification_pairs, calibrate_threshold, compute_fnmr, erc_auc, erc_curve, ErcCurve};
pub use pairing::{cosine_similarity, sample_mated_pairs, MatedPair, MatedPairList};
pub use rankopt::{build_rank_table, mean_pair_rank, optimize_labels, update_index, OptimizedQualityTable, RankTable};
pub use synth::{generate_synthetic, SynthConfig};

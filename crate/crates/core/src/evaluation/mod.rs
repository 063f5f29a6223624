//! Fooling matrices, generalization curves, cluster extraction and Fréchet
//! distances.

mod accuracy;
mod clusters;
mod curve;
mod frechet;
mod matrix;

pub use accuracy::{
    accuracy_balanced, accuracy_on_generated, accuracy_on_real, balanced_generator_seed,
    fraction_flagged, BalancedAccuracy, Scorer, DECISION_THRESHOLD, SCORE_CHUNK,
};
pub use clusters::{
    extract_clusters, extract_clusters_exhaustive, fooling_relation, ClusterReport,
};
pub use curve::{generalization_curve, CurvePoint, CurveSetup, GeneralizationCurve};
pub use frechet::{frechet_distance, frechet_from_features, Embedder, FrechetScore, FRECHET_RIDGE};
pub use matrix::{cross_fooling_matrix, matrix_generator_seed, FoolingMatrix, FOOLED_THRESHOLD};

//! Diagnostics over trained checkpoints: window embeddings, K-means purity,
//! predictor-matrix geometry, pathwise invariance, the loss-decomposition
//! identity, and the report files that collect them.

pub mod diagnostics;
pub mod embeddings;
pub mod kmeans;
pub mod report;

pub use diagnostics::{
    centroid_action, deterministic_subset, loss_decomposition_check, m_diagnostics,
    pathwise_invariance, CentroidAction, MatrixDiagnostics, PredictorMatrix,
    RegenerationParams,
};
pub use embeddings::{
    embed_split, export_embeddings, import_embeddings, EmbeddingSet, WindowSide,
};
pub use kmeans::{kmeans, purity, KmeansResult};
pub use report::{
    full_scale_reference, read_json_report, read_text_report, thresholds, write_json_report,
    write_text_report, AnalysisReport, REPORT_CLUSTERS, REPORT_VERSION,
};

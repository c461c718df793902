//! Similarity matrices, triangle statistics, MSE studies and image
//! generation, plus the sweeps that produce them on disk.

mod images;
mod matrix;
mod mse;
mod store;
mod sweep;

pub use images::{generate_images, render_pairs, write_pairs, ImagePair};
pub use matrix::{
    holes, in_lower_region, matrix_key, matrix_to_csv, parse_matrix_csv, triangle_stat,
    triangle_stat_skipping_holes, Cell, Grid, MatrixRegime, SimilarityMatrix, TriangleStat,
    CSV_CORNER, HOLE,
};
pub use mse::{
    mse_statistics, mse_table_from_entries, pair_samples, MseEntry, MseScope, MseStatsTable,
    MseStudy, PairMse, Sample, StitchPair, Summary, MSE_COLUMNS,
};
pub use store::{
    load_stitched, read_entry, save_stitch, write_csv, EntryManifest, ExperimentDir, NetRef,
    RESOLVED_CONFIG,
};
pub use sweep::{
    regime_tag, reproduce_entry, run_full_sweep, run_image_generation, run_mse_study,
    similarity_matrix, stitch_hyperparams, zoo_eval, zoo_train, MatrixSummary, MseReport,
    PairComparison, SweepContext, ZooRow,
};

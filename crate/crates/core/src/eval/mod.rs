//! Detection mAP, breakdowns, median smoothing, ablation suites and
//! attention export.

mod ablation;
mod attention;
mod io;
mod metrics;

pub use ablation::{
    format_ablation_csv, mean_map, run_ablation, score_asc, score_ste, write_ablation_csv, AblationArm, AblationConfig,
    AblationData, AblationResult, AblationSuite,
};
pub use attention::{export_attention, format_matrix, mean_row_entropy, parse_matrix, read_matrix, AttentionExport};
pub use io::{parse_scored_csv, read_scored_csv, serialize_scored_csv, write_scored_csv};
pub use metrics::{
    average_precision, breakdown, map_over_videos, mean_ap, pooled_ap, smooth_scores, ApMode, BreakdownReport,
    FaceCountBucket, FaceSizeBucket, ScoredDetection,
};

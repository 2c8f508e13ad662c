//! Evaluation: inserted-region detection, point hit rates, region-limited
//! pixel metrics, warp error and the benchmark harness.

pub mod bench;
pub mod detect;
pub mod ewarp;
pub mod region;

pub use bench::{
    ablation_grid, aggregate, background_region, evaluate_record, insert, reports_csv, reports_table, run_pointbench,
    Aggregate, BenchConfig, EvalReport, GridCell, Insertion, RecordRow,
};
pub use detect::{detect_inserted_region, point_accuracy, PointAccuracy};
pub use ewarp::{estimate_flow, ewarp, FlowField, Flows};
pub use region::{psnr_from_mse, region_metrics, RegionMetrics};

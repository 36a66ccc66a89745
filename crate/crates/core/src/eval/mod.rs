//! Metrics, the one-step identity sweep, sampling and experiment drivers.

mod experiments;
mod metrics;
mod sampling;
mod theorem;

pub use experiments::{
    ablate, bank_bench, bench_config, compare_std_cd, median, paired_t_test, write_ablation_csv,
    AblationRow, AblationSpec, BenchReport, ComparisonRow, ComparisonSummary, ComparisonTable,
};
pub use metrics::{random_directions, sliced_wasserstein, sliced_wasserstein_with, wasserstein_1d};
pub use sampling::{
    consistency_gap, consistency_gap_for, endpoint_eval, endpoint_eval_for, jump_positions,
    start_batch, student_sample, teacher_rollout_batch, write_endpoint_csv, EndpointRow,
    StartBatch,
};
pub use theorem::{verify_theorem, TheoremReport, TheoremRow, TheoremSweep, TheoremTeacher};

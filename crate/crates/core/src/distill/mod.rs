//! The distillation loop: losses, target-step sampling, the bank-driven
//! training iteration, the forward-noised baseline and run orchestration.

mod config;
mod losses;
mod report;
mod run;
mod trainer;

pub use config::{
    DistillConfig, EvalConfig, LabConfig, LrSchedule, Mode, ModelConfig, RRule, ScheduleConfig,
    TeacherConfig,
};
pub use losses::{
    adv_losses, draw_target_value, hinge_losses, sample_r, sample_target_s, std_forward, std_loss,
    AdvTerm, StdInputs, StdTerm,
};
pub use report::{Branch, IterationRecord, RunReport, Snapshot, METRICS_HEADER};
pub use run::{resume, run, train_until, RunArtifacts};
pub(crate) use trainer::normal_matrix;
pub use trainer::{build_teacher, Trainer};

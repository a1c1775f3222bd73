//! Agreement metrics, significance testing, cross-validation and attention
//! reports.

mod cv;
mod metrics;
mod report;

pub use cv::{cross_validate, derive_seed, CvSummary, FoldResult, FoldTrainer, NeuralTrainer, Significance};
pub use metrics::{paired_t_test, qwk, TTest, TTestFlag};
pub use report::{attention_report, AttentionRow};

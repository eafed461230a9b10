//! Evaluation: per-group accuracy, representation alignment, plug-in
//! mutual information and the worst-group gap bound.

pub mod accuracy;
pub mod alignment;
pub mod bound;
pub mod mi;
pub mod report;

pub use accuracy::{accuracy_from_logits, argmax, group_accuracy, predictions, AccuracyReport, GroupStat, EVAL_BLOCK};
pub use alignment::{alignment_loss, class_alignment, RepresentationView};
pub use bound::{bound_from_view, check_bound, BoundConfig, BoundReport, ClassBound, GlobalBound};
pub use mi::{fit_mutual_information, mutual_information, standardize, MiConfig, MiFit};
pub use report::{evaluate_split, read_metric_rows, write_metric_rows, EvalOptions, MetricRow, MetricsReport};

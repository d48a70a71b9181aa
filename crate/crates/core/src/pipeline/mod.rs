//! Training loop, loss, and the engineering-metric evaluation suite.

mod evaluate;
mod loss;
mod metrics;
mod train;

pub use evaluate::{
    build_queries, eval_cloud, evaluate, evaluate_with, flow_shear_variable, EvalConfig,
    PointSource, SurfaceQueries, VolumeQueries,
};
pub use loss::{compute_loss, loss_gradients, LossReport};
pub use metrics::{
    integrate_drag, r_squared, relative_l2, relative_l2_printed_form, spearman_rho, AggregateRow,
    MetricsReport, SampleMetrics, TrendRow, VarMetric,
};
pub use train::{train, CheckpointFn, EpochRecord, ResumeState, TrainConfig, TrainResult};

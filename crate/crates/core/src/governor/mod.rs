//! Deadline-aware frequency selection and evaluation metrics.

mod govern;
mod metrics;
mod search;

pub use govern::{
    evaluate, govern_loop, steps_from_csv, steps_to_csv, DeadlineChange, DeadlineSchedule,
    Disturbance, GovernConfig, GovernError, GovernStep, TokenContext, GOVERN_CSV_HEADER,
};
pub use metrics::{mape, ppw, qos, EvalReport, MetricError};
pub use search::{greedy_search, max_frequency, oracle_search, search, GovernorDecision, Policy};

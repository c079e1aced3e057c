//! File formats, configuration, parallel evaluation and reports for
//! [`protoshot_core`].

pub mod config;
pub mod eval;
pub mod format;
pub mod report;

pub use config::{DataSource, RunConfig, Settings};
pub use eval::{run_eval, run_eval_on, EvalError, EvalOptions};
pub use report::{emit_report, read_report, EvalReport};

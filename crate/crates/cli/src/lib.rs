//! Command line front end: pair generation, single registrations,
//! benchmark sweeps and reports.

pub mod bench;
pub mod config;
pub mod error;
pub mod genpairs;
pub mod register;
pub mod report;

pub use bench::{cmd_bench, run_bench, BenchRow, BenchSummary};
pub use config::{load_bench_config, load_pipeline_config, BenchConfig, Method, Profile};
pub use error::{CliError, CliResult};
pub use genpairs::cmd_genpairs;
pub use register::cmd_register;
pub use report::cmd_report;

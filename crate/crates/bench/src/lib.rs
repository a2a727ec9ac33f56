//! Benchmarks and checkers for the `mcsched` kernel.

pub mod oracle;
pub mod report;
pub mod rq_oracle;
pub mod scenarios;

pub use oracle::{check_snapshot, oracle_check_work_conservation, Violation};
pub use report::{
    export_report, run_benchmark, Bench, BenchmarkReport, BenchmarkSpec, Format, Metric, Summary,
};

//! Running benchmarks and exporting their reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mcsched::kernel::KernelStats;
use mcsched::platform::{run_with, TraceKind};
use mcsched::{Backend, KernelConfig, KernelError, RunOptions, Strategy, ThreadId, Tick, Trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenarios;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Bench {
    Yield,
    Flags,
    Preempt,
    Matmul,
}

impl Bench {
    pub const ALL: [Bench; 4] = [Bench::Yield, Bench::Flags, Bench::Preempt, Bench::Matmul];

    pub fn name(self) -> &'static str {
        match self {
            Bench::Yield => "yield",
            Bench::Flags => "flags",
            Bench::Preempt => "preempt",
            Bench::Matmul => "matmul",
        }
    }
}

impl fmt::Display for Bench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: Bench,
    pub strategy: Strategy,
    pub num_cores: usize,
    pub iterations: u32,
    /// Matrix sizes for `matmul`; ignored otherwise.
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn new(name: Bench, strategy: Strategy, num_cores: usize) -> Self {
        Self {
            name,
            strategy,
            num_cores,
            iterations: 1000,
            sizes: (1..=8).map(|i| i * 10).collect(),
            seed: 0,
        }
    }

    pub fn config(&self) -> KernelConfig {
        KernelConfig::new(self.num_cores, self.strategy)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.config().validate()?;
        if self.iterations == 0 {
            return Err(BenchError::Spec("iterations must be at least 1".into()));
        }
        if self.name == Bench::Matmul {
            if self.sizes.is_empty() {
                return Err(BenchError::Spec("no matrix sizes".into()));
            }
            if let Some(n) = self.sizes.iter().find(|&&n| n == 0 || n % 2 != 0) {
                return Err(BenchError::Spec(format!(
                    "matrix size {n} is not a positive even number"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] KernelError),
    #[error("invalid benchmark: {0}")]
    Spec(String),
    #[error("{scenario}: {source}")]
    Run {
        scenario: String,
        #[source]
        source: mcsched::platform::RunError,
    },
    #[error("{scenario}: product differs from the reference by {error:e}")]
    WrongProduct { scenario: String, error: f64 },
    #[error("{scenario}: expected {expected} iteration marks, found {found}")]
    Marks {
        scenario: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stddev: f64,
}

impl Summary {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stddev: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Totals of one scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub scenario: String,
    pub backend: Backend,
    pub makespan: Tick,
    pub kernel_stats: KernelStats,
    /// Matmul only: largest relative error against the reference product.
    pub max_rel_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub benchmark: Bench,
    pub strategy: Strategy,
    pub cores: usize,
    pub iterations: u32,
    pub metrics: Vec<Metric>,
    pub runs: Vec<RunTotals>,
}

impl BenchmarkReport {
    pub fn metric(&self, name: &str) -> Option<Summary> {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.summary)
    }
}

/// Per-iteration measurements, delimited by the lead thread's marks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Windows {
    pub ticks: Vec<f64>,
    pub context_switches: Vec<f64>,
    pub migrations: Vec<f64>,
    pub ipis: Vec<f64>,
    pub scheduler_invocations: Vec<f64>,
}

pub fn windows(trace: &Trace, lead: ThreadId) -> Windows {
    let marks: Vec<(usize, Tick)> = trace
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == TraceKind::Mark && r.from == Some(lead))
        .map(|(i, r)| (i, r.t))
        .collect();
    let mut w = Windows::default();
    for pair in marks.windows(2) {
        let (start, t0) = pair[0];
        let (end, t1) = pair[1];
        let count = |kind| {
            trace.records[start..end]
                .iter()
                .filter(|r| r.kind == kind)
                .count() as f64
        };
        w.ticks.push(t1.saturating_sub(t0) as f64);
        w.context_switches.push(count(TraceKind::ContextSwitch));
        w.migrations.push(count(TraceKind::Migration));
        w.ipis.push(count(TraceKind::Ipi));
        w.scheduler_invocations.push(count(TraceKind::Schedule));
    }
    w
}

fn run_checked(
    config: &KernelConfig,
    sc: mcsched::Scenario,
    backend: Backend,
    seed: u64,
    iterations: u32,
) -> Result<(Trace, Windows), BenchError> {
    let name = sc.name.clone();
    let opts = RunOptions {
        snapshots: false,
        ..RunOptions::default()
    };
    let trace =
        run_with(config.clone(), sc, backend, seed, &opts).map_err(|source| BenchError::Run {
            scenario: name.clone(),
            source,
        })?;
    let w = windows(&trace, ThreadId::new(0));
    if w.ticks.len() != iterations as usize {
        return Err(BenchError::Marks {
            scenario: name,
            expected: iterations as usize,
            found: w.ticks.len(),
        });
    }
    Ok((trace, w))
}

fn count_metrics(suffix: &str, w: &Windows) -> Vec<Metric> {
    let m = |name: &str, v: &[f64]| Metric {
        name: format!("{name}{suffix}"),
        summary: Summary::of(v),
    };
    vec![
        m("makespan_ticks", &w.ticks),
        m("context_switches", &w.context_switches),
        m("migrations", &w.migrations),
        m("ipis", &w.ipis),
        m("scheduler_invocations", &w.scheduler_invocations),
    ]
}

fn totals(
    trace: &Trace,
    scenario: String,
    backend: Backend,
    max_rel_error: Option<f64>,
) -> RunTotals {
    RunTotals {
        scenario,
        backend,
        makespan: trace.makespan(),
        kernel_stats: trace.kernel_stats,
        max_rel_error,
    }
}

/// Workers a matmul run uses on `cores` cores.
pub fn matmul_workers(cores: usize) -> usize {
    if cores == 1 {
        0
    } else {
        2
    }
}

/// Runs the benchmark `iterations` times within one scenario and summarizes
/// each metric over the iterations.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport, BenchError> {
    spec.validate()?;
    let config = spec.config();
    let mut report = BenchmarkReport {
        benchmark: spec.name,
        strategy: spec.strategy,
        cores: spec.num_cores,
        iterations: spec.iterations,
        metrics: Vec::new(),
        runs: Vec::new(),
    };
    let sc = match spec.name {
        Bench::Yield => scenarios::yield_loop(spec.iterations),
        Bench::Flags => scenarios::flags(spec.iterations),
        Bench::Preempt => scenarios::preempt(spec.iterations),
        Bench::Matmul => {
            let workers = matmul_workers(spec.num_cores);
            for &n in &spec.sizes {
                let suffix = format!("[n={n}]");
                for backend in [Backend::Deterministic, Backend::HostParallel] {
                    let (sc, product) = scenarios::matmul(n, workers, spec.iterations, spec.seed);
                    let name = sc.name.clone();
                    let (trace, w) = run_checked(&config, sc, backend, spec.seed, spec.iterations)?;
                    let error = product.max_rel_error();
                    if error > 1e-9 {
                        return Err(BenchError::WrongProduct {
                            scenario: name,
                            error,
                        });
                    }
                    match backend {
                        Backend::Deterministic => report.metrics.extend(count_metrics(&suffix, &w)),
                        Backend::HostParallel => report.metrics.push(Metric {
                            name: format!("wall_ns{suffix}"),
                            summary: Summary::of(&w.ticks),
                        }),
                    }
                    report.runs.push(totals(&trace, name, backend, Some(error)));
                }
            }
            return Ok(report);
        }
    };
    let name = sc.name.clone();
    let (trace, w) = run_checked(
        &config,
        sc,
        Backend::Deterministic,
        spec.seed,
        spec.iterations,
    )?;
    report.metrics = count_metrics("", &w);
    report
        .runs
        .push(totals(&trace, name, Backend::Deterministic, None));
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Error)]
#[error("writing {}: {source}", path.display())]
pub struct ExportError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

pub const CSV_HEADER: [&str; 7] = [
    "benchmark",
    "strategy",
    "cores",
    "iterations",
    "metric",
    "mean",
    "stddev",
];

pub fn write_csv(report: &BenchmarkReport, out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for m in &report.metrics {
        w.write_record([
            report.benchmark.name().to_string(),
            report.strategy.name().to_string(),
            report.cores.to_string(),
            report.iterations.to_string(),
            m.name.clone(),
            m.summary.mean.to_string(),
            m.summary.stddev.to_string(),
        ])?;
    }
    w.flush()
}

pub fn export_report(
    report: &BenchmarkReport,
    format: Format,
    path: &Path,
) -> Result<(), ExportError> {
    let err = |source| ExportError {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(err)?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(report, &mut out).map_err(err)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, report).map_err(|e| err(e.into()))?;
            out.write_all(b"\n").map_err(err)?;
        }
    }
    out.flush().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant() {
        let s = Summary::of(&[4.0, 4.0, 4.0]);
        assert_eq!(
            s,
            Summary {
                mean: 4.0,
                stddev: 0.0
            }
        );
    }

    #[test]
    fn summary_sample_stddev() {
        let s = Summary::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[]), Summary::default());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = BenchmarkSpec::new(Bench::Flags, Strategy::SingleOptimized, 2);
        assert!(matches!(spec.validate(), Err(BenchError::Config(_))));
        spec.num_cores = 1;
        spec.iterations = 0;
        assert!(matches!(spec.validate(), Err(BenchError::Spec(_))));
        let mut spec = BenchmarkSpec::new(Bench::Matmul, Strategy::Dynamic, 2);
        spec.sizes = vec![10, 15];
        assert!(matches!(spec.validate(), Err(BenchError::Spec(_))));
    }
}

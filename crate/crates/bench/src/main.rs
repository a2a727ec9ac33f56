use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mcsched::{run, Backend, KernelConfig, Scenario, Strategy};
use mcsched_bench::{
    export_report, oracle, run_benchmark, scenarios, Bench, BenchmarkSpec, Format,
};

#[derive(Parser)]
#[command(
    name = "mcsched",
    version,
    about = "Benchmarks and checks for the mcsched kernel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Single,
    Dynamic,
    Realloc,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Single => Strategy::SingleOptimized,
            StrategyArg::Dynamic => Strategy::Dynamic,
            StrategyArg::Realloc => Strategy::Reallocation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckKind {
    WorkConservation,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceScenario {
    Yield,
    Flags,
    Preempt,
    Inversion,
    Pinned,
    Matmul,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark and export its report.
    Bench {
        name: Bench,
        #[arg(long, value_enum, default_value = "dynamic")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 2)]
        cores: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Matrix sizes for matmul.
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80")]
        sizes: Vec<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuzz the kernel and report violations. Exits with 1 if any are found.
    Check {
        kind: CheckKind,
        #[arg(long, default_value_t = 1000)]
        sequences: usize,
        #[arg(long, default_value_t = 2)]
        cores: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "dynamic")]
        strategy: StrategyArg,
    },
    /// Run a scenario on the deterministic backend and write its trace as JSON lines.
    Trace {
        scenario: TraceScenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        cores: usize,
        #[arg(long, value_enum, default_value = "dynamic")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 10)]
        iterations: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn trace_scenario(s: TraceScenario, iterations: u32, seed: u64) -> Scenario {
    match s {
        TraceScenario::Yield => scenarios::yield_loop(iterations),
        TraceScenario::Flags => scenarios::flags(iterations),
        TraceScenario::Preempt => scenarios::preempt(iterations),
        TraceScenario::Inversion => scenarios::inversion(),
        TraceScenario::Pinned => oracle::pinned_adversary(),
        TraceScenario::Matmul => scenarios::matmul(20, 2, iterations, seed).0,
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Bench {
            name,
            strategy,
            cores,
            iterations,
            seed,
            sizes,
            format,
            out,
        } => {
            let spec = BenchmarkSpec {
                name,
                strategy: strategy.into(),
                num_cores: cores,
                iterations,
                sizes,
                seed,
            };
            let report = run_benchmark(&spec)?;
            export_report(&report, format, &out)?;
            eprintln!(
                "wrote {} metrics to {}",
                report.metrics.len(),
                out.display()
            );
        }
        Command::Check {
            kind: CheckKind::WorkConservation,
            sequences,
            cores,
            seed,
            strategy,
        } => {
            let config = KernelConfig::new(cores, strategy.into());
            config.validate()?;
            let violations = oracle::oracle_check_work_conservation(&config, sequences, seed);
            for v in &violations {
                println!("{v}");
            }
            println!("{sequences} sequences, {} violations", violations.len());
            if !violations.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Trace {
            scenario,
            seed,
            cores,
            strategy,
            iterations,
            out,
        } => {
            let config = KernelConfig::new(cores, strategy.into());
            let trace = run(
                config,
                trace_scenario(scenario, iterations, seed),
                Backend::Deterministic,
                seed,
            )?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            trace
                .write_jsonl(BufWriter::new(file))
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

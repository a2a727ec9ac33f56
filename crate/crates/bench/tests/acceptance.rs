//! Acceptance criteria. Prints one line per criterion and fails if any does.

use std::time::{Duration, Instant};

use mcsched::async_bridge::{AsyncSignal, Executor};
use mcsched::platform::TraceKind;
use mcsched::{
    run, AffinityMask, Backend, CoreId, KernelConfig, RunOutcome, Scenario, StepContext, Strategy,
    Syscall, ThreadId, Trace,
};
use mcsched_bench::oracle::{random_scenario, run_for_check};
use mcsched_bench::report::matmul_workers;
use mcsched_bench::rq_oracle::check_exhaustive;
use mcsched_bench::{
    oracle_check_work_conservation, run_benchmark, scenarios, Bench, BenchmarkSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Maker = (&'static str, fn() -> Scenario);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    ensure(start.elapsed() < limit, || {
        format!("took {:?}, limit {limit:?}", start.elapsed())
    })
}

fn work_conservation() -> Outcome {
    let start = Instant::now();
    let mut counts = Vec::new();
    for n in 1..=3 {
        let v =
            oracle_check_work_conservation(&KernelConfig::new(n, Strategy::Dynamic), 1000, 2024);
        ensure(v.is_empty(), || {
            format!("N={n}: {} violations, first {}", v.len(), v[0])
        })?;
        counts.push(format!("N={n}: 0/1000"));
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{} in {:?}", counts.join(", "), start.elapsed()))
}

fn switch_lines(strategy: Strategy, sc: Scenario, seed: u64) -> Result<Vec<String>, String> {
    run(
        KernelConfig::new(1, strategy),
        sc,
        Backend::Deterministic,
        seed,
    )
    .map(|t| t.switch_lines())
    .map_err(|e| format!("{strategy:?}: {e}"))
}

fn transparency() -> Outcome {
    let benches: Vec<Maker> = vec![
        ("yield", || scenarios::yield_loop(200)),
        ("flags", || scenarios::flags(200)),
        ("preempt", || scenarios::preempt(200)),
        ("matmul", || {
            scenarios::matmul(16, matmul_workers(1), 20, 1).0
        }),
        ("matmul-workers", || scenarios::matmul(16, 2, 20, 1).0),
    ];
    for (name, make) in &benches {
        let a = switch_lines(Strategy::SingleOptimized, make(), 5)?;
        let b = switch_lines(Strategy::Dynamic, make(), 5)?;
        ensure(!a.is_empty() && a == b, || {
            format!("{name}: switch traces differ")
        })?;
    }
    for seq in 0..100u64 {
        let make = || random_scenario(&mut ChaCha8Rng::seed_from_u64(seq), 1);
        let trace = |strategy| {
            run_for_check(&KernelConfig::new(1, strategy), make(), seq)
                .map(|t| t.switch_lines())
                .map_err(|e| format!("fuzz {seq}: {e}"))
        };
        let (a, b) = (trace(Strategy::SingleOptimized)?, trace(Strategy::Dynamic)?);
        ensure(a == b, || {
            format!("fuzz scenario {seq}: switch traces differ")
        })?;
    }
    Ok(format!(
        "{} benchmark scenarios and 100 fuzz scenarios identical",
        benches.len()
    ))
}

fn min_host_wall(strategy: Strategy, runs: usize) -> Result<u64, String> {
    (0..runs)
        .map(|_| {
            run(
                KernelConfig::new(1, strategy),
                scenarios::preempt(1000),
                Backend::HostParallel,
                0,
            )
            .map(|t| t.makespan())
            .map_err(|e| e.to_string())
        })
        .try_fold(u64::MAX, |m, t| t.map(|t| m.min(t)))
}

fn preempt_overhead() -> Outcome {
    let det = |strategy| {
        run(
            KernelConfig::new(1, strategy),
            scenarios::preempt(1000),
            Backend::Deterministic,
            0,
        )
        .map_err(|e| e.to_string())
    };
    let (single, dynamic) = (det(Strategy::SingleOptimized)?, det(Strategy::Dynamic)?);
    let (s, d) = (single.kernel_stats, dynamic.kernel_stats);
    ensure(d.preemptions >= 1000, || {
        format!("only {} preemptions", d.preemptions)
    })?;
    ensure(d.rq_inserts == s.rq_inserts + d.preemptions, || {
        format!(
            "inserts dynamic {} single {} preemptions {}",
            d.rq_inserts, s.rq_inserts, d.preemptions
        )
    })?;
    ensure(single.switch_lines() == dynamic.switch_lines(), || {
        "switch traces differ".into()
    })?;
    // Minimum of repeated runs, to keep scheduling noise of the host out.
    let ws = min_host_wall(Strategy::SingleOptimized, 15)?;
    let wd = min_host_wall(Strategy::Dynamic, 15)?;
    let overhead = wd as f64 / ws as f64 - 1.0;
    ensure(overhead < 0.5, || {
        format!(
            "host overhead {:.1}% (single {ws} ns, dynamic {wd} ns)",
            overhead * 100.0
        )
    })?;
    Ok(format!(
        "{} preemptions, +{} inserts, host overhead {:.1}%",
        d.preemptions,
        d.rq_inserts - s.rq_inserts,
        overhead * 100.0
    ))
}

fn strategy_comparison() -> Outcome {
    let report = |strategy| {
        run_benchmark(&BenchmarkSpec::new(Bench::Flags, strategy, 2)).map_err(|e| e.to_string())
    };
    let (d, r) = (report(Strategy::Dynamic)?, report(Strategy::Reallocation)?);
    let (md, mr) = (d.runs[0].makespan, r.runs[0].makespan);
    let rebalances = r.runs[0].kernel_stats.rebalances;
    ensure(md <= mr, || {
        format!("makespan dynamic {md} > reallocation {mr}")
    })?;
    ensure(rebalances > 0, || "no rebalances".into())?;
    Ok(format!(
        "makespan dynamic {md} <= reallocation {mr} ticks, {rebalances} rebalances"
    ))
}

fn matmul_speedup() -> Outcome {
    let start = Instant::now();
    let spec = |cores| BenchmarkSpec {
        iterations: 1000,
        ..BenchmarkSpec::new(Bench::Matmul, Strategy::Dynamic, cores)
    };
    let seq = run_benchmark(&spec(1)).map_err(|e| e.to_string())?;
    let par = run_benchmark(&spec(2)).map_err(|e| e.to_string())?;
    for run in seq.runs.iter().chain(&par.runs) {
        let err = run.max_rel_error.unwrap_or(f64::INFINITY);
        ensure(err <= 1e-9, || {
            format!("{}: relative error {err:e}", run.scenario)
        })?;
    }
    let wall = |r: &mcsched_bench::BenchmarkReport| {
        r.metric("wall_ns[n=80]")
            .map(|s| s.mean)
            .unwrap_or(f64::NAN)
    };
    let speedup = wall(&seq) / wall(&par);
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    within(start, Duration::from_secs(120))?;
    ensure(speedup >= 1.6, || {
        format!("speedup at n=80 is {speedup:.2}x (host has {cpus} CPUs)")
    })?;
    Ok(format!(
        "speedup at n=80 is {speedup:.2}x, products within 1e-9"
    ))
}

fn finish_order(disable_pi: bool) -> Result<Vec<u32>, String> {
    let mut config = KernelConfig::new(1, Strategy::SingleOptimized);
    config.faults.disable_priority_inheritance = disable_pi;
    let trace = run(config, scenarios::inversion(), Backend::Deterministic, 0)
        .map_err(|e| e.to_string())?;
    Ok(trace
        .of_kind(TraceKind::Mark)
        .filter_map(|r| r.get_u64("label"))
        .map(|l| l as u32)
        .collect())
}

fn priority_inheritance() -> Outcome {
    let pos = |order: &[u32], t: u32| order.iter().position(|&x| x == t);
    let with = finish_order(false)?;
    let without = finish_order(true)?;
    ensure(
        pos(&with, 2) < pos(&with, 1) && pos(&with, 1).is_some(),
        || format!("with PI: {with:?}"),
    )?;
    ensure(
        pos(&without, 1) < pos(&without, 2) && pos(&without, 1).is_some(),
        || format!("without PI: {without:?}"),
    )?;
    Ok(format!(
        "finish order with PI {with:?}, without {without:?}"
    ))
}

fn startup_ordering() -> Outcome {
    let sc = Scenario::new("one").script(5, vec![Syscall::Compute(5)]);
    let trace = run(
        KernelConfig::new(2, Strategy::Dynamic),
        sc,
        Backend::Deterministic,
        0,
    )
    .map_err(|e| e.to_string())?;
    let (c0, c1) = (CoreId::new(0), CoreId::new(1));
    let idle_creates: Vec<_> = trace
        .on_core(c0)
        .filter(|r| r.kind == TraceKind::ThreadCreate && r.data.get("idle") == Some(&true.into()))
        .collect();
    ensure(idle_creates.len() == 2, || {
        format!("{} idle threads created", idle_creates.len())
    })?;
    let boot_steps = [
        TraceKind::ThreadCreate,
        TraceKind::CoreStart,
        TraceKind::SchedIrqEnable,
        TraceKind::Schedule,
    ];
    let core0: Vec<_> = trace
        .on_core(c0)
        .map(|r| r.kind)
        .filter(|k| boot_steps.contains(k))
        .collect();
    let start = core0
        .iter()
        .position(|&k| k == TraceKind::CoreStart)
        .ok_or("core 1 never started")?;
    ensure(
        core0[..start].iter().all(|&k| k == TraceKind::ThreadCreate),
        || format!("core0: {core0:?}"),
    )?;
    ensure(core0[start..start + 3] == boot_steps[1..], || {
        format!("core0: {core0:?}")
    })?;
    let core1: Vec<_> = trace.on_core(c1).map(|r| r.kind).take(3).collect();
    ensure(
        core1
            == [
                TraceKind::Boot,
                TraceKind::SchedIrqEnable,
                TraceKind::Schedule,
            ],
        || format!("core1: {core1:?}"),
    )?;
    Ok("core0 create, start, irq, schedule; core1 boot, irq, schedule".into())
}

fn runqueue_oracle() -> Outcome {
    let start = Instant::now();
    let stats = check_exhaustive(6, 4, &[1, 2, 3])?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "{} sequences over {} states agree",
        stats.sequences, stats.states
    ))
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    for strategy in [Strategy::Dynamic, Strategy::Reallocation] {
        for cores in 1..=3 {
            for seed in 0..5u64 {
                let makers: Vec<Box<dyn Fn() -> Scenario>> = vec![
                    Box::new(|| scenarios::flags(30)),
                    Box::new(|| scenarios::preempt(30)),
                    Box::new(scenarios::inversion),
                    Box::new(move || scenarios::matmul(8, matmul_workers(cores), 5, seed).0),
                    Box::new(move || random_scenario(&mut ChaCha8Rng::seed_from_u64(seed), cores)),
                ];
                for make in &makers {
                    let config = KernelConfig::new(cores, strategy);
                    let a = run_for_check(&config, make(), seed)
                        .map_err(|e| e.to_string())?
                        .to_jsonl();
                    let b = run_for_check(&config, make(), seed)
                        .map_err(|e| e.to_string())?
                        .to_jsonl();
                    ensure(a == b, || {
                        format!("{strategy:?} N={cores} seed {seed}: traces differ")
                    })?;
                    runs += 1;
                }
            }
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("{runs} runs repeated byte for byte"))
}

fn firer(signal: &AsyncSignal) -> impl FnMut(&mut StepContext<'_>) -> Syscall + Send {
    let signal = signal.clone();
    let mut fired = false;
    move |_| {
        if std::mem::replace(&mut fired, true) {
            Syscall::Exit
        } else {
            signal.fire();
            Syscall::Compute(1)
        }
    }
}

fn asleep_check(trace: &Trace, tid: ThreadId) -> Result<(), String> {
    let mut asleep = false;
    for r in &trace.records {
        match r.kind {
            TraceKind::Sleep if r.from == Some(tid) => asleep = true,
            TraceKind::Wake if r.to == Some(tid) => asleep = false,
            TraceKind::ContextSwitch if r.to == Some(tid) && asleep => {
                return Err(format!("{tid} ran while asleep at t={}", r.t))
            }
            _ => {}
        }
    }
    Ok(())
}

fn async_bridge() -> Outcome {
    let start = Instant::now();
    let exec = ThreadId::new(0);
    // (tasks, index of the fired task, expected polls per task)
    let cases: [(usize, Option<usize>, &[u64]); 3] =
        [(1, None, &[1]), (1, Some(0), &[2]), (2, Some(0), &[2, 1])];
    for (tasks, fired, expected) in cases {
        let signals: Vec<AsyncSignal> = (0..tasks).map(|_| AsyncSignal::new()).collect();
        let mut ex = Executor::new();
        for s in &signals {
            if fired.is_some() {
                ex.spawn(s.wait());
            } else {
                ex.spawn(async {});
            }
        }
        let stats = ex.stats();
        let mut sc = Scenario::new("executor").thread(3, AffinityMask::ALL, ex);
        if let Some(f) = fired {
            sc = sc.thread(1, AffinityMask::ALL, firer(&signals[f]));
        }
        let trace = run(
            KernelConfig::new(1, Strategy::SingleOptimized),
            sc,
            Backend::Deterministic,
            0,
        )
        .map_err(|e| e.to_string())?;
        ensure(trace.outcome == RunOutcome::Parked, || {
            format!("outcome {:?}", trace.outcome)
        })?;
        let polls: Vec<u64> = stats.tasks().iter().map(|t| t.polls).collect();
        ensure(polls == expected, || {
            format!("polls {polls:?}, expected {expected:?}")
        })?;
        for t in stats.tasks() {
            ensure(t.polls <= 1 + t.wakes, || {
                format!("{} polls after {} wakes", t.polls, t.wakes)
            })?;
        }
        ensure(
            trace
                .of_kind(TraceKind::Sleep)
                .any(|r| r.from == Some(exec)),
            || "executor never slept".into(),
        )?;
        asleep_check(&trace, exec)?;
    }
    within(start, Duration::from_secs(1))?;
    Ok("poll counts [1], [2], [2, 1]; executor off-core while asleep".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("work conservation fuzz", work_conservation),
        ("single-core transparency", transparency),
        ("preempt overhead", preempt_overhead),
        ("dynamic vs reallocation", strategy_comparison),
        ("matmul speedup", matmul_speedup),
        ("priority inheritance", priority_inheritance),
        ("startup ordering", startup_ordering),
        ("runqueue oracle", runqueue_oracle),
        ("determinism", determinism),
        ("async bridge", async_bridge),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

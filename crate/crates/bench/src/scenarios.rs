//! Benchmark workloads.
//!
//! Every workload has a lead thread that emits `Mark(i)` at the start of
//! iteration `i` and a final `Mark(iterations)`, so each iteration is the
//! window between two consecutive marks.

use std::sync::{Arc, Mutex};

use mcsched::{
    AffinityMask, MutexId, Scenario, StepContext, Syscall, ThreadBody, ThreadId, WaitMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two equal-priority threads yielding to each other.
pub fn yield_loop(iterations: u32) -> Scenario {
    let mut lead = Vec::new();
    for i in 0..iterations {
        lead.push(Syscall::Mark(i));
        lead.push(Syscall::Yield);
    }
    lead.push(Syscall::Mark(iterations));
    let other = vec![Syscall::Yield; iterations as usize];
    Scenario::new("yield").script(3, lead).script(3, other)
}

/// Four threads in two pairs, each pair passing a flag back and forth.
pub fn flags(iterations: u32) -> Scenario {
    let mut sc = Scenario::new("flags");
    for pair in 0..2u8 {
        let a = ThreadId::new(2 * pair);
        let b = ThreadId::new(2 * pair + 1);
        let mut first = Vec::new();
        let mut second = Vec::new();
        for i in 0..iterations {
            if pair == 0 {
                first.push(Syscall::Mark(i));
            }
            first.push(Syscall::FlagsSet(b, 1));
            first.push(Syscall::FlagsWait(WaitMode::Any, 1));
            second.push(Syscall::FlagsWait(WaitMode::Any, 1));
            second.push(Syscall::FlagsSet(a, 1));
        }
        if pair == 0 {
            first.push(Syscall::Mark(iterations));
        }
        sc = sc.script(3, first).script(3, second);
    }
    sc
}

/// A low priority thread setting the flag a high priority thread waits on,
/// so that every iteration preempts it once. On several cores sets may
/// coalesce, so the high thread runs until it sees the stop bit.
pub fn preempt(iterations: u32) -> Scenario {
    let high = ThreadId::new(1);
    let mut low = Vec::new();
    for i in 0..iterations {
        low.push(Syscall::Mark(i));
        low.push(Syscall::FlagsSet(high, GO));
    }
    low.push(Syscall::Mark(iterations));
    low.push(Syscall::FlagsSet(high, STOP));
    let mut waiting = false;
    let waiter = move |cx: &mut StepContext<'_>| {
        if std::mem::replace(&mut waiting, true) && cx.take_flags().unwrap_or(STOP) & STOP != 0 {
            return Syscall::Exit;
        }
        Syscall::FlagsWait(WaitMode::Any, GO | STOP)
    };
    Scenario::new("preempt")
        .script(2, low)
        .thread(5, AffinityMask::ALL, waiter)
}

/// Classic priority inversion: L@1 holds the mutex H@5 wants while M@3 is
/// ready. Each thread marks its completion with its own id.
pub fn inversion() -> Scenario {
    let m = MutexId::new(0);
    let (l, mid, h) = (ThreadId::new(0), ThreadId::new(1), ThreadId::new(2));
    let low = vec![
        Syscall::Lock(m),
        Syscall::Wake(h),
        Syscall::Wake(mid),
        Syscall::Compute(50),
        Syscall::Unlock(m),
        Syscall::Mark(l.index() as u32),
    ];
    let middle = vec![
        Syscall::Sleep,
        Syscall::Compute(100),
        Syscall::Mark(mid.index() as u32),
    ];
    let high = vec![
        Syscall::Sleep,
        Syscall::Lock(m),
        Syscall::Compute(10),
        Syscall::Unlock(m),
        Syscall::Mark(h.index() as u32),
    ];
    Scenario::new("inversion")
        .with_mutexes(1)
        .script(1, low)
        .script(3, middle)
        .script(5, high)
}

/// Square matrices stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        Self {
            n,
            data: (0..n * n).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }
}

/// Rows `rows` of `a * b`, written into `out` (which holds just those rows).
pub fn multiply_rows(a: &Matrix, b: &Matrix, rows: std::ops::Range<usize>, out: &mut [f64]) {
    let n = a.n;
    for (oi, i) in rows.enumerate() {
        let row = &mut out[oi * n..(oi + 1) * n];
        row.fill(0.0);
        for k in 0..n {
            let aik = a.data[i * n + k];
            let brow = &b.data[k * n..(k + 1) * n];
            for (r, &bkj) in row.iter_mut().zip(brow) {
                *r += aik * bkj;
            }
        }
    }
}

/// Textbook triple loop.
pub fn multiply_reference(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.n;
    let mut c = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a.data[i * n + k] * b.data[k * n + j];
            }
            c.data[i * n + j] = s;
        }
    }
    c
}

/// Largest elementwise relative difference.
pub fn max_rel_error(x: &Matrix, y: &Matrix) -> f64 {
    x.data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

const GO: u16 = 1;
const STOP: u16 = 2;

struct MatmulShared {
    a: Matrix,
    b: Matrix,
    c: Mutex<Matrix>,
}

enum WorkerPhase {
    Wait,
    Work,
    Report,
}

struct Worker {
    shared: Arc<MatmulShared>,
    rows: std::ops::Range<usize>,
    coordinator: ThreadId,
    done_bit: u16,
    phase: WorkerPhase,
    scratch: Vec<f64>,
}

impl ThreadBody for Worker {
    fn step(&mut self, cx: &mut StepContext<'_>) -> Syscall {
        match self.phase {
            WorkerPhase::Wait => {
                self.phase = WorkerPhase::Work;
                Syscall::FlagsWait(WaitMode::Any, GO | STOP)
            }
            WorkerPhase::Work => {
                if cx.take_flags().unwrap_or(STOP) & STOP != 0 {
                    return Syscall::Exit;
                }
                let s = &self.shared;
                let n = s.a.n;
                multiply_rows(&s.a, &s.b, self.rows.clone(), &mut self.scratch);
                let mut c = s.c.lock().unwrap_or_else(|e| e.into_inner());
                c.data[self.rows.start * n..self.rows.end * n].copy_from_slice(&self.scratch);
                self.phase = WorkerPhase::Report;
                Syscall::Compute((self.rows.len() * n * n) as u64)
            }
            WorkerPhase::Report => {
                self.phase = WorkerPhase::Wait;
                Syscall::FlagsSet(self.coordinator, self.done_bit)
            }
        }
    }
}

struct Coordinator {
    shared: Arc<MatmulShared>,
    workers: Vec<ThreadId>,
    iterations: u32,
    script: std::vec::IntoIter<Syscall>,
    iteration: u32,
    scratch: Vec<f64>,
}

impl Coordinator {
    fn next_iteration(&mut self) -> Vec<Syscall> {
        let i = self.iteration;
        self.iteration += 1;
        if i == self.iterations {
            let mut calls = vec![Syscall::Mark(i)];
            calls.extend(self.workers.iter().map(|&w| Syscall::FlagsSet(w, STOP)));
            calls.push(Syscall::Exit);
            return calls;
        }
        if self.workers.is_empty() {
            let n = self.shared.a.n;
            return vec![Syscall::Mark(i), Syscall::Compute((n * n * n) as u64)];
        }
        let mut calls = vec![Syscall::Mark(i)];
        calls.extend(self.workers.iter().map(|&w| Syscall::FlagsSet(w, GO)));
        let all = (0..self.workers.len()).fold(0, |m, w| m | 1 << w);
        calls.push(Syscall::FlagsWait(WaitMode::All, all));
        calls
    }
}

impl ThreadBody for Coordinator {
    fn step(&mut self, _cx: &mut StepContext<'_>) -> Syscall {
        loop {
            if let Some(call) = self.script.next() {
                if matches!(call, Syscall::Compute(_)) {
                    // Sequential: the whole product on this thread.
                    let s = &self.shared;
                    let n = s.a.n;
                    multiply_rows(&s.a, &s.b, 0..n, &mut self.scratch);
                    s.c.lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .data
                        .copy_from_slice(&self.scratch);
                }
                return call;
            }
            self.script = self.next_iteration().into_iter();
        }
    }
}

/// Handle on the product a matmul scenario computes.
#[derive(Clone)]
pub struct MatmulResult {
    shared: Arc<MatmulShared>,
}

impl MatmulResult {
    pub fn product(&self) -> Matrix {
        self.shared
            .c
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Largest relative error against the triple-loop product.
    pub fn max_rel_error(&self) -> f64 {
        max_rel_error(
            &self.product(),
            &multiply_reference(&self.shared.a, &self.shared.b),
        )
    }
}

/// Multiplies two seeded `n`x`n` matrices `iterations` times.
///
/// With `workers == 0` the coordinator does all the work; otherwise the
/// rows of the first matrix are split evenly between the workers.
pub fn matmul(n: usize, workers: usize, iterations: u32, seed: u64) -> (Scenario, MatmulResult) {
    assert!(workers <= 15, "done bits are 16 bit");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
    let shared = Arc::new(MatmulShared {
        a: Matrix::random(n, &mut rng),
        b: Matrix::random(n, &mut rng),
        c: Mutex::new(Matrix::zeros(n)),
    });
    let coordinator = ThreadId::new(0);
    let worker_ids: Vec<ThreadId> = (1..=workers as u8).map(ThreadId::new).collect();
    let mut sc = Scenario::new(format!("matmul-{n}")).thread(
        3,
        AffinityMask::ALL,
        Coordinator {
            shared: shared.clone(),
            workers: worker_ids,
            iterations,
            script: Vec::new().into_iter(),
            iteration: 0,
            scratch: vec![0.0; if workers == 0 { n * n } else { 0 }],
        },
    );
    for w in 0..workers {
        let rows = n * w / workers..n * (w + 1) / workers;
        sc = sc.thread(
            2,
            AffinityMask::ALL,
            Worker {
                shared: shared.clone(),
                scratch: vec![0.0; rows.len() * n],
                rows,
                coordinator,
                done_bit: 1 << w,
                phase: WorkerPhase::Wait,
            },
        );
    }
    (sc, MatmulResult { shared })
}

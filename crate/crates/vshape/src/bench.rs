//! Built-in micro-benchmarks over the mini-language: list append, filter,
//! map, and reverse, plus creation and prefix traversal of a complete
//! ternary-node binary tree. Each run uses a fresh runtime so rule
//! learning is part of every measurement.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::lang::{parse, validate, Program};
use crate::machine::{eval_program, EvalError, MachineValue};
use crate::tables::{Config, Mode, Runtime};
use crate::values::{checksum, measure, MemoryStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchName {
    Append,
    Filter,
    Map,
    Reverse,
    Tree,
}

impl BenchName {
    pub const ALL: [BenchName; 5] = [
        BenchName::Append,
        BenchName::Filter,
        BenchName::Map,
        BenchName::Reverse,
        BenchName::Tree,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchName::Append => "append",
            BenchName::Filter => "filter",
            BenchName::Map => "map",
            BenchName::Reverse => "reverse",
            BenchName::Tree => "tree",
        }
    }

    /// Default size: list length for the list benchmarks, depth for tree.
    pub fn default_size(&self) -> usize {
        match self {
            BenchName::Tree => 18,
            _ => 100_000,
        }
    }
}

impl std::fmt::Display for BenchName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BenchName {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "append" => Ok(BenchName::Append),
            "filter" => Ok(BenchName::Filter),
            "map" => Ok(BenchName::Map),
            "reverse" => Ok(BenchName::Reverse),
            "tree" => Ok(BenchName::Tree),
            other => Err(BenchError::UnknownBenchmark(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown benchmark `{0}` (append|filter|map|reverse|tree)")]
    UnknownBenchmark(String),
    #[error("benchmark failed: {0}")]
    Eval(#[from] EvalError),
}

const LIST_BUILDER: &str =
    "(define (build i n) (if (< n i) (Nil) (Cons i (build (+ i 1) n))))\n";

/// Source of a benchmark program. Lists hold the integers 1..=n; `size`
/// is the list length, except for `tree` where it is the tree depth.
pub fn benchmark_source(name: BenchName, size: usize) -> String {
    match name {
        BenchName::Append => format!(
            "{LIST_BUILDER}\
             (define (app a b) (match a ((Nil) b) ((Cons h t) (Cons h (app t b)))))\n\
             (app (build 1 {size}) (build 1 {size}))"
        ),
        // The input list is consecutive integers, so keeping the even
        // elements is taking every second one.
        BenchName::Filter => format!(
            "{LIST_BUILDER}\
             (define (evens l)\n\
             \x20 (match l\n\
             \x20   ((Nil) (Nil))\n\
             \x20   ((Cons a t)\n\
             \x20    (match t\n\
             \x20      ((Nil) (Nil))\n\
             \x20      ((Cons b t2) (Cons b (evens t2)))))))\n\
             (evens (build 1 {size}))"
        ),
        BenchName::Map => format!(
            "{LIST_BUILDER}\
             (define (inc l) (match l ((Nil) (Nil)) ((Cons h t) (Cons (+ h 1) (inc t)))))\n\
             (inc (build 1 {size}))"
        ),
        BenchName::Reverse => format!(
            "{LIST_BUILDER}\
             (define (rev l acc) (match l ((Nil) acc) ((Cons h t) (rev t (Cons h acc)))))\n\
             (rev (build 1 {size}) (Nil))"
        ),
        BenchName::Tree => format!(
            "(define (grow d i)\n\
             \x20 (if (= d 0)\n\
             \x20     (Leaf)\n\
             \x20     (Node i (grow (- d 1) (* 2 i)) (grow (- d 1) (+ (* 2 i) 1)))))\n\
             (define (sum t) (match t ((Leaf) 0) ((Node v l r) (+ v (+ (sum l) (sum r))))))\n\
             (sum (grow {size} 1))"
        ),
    }
}

/// Parsed and validated benchmark program.
pub fn benchmark_program(name: BenchName, size: usize) -> Program {
    let source = benchmark_source(name, size);
    let program = parse(&source).expect("benchmark source parses");
    validate(&program).expect("benchmark source validates");
    program
}

/// Metrics of one benchmark repetition. All fields except `wall_ms` are
/// deterministic for a given (benchmark, mode, size, config).
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub benchmark: String,
    pub mode: Mode,
    pub size: usize,
    pub threshold: u64,
    pub max_size: usize,
    pub max_depth: usize,
    pub repeat: usize,
    pub wall_ms: f64,
    pub objects: u64,
    pub slots: u64,
    pub reifications: u64,
    pub shapes: u64,
    pub rules: u64,
    pub retained_objects: u64,
    pub retained_slots: u64,
    pub retained_cells: u64,
    pub checksum: u64,
}

pub const CSV_HEADER: &str = "benchmark,mode,size,threshold,max_size,max_depth,repeat,wall_ms,\
objects,slots,reifications,shapes,rules,retained_objects,retained_slots,retained_cells,checksum";

impl BenchReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{},{},{},{},{},{},{},{},{}",
            self.benchmark,
            self.mode,
            self.size,
            self.threshold,
            self.max_size,
            self.max_depth,
            self.repeat,
            self.wall_ms,
            self.objects,
            self.slots,
            self.reifications,
            self.shapes,
            self.rules,
            self.retained_objects,
            self.retained_slots,
            self.retained_cells,
            self.checksum,
        )
    }

    pub fn text_row(&self) -> String {
        format!(
            "{:<8} mode={:<6} size={:<7} repeat={} wall_ms={:<10.3} objects={} slots={} \
             reifications={} shapes={} rules={} retained=({} objs, {} slots, {} cells) checksum={}",
            self.benchmark,
            self.mode.to_string(),
            self.size,
            self.repeat,
            self.wall_ms,
            self.objects,
            self.slots,
            self.reifications,
            self.shapes,
            self.rules,
            self.retained_objects,
            self.retained_slots,
            self.retained_cells,
            self.checksum,
        )
    }
}

/// A finished repetition with the runtime and result still available for
/// inspection (dominant shapes, stats dumps, structural comparisons).
pub struct RunOutcome {
    pub report: BenchReport,
    pub runtime: Runtime,
    pub result: MachineValue,
    pub steps: u64,
}

/// Seeds the manual-mode rule chains a benchmark needs: the recursive
/// field of `Cons/2` for the list benchmarks, both child fields of
/// `Node/3` for the tree.
pub fn seed_manual_rules(rt: &mut Runtime, name: BenchName) {
    debug_assert_eq!(rt.mode(), Mode::Manual);
    let levels = rt.config().max_size + rt.config().max_depth;
    match name {
        BenchName::Tree => {
            let node = rt.intern_class("Node", 3);
            rt.seed_linear_rules(&node, 1, levels).expect("class known");
            rt.seed_linear_rules(&node, 2, levels).expect("class known");
        }
        _ => {
            let cons = rt.intern_class("Cons", 2);
            rt.seed_linear_rules(&cons, 1, levels).expect("class known");
        }
    }
}

/// Runs one repetition on a fresh runtime. Parse time is excluded from
/// the wall-clock measurement.
pub fn run_once(
    name: BenchName,
    size: usize,
    config: Config,
    repeat: usize,
    step_limit: Option<u64>,
) -> Result<RunOutcome, BenchError> {
    let program = benchmark_program(name, size);
    run_prepared(name, &program, size, config, repeat, step_limit)
}

fn run_prepared(
    name: BenchName,
    program: &Program,
    size: usize,
    config: Config,
    repeat: usize,
    step_limit: Option<u64>,
) -> Result<RunOutcome, BenchError> {
    let mut rt = Runtime::new(config);
    if config.mode == Mode::Manual {
        seed_manual_rules(&mut rt, name);
    }
    let start = Instant::now();
    let outcome = eval_program(&mut rt, program, step_limit)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    let retained = match outcome.value.as_data() {
        Some(v) => measure(v),
        None => MemoryStats::default(),
    };
    let result_checksum = outcome.value.as_data().map(checksum).unwrap_or(0);
    let c = *rt.counters();
    let report = BenchReport {
        benchmark: name.to_string(),
        mode: config.mode,
        size,
        threshold: config.threshold,
        max_size: config.max_size,
        max_depth: config.max_depth,
        repeat,
        wall_ms,
        objects: c.objects_allocated,
        slots: c.slots_allocated,
        reifications: c.reifications,
        shapes: c.shapes_created,
        rules: c.rules_created,
        retained_objects: retained.boxed_objects,
        retained_slots: retained.storage_slots,
        retained_cells: retained.total_cells,
        checksum: result_checksum,
    };
    Ok(RunOutcome {
        report,
        runtime: rt,
        result: outcome.value,
        steps: outcome.steps,
    })
}

/// Runs `repeats` repetitions, each on a fresh runtime, and collects
/// their reports. Warm-up is not separated.
pub fn run_benchmark(
    name: BenchName,
    size: usize,
    config: Config,
    repeats: usize,
    step_limit: Option<u64>,
) -> Result<Vec<BenchReport>, BenchError> {
    let program = benchmark_program(name, size);
    let mut reports = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let outcome = run_prepared(name, &program, size, config, repeat, step_limit)?;
        reports.push(outcome.report);
    }
    Ok(reports)
}

//! Shared helpers for the integration suites: a seeded generator of
//! well-scoped, terminating constructor/match programs, and evaluation
//! shortcuts for comparing optimization modes.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use vshape::bench::seed_manual_rules;
use vshape::lang::{parse, validate, Program};
use vshape::machine::{eval_program, EvalOutcome, MachineValue};
use vshape::{Config, Mode, Runtime};

#[derive(Clone, Copy, PartialEq)]
enum Ty {
    Int,
    Data,
}

struct Gen {
    rng: StdRng,
    vars: Vec<(String, Ty)>,
    helpers: Vec<(String, Vec<Ty>, Ty)>,
    counter: usize,
}

/// Generates a closed, terminating program that builds and destructures
/// list/tree structures. Programs never error: applications are fully
/// applied, primops see integers only, and every match ends in a
/// catch-all clause.
pub fn random_program(seed: u64) -> String {
    let mut gen = Gen {
        rng: StdRng::seed_from_u64(seed),
        vars: Vec::new(),
        helpers: Vec::new(),
        counter: 0,
    };
    let mut out = String::new();
    let helper_count = gen.rng.gen_range(0..=2);
    for _ in 0..helper_count {
        out.push_str(&gen.gen_helper());
        out.push('\n');
    }
    let body_ty = if seed % 2 == 0 { Ty::Data } else { Ty::Int };
    let depth = gen.rng.gen_range(3..=6);
    out.push_str(&gen.gen_expr(body_ty, depth));
    out
}

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }

    /// Non-recursive top-level helper; bodies may call only earlier
    /// helpers, so call chains always terminate.
    fn gen_helper(&mut self) -> String {
        let name = self.fresh("fn");
        let param_count = self.rng.gen_range(1..=3);
        let params: Vec<(String, Ty)> = (0..param_count)
            .map(|_| {
                let ty = if self.rng.gen_bool(0.5) { Ty::Int } else { Ty::Data };
                (self.fresh("p"), ty)
            })
            .collect();
        let ret = if self.rng.gen_bool(0.5) { Ty::Int } else { Ty::Data };
        let saved = std::mem::replace(&mut self.vars, params.clone());
        let body_depth = self.rng.gen_range(2..=4);
        let body = self.gen_expr(ret, body_depth);
        self.vars = saved;
        let sig: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
        let src = format!("(define ({name} {}) {body})", sig.join(" "));
        self.helpers
            .push((name, params.iter().map(|(_, t)| *t).collect(), ret));
        src
    }

    fn var_of(&mut self, ty: Ty) -> Option<String> {
        let candidates: Vec<&String> = self
            .vars
            .iter()
            .filter(|(_, t)| *t == ty)
            .map(|(n, _)| n)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..candidates.len());
        Some(candidates[i].clone())
    }

    fn gen_expr(&mut self, ty: Ty, depth: usize) -> String {
        match ty {
            Ty::Int => self.gen_int(depth),
            Ty::Data => self.gen_data(depth),
        }
    }

    fn gen_int(&mut self, depth: usize) -> String {
        if depth == 0 {
            if self.rng.gen_bool(0.4) {
                if let Some(v) = self.var_of(Ty::Int) {
                    return v;
                }
            }
            return format!("{}", self.rng.gen_range(-9..100));
        }
        match self.rng.gen_range(0..10) {
            0..=2 => {
                let op = ["+", "-", "*"][self.rng.gen_range(0..3)];
                format!(
                    "({op} {} {})",
                    self.gen_int(depth - 1),
                    self.gen_int(depth - 1)
                )
            }
            3 => format!(
                "(if {} {} {})",
                self.gen_cond(depth - 1),
                self.gen_int(depth - 1),
                self.gen_int(depth - 1)
            ),
            4..=5 => self.gen_match(Ty::Int, depth),
            6 => self.gen_call(Ty::Int, depth).unwrap_or_else(|| self.gen_int(0)),
            7 => self.gen_let(Ty::Int, depth),
            _ => self.gen_int(0),
        }
    }

    fn gen_data(&mut self, depth: usize) -> String {
        if depth == 0 {
            if self.rng.gen_bool(0.4) {
                if let Some(v) = self.var_of(Ty::Data) {
                    return v;
                }
            }
            return if self.rng.gen_bool(0.7) { "(Nil)" } else { "(Leaf)" }.to_string();
        }
        match self.rng.gen_range(0..10) {
            0..=3 => format!(
                "(Cons {} {})",
                self.gen_int(depth - 1),
                self.gen_data(depth - 1)
            ),
            4 => format!(
                "(Node {} {} {})",
                self.gen_int(depth - 1),
                self.gen_data(depth - 1),
                self.gen_data(depth - 1)
            ),
            5 => format!(
                "(if {} {} {})",
                self.gen_cond(depth - 1),
                self.gen_data(depth - 1),
                self.gen_data(depth - 1)
            ),
            6 => self.gen_match(Ty::Data, depth),
            7 => self
                .gen_call(Ty::Data, depth)
                .unwrap_or_else(|| self.gen_data(0)),
            8 => self.gen_let(Ty::Data, depth),
            _ => self.gen_data(0),
        }
    }

    fn gen_cond(&mut self, depth: usize) -> String {
        let op = if self.rng.gen_bool(0.5) { "=" } else { "<" };
        format!(
            "({op} {} {})",
            self.gen_int(depth.min(1)),
            self.gen_int(depth.min(1))
        )
    }

    /// Immediate application of a literal lambda, i.e. a `let`.
    fn gen_let(&mut self, ty: Ty, depth: usize) -> String {
        let var_ty = if self.rng.gen_bool(0.5) { Ty::Int } else { Ty::Data };
        let name = self.fresh("v");
        let bound = self.gen_expr(var_ty, depth - 1);
        self.vars.push((name.clone(), var_ty));
        let body = self.gen_expr(ty, depth - 1);
        self.vars.pop();
        format!("((lambda ({name}) {body}) {bound})")
    }

    fn gen_call(&mut self, ty: Ty, depth: usize) -> Option<String> {
        let candidates: Vec<(String, Vec<Ty>)> = self
            .helpers
            .iter()
            .filter(|(_, _, ret)| *ret == ty)
            .map(|(n, params, _)| (n.clone(), params.clone()))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let (name, params) = candidates[self.rng.gen_range(0..candidates.len())].clone();
        let args: Vec<String> = params
            .iter()
            .map(|t| self.gen_expr(*t, depth.saturating_sub(2)))
            .collect();
        Some(format!("({name} {})", args.join(" ")))
    }

    fn gen_match(&mut self, ty: Ty, depth: usize) -> String {
        let scrutinee = self.gen_data(depth - 1);
        let mut clauses = Vec::new();
        if self.rng.gen_bool(0.7) {
            clauses.push(format!("((Nil) {})", self.gen_expr(ty, depth - 1)));
        }
        if self.rng.gen_bool(0.6) {
            let scope_depth = self.vars.len();
            let head_pat = if self.rng.gen_bool(0.2) {
                format!("{}", self.rng.gen_range(0..5))
            } else {
                let h = self.fresh("h");
                self.vars.push((h.clone(), Ty::Int));
                h
            };
            let t = self.fresh("t");
            self.vars.push((t.clone(), Ty::Data));
            let body = self.gen_expr(ty, depth - 1);
            self.vars.truncate(scope_depth);
            clauses.push(format!("((Cons {head_pat} {t}) {body})"));
        }
        if self.rng.gen_bool(0.3) {
            let v = self.fresh("x");
            let l = self.fresh("l");
            let r = self.fresh("r");
            self.vars.push((v.clone(), Ty::Int));
            self.vars.push((l.clone(), Ty::Data));
            self.vars.push((r.clone(), Ty::Data));
            let body = self.gen_expr(ty, depth - 1);
            self.vars.truncate(self.vars.len() - 3);
            clauses.push(format!("((Node {v} {l} {r}) {body})"));
        }
        // Catch-all so the match can never fail.
        clauses.push(format!("(_ {})", self.gen_expr(ty, depth.saturating_sub(2))));
        format!("(match {scrutinee} {})", clauses.join(" "))
    }
}

/// Parses, validates, and evaluates a source under the given config,
/// seeding the generator's recursive classes first in manual mode.
pub fn eval_source(source: &str, config: Config) -> (Runtime, EvalOutcome) {
    let program = parse(source).expect("generated program parses");
    validate(&program).expect("generated program validates");
    eval_prepared(&program, config)
}

pub fn eval_prepared(program: &Program, config: Config) -> (Runtime, EvalOutcome) {
    let mut rt = Runtime::new(config);
    if config.mode == Mode::Manual {
        let cons = rt.intern_class("Cons", 2);
        let node = rt.intern_class("Node", 3);
        let levels = config.max_size + config.max_depth;
        rt.seed_linear_rules(&cons, 1, levels).unwrap();
        rt.seed_linear_rules(&node, 1, levels).unwrap();
        rt.seed_linear_rules(&node, 2, levels).unwrap();
    }
    let outcome = eval_program(&mut rt, program, Some(100_000_000)).expect("evaluation succeeds");
    (rt, outcome)
}

/// The benchmark-style manual seeding, re-exported for acceptance tests.
pub fn seeded_manual_runtime(name: vshape::bench::BenchName, config: Config) -> Runtime {
    let mut rt = Runtime::new(config);
    seed_manual_rules(&mut rt, name);
    rt
}

pub fn result_value(outcome: &EvalOutcome) -> &vshape::Value {
    match &outcome.value {
        MachineValue::Data(v) => v,
        MachineValue::Closure(_) => panic!("expected a data result"),
    }
}

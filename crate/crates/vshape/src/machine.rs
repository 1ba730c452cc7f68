//! Small-step CEK evaluator with proper tail calls.
//!
//! Constructor expressions allocate through the runtime and pattern
//! destructuring reads fields through it, so every program exercises the
//! compaction machinery end-to-end. Tail calls replace the control
//! without pushing a frame, keeping the continuation depth proportional
//! to non-tail nesting only.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::lang::{ApplyExpr, CtorExpr, Expr, IfExpr, MatchExpr, Pattern, PrimExpr, PrimOp, Program};
use crate::tables::Runtime;
use crate::values::Value;

/// A runtime value of the machine: a datum or a closure. Only data can be
/// stored in value objects.
#[derive(Clone)]
pub enum MachineValue {
    Data(Value),
    Closure(Rc<Closure>),
}

pub struct Closure {
    pub params: Vec<Rc<str>>,
    pub body: Expr,
    pub env: Env,
}

impl MachineValue {
    pub fn as_data(&self) -> Option<&Value> {
        match self {
            MachineValue::Data(v) => Some(v),
            MachineValue::Closure(_) => None,
        }
    }

    pub fn into_data(self) -> Option<Value> {
        match self {
            MachineValue::Data(v) => Some(v),
            MachineValue::Closure(_) => None,
        }
    }
}

impl fmt::Display for MachineValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MachineValue::Data(v) => write!(f, "{v}"),
            MachineValue::Closure(c) => write!(f, "<closure/{}>", c.params.len()),
        }
    }
}

impl fmt::Debug for MachineValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Immutable binding chain captured by closures.
#[derive(Clone, Default)]
pub struct Env(Option<Rc<Binding>>);

struct Binding {
    name: Rc<str>,
    value: MachineValue,
    parent: Env,
}

impl Env {
    pub fn bind(&self, name: &Rc<str>, value: MachineValue) -> Env {
        Env(Some(Rc::new(Binding {
            name: name.clone(),
            value,
            parent: self.clone(),
        })))
    }

    pub fn lookup(&self, name: &str) -> Option<&MachineValue> {
        let mut cursor = self;
        while let Some(binding) = &cursor.0 {
            if binding.name.as_ref() == name {
                return Some(&binding.value);
            }
            cursor = &binding.parent;
        }
        None
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("cannot apply non-function value {0}")]
    NotAFunction(String),
    #[error("function of {expected} parameters applied to {got} arguments")]
    WrongArgCount { expected: usize, got: usize },
    #[error("primop `{0}` applied to a non-integer")]
    PrimopType(&'static str),
    #[error("constructor field must be a value object or integer, got a function")]
    FunctionInConstructor,
    #[error("no clause matched value {0}")]
    MatchFailure(String),
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(u64),
}

/// Result of an evaluation together with the machine's own metrics.
#[derive(Debug)]
pub struct EvalOutcome {
    pub value: MachineValue,
    pub steps: u64,
    pub peak_kont_depth: usize,
}

enum Frame {
    AppCallee { node: Rc<ApplyExpr>, env: Env },
    AppArgs {
        node: Rc<ApplyExpr>,
        callee: MachineValue,
        done: Vec<MachineValue>,
        env: Env,
    },
    CtorArgs {
        node: Rc<CtorExpr>,
        done: Vec<Value>,
        env: Env,
    },
    PrimLeft { node: Rc<PrimExpr>, env: Env },
    PrimRight { op: PrimOp, lhs: i64 },
    Branch { node: Rc<IfExpr>, env: Env },
    MatchScrut { node: Rc<MatchExpr>, env: Env },
}

enum Control {
    Eval(Expr, Env),
    Ret(MachineValue),
}

struct Machine<'rt> {
    rt: &'rt mut Runtime,
    globals: HashMap<Rc<str>, MachineValue>,
    konts: Vec<Frame>,
    steps: u64,
    peak_kont_depth: usize,
    step_limit: Option<u64>,
    true_obj: Option<Value>,
    false_obj: Option<Value>,
}

/// Evaluates a validated program on a runtime. `step_limit` guards
/// non-terminating inputs; `None` means unlimited.
pub fn eval_program(
    rt: &mut Runtime,
    program: &Program,
    step_limit: Option<u64>,
) -> Result<EvalOutcome, EvalError> {
    let mut machine = Machine {
        rt,
        globals: HashMap::new(),
        konts: Vec::new(),
        steps: 0,
        peak_kont_depth: 0,
        step_limit,
        true_obj: None,
        false_obj: None,
    };
    machine.register_classes(program);
    for (name, expr) in &program.defines {
        let value = machine.run(expr.clone(), Env::default())?;
        machine.globals.insert(name.clone(), value);
    }
    let value = machine.run(program.body.clone(), Env::default())?;
    Ok(EvalOutcome {
        value,
        steps: machine.steps,
        peak_kont_depth: machine.peak_kont_depth,
    })
}

/// Matches a value against a pattern, destructuring through reified field
/// access. Returns the extended environment on success; failure is a
/// result, not an error.
pub fn match_pattern(
    rt: &mut Runtime,
    pattern: &Pattern,
    value: &MachineValue,
    env: &Env,
) -> Option<Env> {
    match pattern {
        Pattern::Wildcard => Some(env.clone()),
        Pattern::Var(name) => Some(env.bind(name, value.clone())),
        Pattern::Int(n) => match value.as_data() {
            Some(Value::Int(m)) if m == n => Some(env.clone()),
            _ => None,
        },
        Pattern::Ctor(class, subs) => {
            let obj = match value.as_data() {
                Some(v @ Value::Obj(o)) if o.class() == class => v.clone(),
                _ => return None,
            };
            let mut env = env.clone();
            for (field, sub) in subs.iter().enumerate() {
                let field_value = MachineValue::Data(rt.get_field(&obj, field));
                env = match_pattern(rt, sub, &field_value, &env)?;
            }
            Some(env)
        }
    }
}

impl<'rt> Machine<'rt> {
    /// Registers the class of every constructor expression so default
    /// shapes exist before the first construction.
    fn register_classes(&mut self, program: &Program) {
        fn walk(rt: &mut Runtime, expr: &Expr) {
            match expr {
                Expr::Int(_) | Expr::Var(_) => {}
                Expr::Lambda(l) => walk(rt, &l.body),
                Expr::Apply(a) => {
                    walk(rt, &a.callee);
                    a.args.iter().for_each(|e| walk(rt, e));
                }
                Expr::Ctor(c) => {
                    rt.intern_class(c.class.name(), c.class.arity());
                    c.args.iter().for_each(|e| walk(rt, e));
                }
                Expr::If(i) => {
                    walk(rt, &i.cond);
                    walk(rt, &i.then);
                    walk(rt, &i.els);
                }
                Expr::Prim(p) => {
                    walk(rt, &p.lhs);
                    walk(rt, &p.rhs);
                }
                Expr::Match(m) => {
                    walk(rt, &m.scrutinee);
                    m.clauses.iter().for_each(|c| walk(rt, &c.body));
                }
            }
        }
        for (_, expr) in &program.defines {
            walk(self.rt, expr);
        }
        walk(self.rt, &program.body);
    }

    fn bool_value(&mut self, b: bool) -> MachineValue {
        let cached = if b {
            self.true_obj.clone()
        } else {
            self.false_obj.clone()
        };
        if let Some(v) = cached {
            return MachineValue::Data(v);
        }
        // Interned singletons; they do not show up in allocation counts.
        let class = self.rt.intern_class(if b { "True" } else { "False" }, 0);
        let v = self.rt.make_constant(&class, vec![]);
        if b {
            self.true_obj = Some(v.clone());
        } else {
            self.false_obj = Some(v.clone());
        }
        MachineValue::Data(v)
    }

    fn is_truthy(value: &MachineValue) -> bool {
        match value {
            MachineValue::Data(Value::Obj(o)) => {
                !(o.class().name() == "False" && o.class().arity() == 0)
            }
            _ => true,
        }
    }

    fn apply(&mut self, callee: MachineValue, args: Vec<MachineValue>) -> Result<Control, EvalError> {
        let closure = match callee {
            MachineValue::Closure(c) => c,
            MachineValue::Data(v) => return Err(EvalError::NotAFunction(v.to_string())),
        };
        if closure.params.len() != args.len() {
            return Err(EvalError::WrongArgCount {
                expected: closure.params.len(),
                got: args.len(),
            });
        }
        let mut env = closure.env.clone();
        for (param, arg) in closure.params.iter().zip(args) {
            env = env.bind(param, arg);
        }
        Ok(Control::Eval(closure.body.clone(), env))
    }

    fn prim(&mut self, op: PrimOp, lhs: i64, rhs: i64) -> MachineValue {
        match op {
            PrimOp::Add => MachineValue::Data(Value::Int(lhs.wrapping_add(rhs))),
            PrimOp::Sub => MachineValue::Data(Value::Int(lhs.wrapping_sub(rhs))),
            PrimOp::Mul => MachineValue::Data(Value::Int(lhs.wrapping_mul(rhs))),
            PrimOp::Eq => self.bool_value(lhs == rhs),
            PrimOp::Lt => self.bool_value(lhs < rhs),
        }
    }

    fn run(&mut self, expr: Expr, env: Env) -> Result<MachineValue, EvalError> {
        debug_assert!(self.konts.is_empty());
        let mut control = Control::Eval(expr, env);
        loop {
            self.steps += 1;
            if let Some(limit) = self.step_limit {
                if self.steps > limit {
                    return Err(EvalError::StepLimitExceeded(limit));
                }
            }
            self.peak_kont_depth = self.peak_kont_depth.max(self.konts.len());
            control = match control {
                Control::Eval(expr, env) => match expr {
                    Expr::Int(n) => Control::Ret(MachineValue::Data(Value::Int(n))),
                    Expr::Var(name) => {
                        let value = env
                            .lookup(&name)
                            .or_else(|| self.globals.get(&name))
                            .cloned()
                            .ok_or_else(|| EvalError::UnboundVariable(name.to_string()))?;
                        Control::Ret(value)
                    }
                    Expr::Lambda(l) => Control::Ret(MachineValue::Closure(Rc::new(Closure {
                        params: l.params.clone(),
                        body: l.body.clone(),
                        env,
                    }))),
                    Expr::Apply(node) => {
                        let callee = node.callee.clone();
                        self.konts.push(Frame::AppCallee { node, env: env.clone() });
                        Control::Eval(callee, env)
                    }
                    Expr::Ctor(node) => {
                        if node.args.is_empty() {
                            let v = self.rt.construct(&node.class, vec![]);
                            Control::Ret(MachineValue::Data(v))
                        } else {
                            let first = node.args[0].clone();
                            self.konts.push(Frame::CtorArgs {
                                node,
                                done: Vec::new(),
                                env: env.clone(),
                            });
                            Control::Eval(first, env)
                        }
                    }
                    Expr::If(node) => {
                        let cond = node.cond.clone();
                        self.konts.push(Frame::Branch { node, env: env.clone() });
                        Control::Eval(cond, env)
                    }
                    Expr::Prim(node) => {
                        let lhs = node.lhs.clone();
                        self.konts.push(Frame::PrimLeft { node, env: env.clone() });
                        Control::Eval(lhs, env)
                    }
                    Expr::Match(node) => {
                        let scrutinee = node.scrutinee.clone();
                        self.konts.push(Frame::MatchScrut { node, env: env.clone() });
                        Control::Eval(scrutinee, env)
                    }
                },
                Control::Ret(value) => match self.konts.pop() {
                    None => return Ok(value),
                    Some(Frame::Branch { node, env }) => {
                        let branch = if Self::is_truthy(&value) {
                            node.then.clone()
                        } else {
                            node.els.clone()
                        };
                        Control::Eval(branch, env)
                    }
                    Some(Frame::PrimLeft { node, env }) => {
                        let lhs = match value.as_data().and_then(Value::as_int) {
                            Some(n) => n,
                            None => return Err(EvalError::PrimopType(node.op.symbol())),
                        };
                        let rhs = node.rhs.clone();
                        self.konts.push(Frame::PrimRight { op: node.op, lhs });
                        Control::Eval(rhs, env)
                    }
                    Some(Frame::PrimRight { op, lhs }) => {
                        let rhs = match value.as_data().and_then(Value::as_int) {
                            Some(n) => n,
                            None => return Err(EvalError::PrimopType(op.symbol())),
                        };
                        Control::Ret(self.prim(op, lhs, rhs))
                    }
                    Some(Frame::AppCallee { node, env }) => {
                        if node.args.is_empty() {
                            self.apply(value, Vec::new())?
                        } else {
                            let first = node.args[0].clone();
                            self.konts.push(Frame::AppArgs {
                                node,
                                callee: value,
                                done: Vec::new(),
                                env: env.clone(),
                            });
                            Control::Eval(first, env)
                        }
                    }
                    Some(Frame::AppArgs {
                        node,
                        callee,
                        mut done,
                        env,
                    }) => {
                        done.push(value);
                        if done.len() < node.args.len() {
                            let next = node.args[done.len()].clone();
                            self.konts.push(Frame::AppArgs {
                                node,
                                callee,
                                done,
                                env: env.clone(),
                            });
                            Control::Eval(next, env)
                        } else {
                            self.apply(callee, done)?
                        }
                    }
                    Some(Frame::CtorArgs { node, mut done, env }) => {
                        match value.into_data() {
                            Some(v) => done.push(v),
                            None => return Err(EvalError::FunctionInConstructor),
                        }
                        if done.len() < node.args.len() {
                            let next = node.args[done.len()].clone();
                            self.konts.push(Frame::CtorArgs {
                                node,
                                done,
                                env: env.clone(),
                            });
                            Control::Eval(next, env)
                        } else {
                            let v = self.rt.construct(&node.class, done);
                            Control::Ret(MachineValue::Data(v))
                        }
                    }
                    Some(Frame::MatchScrut { node, env }) => {
                        let mut selected = None;
                        for clause in &node.clauses {
                            if let Some(extended) =
                                match_pattern(self.rt, &clause.pattern, &value, &env)
                            {
                                selected = Some((clause.body.clone(), extended));
                                break;
                            }
                        }
                        match selected {
                            Some((body, env)) => Control::Eval(body, env),
                            None => return Err(EvalError::MatchFailure(value.to_string())),
                        }
                    }
                },
            };
        }
    }
}

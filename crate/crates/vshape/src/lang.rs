//! Parser and AST for the s-expression mini-language that drives the
//! runtime: a lambda calculus with constructors, pattern matching as the
//! only destructuring construct, plus `if`, integer primops, and
//! top-level `define`.
//!
//! ```text
//! program := defn* expr
//! defn    := "(" "define" "(" NAME param* ")" expr ")" | "(" "define" NAME expr ")"
//! expr    := INT | NAME | "(" "lambda" "(" param* ")" expr ")"
//!          | "(" "if" expr expr expr ")" | "(" "match" expr clause+ ")"
//!          | "(" PRIMOP expr expr ")" | "(" CTOR expr* ")" | "(" expr expr* ")"
//! clause  := "(" pattern expr ")"
//! pattern := "_" | NAME | INT | "(" CTOR pattern* ")"
//! ```
//!
//! Identifiers starting with an uppercase letter are constructors; the
//! argument count of an occurrence determines its class, so `Cons` with
//! two arguments is the class `Cons/2`. `;` starts a comment. The primops
//! are `+ - * = <`; they are reserved and only valid in head position.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::shapes::ClassDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Eq,
    Lt,
}

impl PrimOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Mul => "*",
            PrimOp::Eq => "=",
            PrimOp::Lt => "<",
        }
    }

    fn from_symbol(s: &str) -> Option<PrimOp> {
        match s {
            "+" => Some(PrimOp::Add),
            "-" => Some(PrimOp::Sub),
            "*" => Some(PrimOp::Mul),
            "=" => Some(PrimOp::Eq),
            "<" => Some(PrimOp::Lt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaExpr {
    pub params: Vec<Rc<str>>,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyExpr {
    pub callee: Expr,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtorExpr {
    pub class: ClassDescriptor,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchExpr {
    pub scrutinee: Expr,
    pub clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub pattern: Pattern,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfExpr {
    pub cond: Expr,
    pub then: Expr,
    pub els: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimExpr {
    pub op: PrimOp,
    pub lhs: Expr,
    pub rhs: Expr,
}

/// Expression nodes share their bodies through `Rc` so closures and
/// continuation frames can hold them without copying subtrees.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Var(Rc<str>),
    Lambda(Rc<LambdaExpr>),
    Apply(Rc<ApplyExpr>),
    Ctor(Rc<CtorExpr>),
    Match(Rc<MatchExpr>),
    If(Rc<IfExpr>),
    Prim(Rc<PrimExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Wildcard,
    Var(Rc<str>),
    Int(i64),
    Ctor(ClassDescriptor, Vec<Pattern>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub defines: Vec<(Rc<str>, Expr)>,
    pub body: Expr,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at {line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidateError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
}

// ---------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    LParen,
    RParen,
    Int(i64),
    Name(String),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    line: u32,
    col: u32,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                tokens.push(Token {
                    kind: TokenKind::LParen,
                    line,
                    col,
                });
                chars.next();
                col += 1;
            }
            ')' => {
                tokens.push(Token {
                    kind: TokenKind::RParen,
                    line,
                    col,
                });
                chars.next();
                col += 1;
            }
            _ => {
                let (tok_line, tok_col) = (line, col);
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    word.push(c);
                    chars.next();
                    col += 1;
                }
                let is_int = {
                    let digits = word.strip_prefix('-').unwrap_or(&word);
                    !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit())
                };
                let kind = if is_int {
                    match word.parse::<i64>() {
                        Ok(n) => TokenKind::Int(n),
                        Err(_) => {
                            return Err(ParseError {
                                line: tok_line,
                                col: tok_col,
                                message: format!("integer literal `{word}` out of range"),
                            })
                        }
                    }
                } else {
                    TokenKind::Name(word)
                };
                tokens.push(Token {
                    kind,
                    line: tok_line,
                    col: tok_col,
                });
            }
        }
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    names: HashMap<String, Rc<str>>,
    classes: HashMap<(String, usize), ClassDescriptor>,
    last_line: u32,
    last_col: u32,
}

fn is_ctor_name(name: &str) -> bool {
    name.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

fn is_keyword(name: &str) -> bool {
    matches!(name, "define" | "lambda" | "if" | "match")
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        let tokens = lex(text)?;
        let (last_line, last_col) = tokens
            .last()
            .map(|t| (t.line, t.col + 1))
            .unwrap_or((1, 1));
        Ok(Parser {
            tokens,
            pos: 0,
            names: HashMap::new(),
            classes: HashMap::new(),
            last_line,
            last_col,
        })
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self
            .tokens
            .get(self.pos)
            .map(|t| (t.line, t.col))
            .unwrap_or((self.last_line, self.last_col));
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn expect_rparen(&mut self, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(TokenKind::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error_here(format!("expected `)` to close {what}"))),
        }
    }

    fn intern_name(&mut self, name: &str) -> Rc<str> {
        if let Some(n) = self.names.get(name) {
            return n.clone();
        }
        let rc: Rc<str> = Rc::from(name);
        self.names.insert(name.to_string(), rc.clone());
        rc
    }

    fn intern_class(&mut self, name: &str, arity: usize) -> ClassDescriptor {
        if let Some(c) = self.classes.get(&(name.to_string(), arity)) {
            return c.clone();
        }
        let class = ClassDescriptor::new(name, arity);
        self.classes
            .insert((name.to_string(), arity), class.clone());
        class
    }

    fn variable_name(&mut self, name: &str) -> Result<Rc<str>, ParseError> {
        if is_ctor_name(name) {
            return Err(self.error_here(format!(
                "`{name}` is a constructor and cannot be used as a variable"
            )));
        }
        if is_keyword(name) || PrimOp::from_symbol(name).is_some() || name == "_" {
            return Err(self.error_here(format!("`{name}` is reserved")));
        }
        Ok(self.intern_name(name))
    }

    fn parse_params(&mut self, what: &str) -> Result<Vec<Rc<str>>, ParseError> {
        match self.peek() {
            Some(TokenKind::LParen) => self.pos += 1,
            _ => return Err(self.error_here(format!("expected `(` starting {what} parameters"))),
        }
        let mut params = Vec::new();
        let mut seen = HashSet::new();
        loop {
            match self.peek().cloned() {
                Some(TokenKind::RParen) => {
                    self.pos += 1;
                    return Ok(params);
                }
                Some(TokenKind::Name(name)) => {
                    let interned = self.variable_name(&name)?;
                    if !seen.insert(interned.clone()) {
                        return Err(self.error_here(format!("duplicate parameter `{name}`")));
                    }
                    self.pos += 1;
                    params.push(interned);
                }
                _ => return Err(self.error_here("expected parameter name or `)`")),
            }
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let tok = match self.next() {
            Some(t) => t,
            None => return Err(self.error_here("unexpected end of input")),
        };
        match tok.kind {
            TokenKind::Int(n) => Ok(Expr::Int(n)),
            TokenKind::Name(name) => {
                // Rewind so diagnostics point at the name itself.
                self.pos -= 1;
                let var = self.variable_name(&name)?;
                self.pos += 1;
                Ok(Expr::Var(var))
            }
            TokenKind::RParen => {
                self.pos -= 1;
                Err(self.error_here("unexpected `)`"))
            }
            TokenKind::LParen => self.parse_form(),
        }
    }

    /// Parses the remainder of a parenthesized expression, the `(` having
    /// been consumed.
    fn parse_form(&mut self) -> Result<Expr, ParseError> {
        let head = match self.peek().cloned() {
            Some(k) => k,
            None => return Err(self.error_here("unexpected end of input inside `(`")),
        };
        match head {
            TokenKind::RParen => Err(self.error_here("empty form `()`")),
            TokenKind::Name(name) if name == "define" => {
                Err(self.error_here("`define` is only allowed at the top level"))
            }
            TokenKind::Name(name) if name == "lambda" => {
                self.pos += 1;
                let params = self.parse_params("lambda")?;
                let body = self.parse_expr()?;
                self.expect_rparen("lambda")?;
                Ok(Expr::Lambda(Rc::new(LambdaExpr { params, body })))
            }
            TokenKind::Name(name) if name == "if" => {
                self.pos += 1;
                let cond = self.parse_expr()?;
                let then = self.parse_expr()?;
                let els = self.parse_expr()?;
                self.expect_rparen("if")?;
                Ok(Expr::If(Rc::new(IfExpr { cond, then, els })))
            }
            TokenKind::Name(name) if name == "match" => {
                self.pos += 1;
                let scrutinee = self.parse_expr()?;
                let mut clauses = Vec::new();
                loop {
                    match self.peek() {
                        Some(TokenKind::RParen) => break,
                        Some(TokenKind::LParen) => {
                            self.pos += 1;
                            let pattern = self.parse_pattern()?;
                            let body = self.parse_expr()?;
                            self.expect_rparen("match clause")?;
                            clauses.push(Clause { pattern, body });
                        }
                        _ => return Err(self.error_here("expected match clause or `)`")),
                    }
                }
                if clauses.is_empty() {
                    return Err(self.error_here("match must have at least one clause"));
                }
                self.pos += 1; // the closing `)`
                Ok(Expr::Match(Rc::new(MatchExpr { scrutinee, clauses })))
            }
            TokenKind::Name(name) if PrimOp::from_symbol(&name).is_some() => {
                self.pos += 1;
                let op = PrimOp::from_symbol(&name).unwrap();
                let lhs = self.parse_expr()?;
                let rhs = self.parse_expr()?;
                self.expect_rparen("primop")?;
                Ok(Expr::Prim(Rc::new(PrimExpr { op, lhs, rhs })))
            }
            TokenKind::Name(name) if is_ctor_name(&name) => {
                self.pos += 1;
                let mut args = Vec::new();
                while !matches!(self.peek(), Some(TokenKind::RParen)) {
                    args.push(self.parse_expr()?);
                }
                self.pos += 1; // the closing `)`
                let class = self.intern_class(&name, args.len());
                Ok(Expr::Ctor(Rc::new(CtorExpr { class, args })))
            }
            _ => {
                let callee = self.parse_expr()?;
                let mut args = Vec::new();
                while !matches!(self.peek(), Some(TokenKind::RParen)) {
                    if self.peek().is_none() {
                        return Err(self.error_here("unexpected end of input inside `(`"));
                    }
                    args.push(self.parse_expr()?);
                }
                self.pos += 1; // the closing `)`
                Ok(Expr::Apply(Rc::new(ApplyExpr { callee, args })))
            }
        }
    }

    fn parse_pattern(&mut self) -> Result<Pattern, ParseError> {
        let mut bound = HashSet::new();
        self.parse_pattern_inner(&mut bound)
    }

    fn parse_pattern_inner(&mut self, bound: &mut HashSet<Rc<str>>) -> Result<Pattern, ParseError> {
        let tok = match self.next() {
            Some(t) => t,
            None => return Err(self.error_here("unexpected end of input in pattern")),
        };
        match tok.kind {
            TokenKind::Int(n) => Ok(Pattern::Int(n)),
            TokenKind::Name(name) if name == "_" => Ok(Pattern::Wildcard),
            TokenKind::Name(name) => {
                if is_ctor_name(&name) {
                    self.pos -= 1;
                    return Err(self.error_here(format!(
                        "constructor pattern `{name}` must be parenthesized"
                    )));
                }
                self.pos -= 1;
                let var = self.variable_name(&name)?;
                self.pos += 1;
                if !bound.insert(var.clone()) {
                    self.pos -= 1;
                    let err = self.error_here(format!("duplicate pattern variable `{name}`"));
                    self.pos += 1;
                    return Err(err);
                }
                Ok(Pattern::Var(var))
            }
            TokenKind::LParen => {
                let name = match self.peek().cloned() {
                    Some(TokenKind::Name(n)) if is_ctor_name(&n) => n,
                    _ => return Err(self.error_here("expected constructor name in pattern")),
                };
                self.pos += 1;
                let mut subs = Vec::new();
                while !matches!(self.peek(), Some(TokenKind::RParen)) {
                    if self.peek().is_none() {
                        return Err(self.error_here("unexpected end of input in pattern"));
                    }
                    subs.push(self.parse_pattern_inner(bound)?);
                }
                self.pos += 1; // the closing `)`
                let class = self.intern_class(&name, subs.len());
                Ok(Pattern::Ctor(class, subs))
            }
            TokenKind::RParen => {
                self.pos -= 1;
                Err(self.error_here("unexpected `)` in pattern"))
            }
        }
    }

    fn parse_program(&mut self) -> Result<Program, ParseError> {
        let mut defines: Vec<(Rc<str>, Expr)> = Vec::new();
        let mut names = HashSet::new();
        loop {
            // A top-level form is a definition iff it starts `(define`.
            let is_define = matches!(self.peek(), Some(TokenKind::LParen))
                && matches!(
                    self.tokens.get(self.pos + 1).map(|t| &t.kind),
                    Some(TokenKind::Name(n)) if n == "define"
                );
            if !is_define {
                break;
            }
            self.pos += 2;
            let (name, expr) = match self.peek().cloned() {
                Some(TokenKind::Name(raw)) => {
                    let name = self.variable_name(&raw)?;
                    self.pos += 1;
                    let expr = self.parse_expr()?;
                    (name, expr)
                }
                Some(TokenKind::LParen) => {
                    self.pos += 1;
                    let raw = match self.peek().cloned() {
                        Some(TokenKind::Name(n)) => n,
                        _ => return Err(self.error_here("expected function name after `(define (`")),
                    };
                    let name = self.variable_name(&raw)?;
                    self.pos += 1;
                    // Reuse the parameter-list parser from the `(`
                    // position we are already past.
                    let mut params = Vec::new();
                    let mut seen = HashSet::new();
                    loop {
                        match self.peek().cloned() {
                            Some(TokenKind::RParen) => {
                                self.pos += 1;
                                break;
                            }
                            Some(TokenKind::Name(p)) => {
                                let interned = self.variable_name(&p)?;
                                if !seen.insert(interned.clone()) {
                                    return Err(
                                        self.error_here(format!("duplicate parameter `{p}`"))
                                    );
                                }
                                self.pos += 1;
                                params.push(interned);
                            }
                            _ => return Err(self.error_here("expected parameter name or `)`")),
                        }
                    }
                    let body = self.parse_expr()?;
                    (name, Expr::Lambda(Rc::new(LambdaExpr { params, body })))
                }
                _ => return Err(self.error_here("expected name or `(name params...)` after `define`")),
            };
            self.expect_rparen("define")?;
            if !names.insert(name.clone()) {
                return Err(self.error_here(format!("duplicate definition `{name}`")));
            }
            defines.push((name, expr));
        }
        if self.peek().is_none() {
            return Err(self.error_here("program has no body expression"));
        }
        let body = self.parse_expr()?;
        if self.peek().is_some() {
            return Err(self.error_here("unexpected form after the program body"));
        }
        Ok(Program { defines, body })
    }
}

/// Parses a program from source text. Constructor occurrences with the
/// same name and argument count share one class descriptor.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    Parser::new(text)?.parse_program()
}

// ---------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------

/// Rejects unbound variables. All top-level definitions are in scope
/// everywhere, so mutual recursion is allowed.
pub fn validate(program: &Program) -> Result<(), ValidateError> {
    let globals: HashSet<&str> = program.defines.iter().map(|(n, _)| n.as_ref()).collect();
    let mut scope: Vec<Rc<str>> = Vec::new();
    for (_, expr) in &program.defines {
        check_expr(expr, &globals, &mut scope)?;
    }
    check_expr(&program.body, &globals, &mut scope)
}

fn check_expr(
    expr: &Expr,
    globals: &HashSet<&str>,
    scope: &mut Vec<Rc<str>>,
) -> Result<(), ValidateError> {
    match expr {
        Expr::Int(_) => Ok(()),
        Expr::Var(name) => {
            if scope.iter().any(|n| n == name) || globals.contains(name.as_ref()) {
                Ok(())
            } else {
                Err(ValidateError::UnboundVariable(name.to_string()))
            }
        }
        Expr::Lambda(l) => {
            let depth = scope.len();
            scope.extend(l.params.iter().cloned());
            let result = check_expr(&l.body, globals, scope);
            scope.truncate(depth);
            result
        }
        Expr::Apply(a) => {
            check_expr(&a.callee, globals, scope)?;
            a.args.iter().try_for_each(|e| check_expr(e, globals, scope))
        }
        Expr::Ctor(c) => c.args.iter().try_for_each(|e| check_expr(e, globals, scope)),
        Expr::If(i) => {
            check_expr(&i.cond, globals, scope)?;
            check_expr(&i.then, globals, scope)?;
            check_expr(&i.els, globals, scope)
        }
        Expr::Prim(p) => {
            check_expr(&p.lhs, globals, scope)?;
            check_expr(&p.rhs, globals, scope)
        }
        Expr::Match(m) => {
            check_expr(&m.scrutinee, globals, scope)?;
            for clause in &m.clauses {
                let depth = scope.len();
                collect_pattern_vars(&clause.pattern, scope);
                let result = check_expr(&clause.body, globals, scope);
                scope.truncate(depth);
                result?;
            }
            Ok(())
        }
    }
}

fn collect_pattern_vars(pattern: &Pattern, out: &mut Vec<Rc<str>>) {
    match pattern {
        Pattern::Wildcard | Pattern::Int(_) => {}
        Pattern::Var(name) => out.push(name.clone()),
        Pattern::Ctor(_, subs) => subs.iter().for_each(|p| collect_pattern_vars(p, out)),
    }
}

// ---------------------------------------------------------------------
// Canonical printer
// ---------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(n) => write!(f, "{n}"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Lambda(l) => {
                write!(f, "(lambda (")?;
                for (i, p) in l.params.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ") {})", l.body)
            }
            Expr::Apply(a) => {
                write!(f, "({}", a.callee)?;
                for arg in &a.args {
                    write!(f, " {arg}")?;
                }
                write!(f, ")")
            }
            Expr::Ctor(c) => {
                write!(f, "({}", c.class.name())?;
                for arg in &c.args {
                    write!(f, " {arg}")?;
                }
                write!(f, ")")
            }
            Expr::Match(m) => {
                write!(f, "(match {}", m.scrutinee)?;
                for clause in &m.clauses {
                    write!(f, " ({} {})", clause.pattern, clause.body)?;
                }
                write!(f, ")")
            }
            Expr::If(i) => write!(f, "(if {} {} {})", i.cond, i.then, i.els),
            Expr::Prim(p) => write!(f, "({} {} {})", p.op.symbol(), p.lhs, p.rhs),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Wildcard => write!(f, "_"),
            Pattern::Var(name) => write!(f, "{name}"),
            Pattern::Int(n) => write!(f, "{n}"),
            Pattern::Ctor(class, subs) => {
                write!(f, "({}", class.name())?;
                for sub in subs {
                    write!(f, " {sub}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, expr) in &self.defines {
            writeln!(f, "(define {name} {expr})")?;
        }
        write!(f, "{}", self.body)
    }
}

use super::lexer::{Tok, T};
use super::Exc;

#[derive(Debug, Clone, PartialEq)]
pub enum Const {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
    Is,
    IsNot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Const),
    Name(String),
    List(Vec<Expr>),
    Tuple(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(Box<Expr>, Vec<(CmpOp, Expr)>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    IfElse(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>, Vec<(String, Expr)>),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<Box<Expr>>, Option<Box<Expr>>),
    Attr(Box<Expr>, String),
    ListComp(Box<Expr>, Box<Target>, Box<Expr>, Option<Box<Expr>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(String),
    Index(Expr, Expr),
    Tuple(Vec<Target>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handler {
    pub exc: Option<String>,
    pub bind: Option<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    Assign(Vec<Target>, Expr),
    AugAssign(Target, BinOp, Expr),
    If(Vec<(Expr, Vec<Stmt>)>, Vec<Stmt>),
    While(Expr, Vec<Stmt>),
    For(Target, Expr, Vec<Stmt>),
    Try(Vec<Stmt>, Vec<Handler>),
    Raise(Option<Expr>),
    Import(String),
    Pass,
    Break,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
}

const UNSUPPORTED: [&str; 10] = [
    "def", "class", "lambda", "with", "yield", "global", "nonlocal", "async", "await", "del",
];

pub fn parse_program(toks: Vec<Tok>) -> Result<Vec<Stmt>, Exc> {
    let mut p = Parser { toks, pos: 0 };
    let mut body = Vec::new();
    while !p.at(&T::Eof) {
        body.extend(p.statement()?);
    }
    Ok(body)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &T {
        &self.toks[self.pos].t
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn at(&self, t: &T) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), T::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), T::Name(n) if n == kw)
    }

    fn bump(&mut self) -> T {
        let t = self.toks[self.pos].t.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> Exc {
        Exc::new("SyntaxError", msg, self.line())
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), Exc> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{op}'")))
        }
    }

    fn name(&mut self) -> Result<String, Exc> {
        match self.bump() {
            T::Name(n) if !is_keyword(&n) => Ok(n),
            _ => Err(self.err("expected a name")),
        }
    }

    /// One logical line, which may hold several `;`-separated statements, or
    /// one compound statement.
    fn statement(&mut self) -> Result<Vec<Stmt>, Exc> {
        let line = self.line();
        if let T::Name(n) = self.peek() {
            if UNSUPPORTED.contains(&n.as_str()) {
                return Err(self.err(format!("'{n}' is not supported in plans")));
            }
            match n.as_str() {
                "if" => return Ok(vec![self.if_stmt()?]),
                "while" => {
                    self.bump();
                    let cond = self.expr()?;
                    let body = self.block()?;
                    return Ok(vec![Stmt {
                        kind: StmtKind::While(cond, body),
                        line,
                    }]);
                }
                "for" => {
                    self.bump();
                    let target = self.target_list()?;
                    if !self.eat_kw("in") {
                        return Err(self.err("expected 'in'"));
                    }
                    let iter = self.expr_list()?;
                    let body = self.block()?;
                    return Ok(vec![Stmt {
                        kind: StmtKind::For(target, iter, body),
                        line,
                    }]);
                }
                "try" => return Ok(vec![self.try_stmt()?]),
                _ => {}
            }
        }
        if matches!(self.peek(), T::Indent) {
            return Err(Exc::new("IndentationError", "unexpected indent", line));
        }
        let mut out = vec![self.simple()?];
        while self.eat_op(";") {
            if self.at(&T::Newline) {
                break;
            }
            out.push(self.simple()?);
        }
        if !self.at(&T::Newline) {
            return Err(self.err("invalid syntax"));
        }
        self.bump();
        Ok(out)
    }

    fn if_stmt(&mut self) -> Result<Stmt, Exc> {
        let line = self.line();
        self.bump();
        let mut arms = Vec::new();
        let cond = self.expr()?;
        arms.push((cond, self.block()?));
        let mut orelse = Vec::new();
        loop {
            if self.eat_kw("elif") {
                let cond = self.expr()?;
                arms.push((cond, self.block()?));
            } else if self.eat_kw("else") {
                orelse = self.block()?;
                break;
            } else {
                break;
            }
        }
        Ok(Stmt {
            kind: StmtKind::If(arms, orelse),
            line,
        })
    }

    fn try_stmt(&mut self) -> Result<Stmt, Exc> {
        let line = self.line();
        self.bump();
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            let mut exc = None;
            let mut bind = None;
            if !self.at_op(":") {
                exc = Some(self.name()?);
                if self.eat_kw("as") {
                    bind = Some(self.name()?);
                }
            }
            handlers.push(Handler {
                exc,
                bind,
                body: self.block()?,
            });
        }
        if self.at_kw("finally") || self.at_kw("else") {
            return Err(self.err("try/finally and try/else are not supported"));
        }
        if handlers.is_empty() {
            return Err(self.err("expected 'except'"));
        }
        Ok(Stmt {
            kind: StmtKind::Try(body, handlers),
            line,
        })
    }

    /// `:` followed by either an indented block or simple statements on the
    /// same line.
    fn block(&mut self) -> Result<Vec<Stmt>, Exc> {
        self.expect_op(":")?;
        if !self.at(&T::Newline) {
            let mut out = vec![self.simple()?];
            while self.eat_op(";") {
                if self.at(&T::Newline) {
                    break;
                }
                out.push(self.simple()?);
            }
            if !self.at(&T::Newline) {
                return Err(self.err("invalid syntax"));
            }
            self.bump();
            return Ok(out);
        }
        self.bump();
        if !matches!(self.peek(), T::Indent) {
            return Err(Exc::new(
                "IndentationError",
                "expected an indented block",
                self.line(),
            ));
        }
        self.bump();
        let mut body = Vec::new();
        while !matches!(self.peek(), T::Dedent | T::Eof) {
            body.extend(self.statement()?);
        }
        self.bump();
        Ok(body)
    }

    fn simple(&mut self) -> Result<Stmt, Exc> {
        let line = self.line();
        let kind = match self.peek() {
            T::Name(n) if n == "pass" => {
                self.bump();
                StmtKind::Pass
            }
            T::Name(n) if n == "break" => {
                self.bump();
                StmtKind::Break
            }
            T::Name(n) if n == "continue" => {
                self.bump();
                StmtKind::Continue
            }
            T::Name(n) if n == "return" => return Err(self.err("'return' outside function")),
            T::Name(n) if n == "raise" => {
                self.bump();
                if self.at(&T::Newline) || self.at_op(";") {
                    StmtKind::Raise(None)
                } else {
                    StmtKind::Raise(Some(self.expr()?))
                }
            }
            T::Name(n) if n == "import" || n == "from" => {
                self.bump();
                let mut module = self.name()?;
                while self.eat_op(".") {
                    module.push('.');
                    module.push_str(&self.name()?);
                }
                // Skip the rest of the line; the import is refused at run time.
                while !self.at(&T::Newline) && !self.at(&T::Eof) {
                    self.bump();
                }
                StmtKind::Import(module)
            }
            _ => {
                let first = self.expr_list()?;
                if let Some(op) = self.aug_op() {
                    let target = to_target(&first).ok_or_else(|| self.err("illegal target"))?;
                    let value = self.expr_list()?;
                    StmtKind::AugAssign(target, op, value)
                } else if self.at_op("=") {
                    let mut targets = vec![first];
                    let mut value;
                    loop {
                        self.bump();
                        value = self.expr_list()?;
                        if !self.at_op("=") {
                            break;
                        }
                        targets.push(value);
                    }
                    let targets = targets
                        .iter()
                        .map(|t| to_target(t).ok_or_else(|| self.err("cannot assign to expression")))
                        .collect::<Result<Vec<_>, _>>()?;
                    StmtKind::Assign(targets, value)
                } else {
                    StmtKind::Expr(first)
                }
            }
        };
        Ok(Stmt { kind, line })
    }

    fn aug_op(&mut self) -> Option<BinOp> {
        let op = match self.peek() {
            T::Op("+=") => BinOp::Add,
            T::Op("-=") => BinOp::Sub,
            T::Op("*=") => BinOp::Mul,
            T::Op("/=") => BinOp::Div,
            T::Op("//=") => BinOp::FloorDiv,
            T::Op("%=") => BinOp::Mod,
            T::Op("**=") => BinOp::Pow,
            _ => return None,
        };
        self.bump();
        Some(op)
    }

    fn target_list(&mut self) -> Result<Target, Exc> {
        let mut items = vec![self.target()?];
        while self.eat_op(",") {
            if self.at_kw("in") {
                break;
            }
            items.push(self.target()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Target::Tuple(items)
        })
    }

    fn target(&mut self) -> Result<Target, Exc> {
        if self.eat_op("(") {
            let t = self.target_list()?;
            self.expect_op(")")?;
            return Ok(t);
        }
        Ok(Target::Name(self.name()?))
    }

    /// Comma-separated expressions; more than one forms a tuple.
    fn expr_list(&mut self) -> Result<Expr, Exc> {
        let first = self.expr()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at(&T::Newline) || self.at_op("=") || self.at_op(")") {
                break;
            }
            items.push(self.expr()?);
        }
        Ok(Expr::Tuple(items))
    }

    pub fn expr(&mut self) -> Result<Expr, Exc> {
        let body = self.or_expr()?;
        if self.eat_kw("if") {
            let cond = self.or_expr()?;
            if !self.eat_kw("else") {
                return Err(self.err("expected 'else' in conditional expression"));
            }
            let orelse = self.expr()?;
            return Ok(Expr::IfElse(Box::new(cond), Box::new(body), Box::new(orelse)));
        }
        Ok(body)
    }

    fn or_expr(&mut self) -> Result<Expr, Exc> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("or") {
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and_expr()?));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, Exc> {
        let mut lhs = self.not_expr()?;
        while self.eat_kw("and") {
            lhs = Expr::And(Box::new(lhs), Box::new(self.not_expr()?));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, Exc> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, Exc> {
        let first = self.arith()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek() {
                T::Op("==") => CmpOp::Eq,
                T::Op("!=") => CmpOp::Ne,
                T::Op("<") => CmpOp::Lt,
                T::Op("<=") => CmpOp::Le,
                T::Op(">") => CmpOp::Gt,
                T::Op(">=") => CmpOp::Ge,
                T::Name(n) if n == "in" => CmpOp::In,
                T::Name(n) if n == "is" => {
                    self.bump();
                    let op = if self.eat_kw("not") { CmpOp::IsNot } else { CmpOp::Is };
                    rest.push((op, self.arith()?));
                    continue;
                }
                T::Name(n) if n == "not" => {
                    let next = self.toks.get(self.pos + 1).map(|t| &t.t);
                    if matches!(next, Some(T::Name(m)) if m == "in") {
                        self.bump();
                        CmpOp::NotIn
                    } else {
                        break;
                    }
                }
                _ => break,
            };
            self.bump();
            rest.push((op, self.arith()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Expr::Cmp(Box::new(first), rest))
        }
    }

    fn arith(&mut self) -> Result<Expr, Exc> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                T::Op("+") => BinOp::Add,
                T::Op("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, Exc> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                T::Op("*") => BinOp::Mul,
                T::Op("/") => BinOp::Div,
                T::Op("//") => BinOp::FloorDiv,
                T::Op("%") => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, Exc> {
        if self.eat_op("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, Exc> {
        let base = self.postfix()?;
        if self.eat_op("**") {
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, Exc> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op("(") {
                let mut args = Vec::new();
                let mut kwargs = Vec::new();
                while !self.at_op(")") {
                    let is_kw = matches!(self.peek(), T::Name(_))
                        && matches!(self.toks.get(self.pos + 1).map(|t| &t.t), Some(T::Op("=")));
                    if is_kw {
                        let k = self.name()?;
                        self.bump();
                        kwargs.push((k, self.expr()?));
                    } else {
                        if !kwargs.is_empty() {
                            return Err(self.err("positional argument follows keyword argument"));
                        }
                        args.push(self.expr()?);
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op(")")?;
                e = Expr::Call(Box::new(e), args, kwargs);
            } else if self.eat_op("[") {
                let lo = if self.at_op(":") { None } else { Some(self.expr()?) };
                if self.eat_op(":") {
                    let hi = if self.at_op("]") { None } else { Some(Box::new(self.expr()?)) };
                    self.expect_op("]")?;
                    e = Expr::Slice(Box::new(e), lo.map(Box::new), hi);
                } else {
                    self.expect_op("]")?;
                    let idx = lo.ok_or_else(|| self.err("invalid syntax"))?;
                    e = Expr::Index(Box::new(e), Box::new(idx));
                }
            } else if self.eat_op(".") {
                let attr = self.name()?;
                e = Expr::Attr(Box::new(e), attr);
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, Exc> {
        let line = self.line();
        match self.bump() {
            T::Int(v) => Ok(Expr::Const(Const::Int(v))),
            T::Float(v) => Ok(Expr::Const(Const::Float(v))),
            T::Str(mut s) => {
                // Adjacent literals concatenate.
                while let T::Str(more) = self.peek().clone() {
                    self.bump();
                    s.push_str(&more);
                }
                Ok(Expr::Const(Const::Str(s)))
            }
            T::Name(n) => match n.as_str() {
                "None" => Ok(Expr::Const(Const::None)),
                "True" => Ok(Expr::Const(Const::Bool(true))),
                "False" => Ok(Expr::Const(Const::Bool(false))),
                _ if is_keyword(&n) => Err(Exc::new("SyntaxError", "invalid syntax", line)),
                _ => Ok(Expr::Name(n)),
            },
            T::Op("(") => {
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.expr()?;
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            T::Op("[") => {
                if self.eat_op("]") {
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.expr()?;
                if self.eat_kw("for") {
                    let target = self.target_list()?;
                    if !self.eat_kw("in") {
                        return Err(self.err("expected 'in'"));
                    }
                    let iter = self.or_expr()?;
                    let cond = if self.eat_kw("if") {
                        Some(Box::new(self.or_expr()?))
                    } else {
                        None
                    };
                    self.expect_op("]")?;
                    return Ok(Expr::ListComp(Box::new(first), Box::new(target), Box::new(iter), cond));
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            T::Op("{") => {
                let mut pairs = Vec::new();
                while !self.at_op("}") {
                    let k = self.expr()?;
                    self.expect_op(":")?;
                    let v = self.expr()?;
                    pairs.push((k, v));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("}")?;
                Ok(Expr::Dict(pairs))
            }
            T::Indent => Err(Exc::new("IndentationError", "unexpected indent", line)),
            _ => Err(Exc::new("SyntaxError", "invalid syntax", line)),
        }
    }
}

fn is_keyword(n: &str) -> bool {
    matches!(
        n,
        "and" | "or" | "not" | "in" | "is" | "if" | "elif" | "else" | "for" | "while" | "try"
            | "except" | "finally" | "raise" | "import" | "from" | "as" | "pass" | "break"
            | "continue" | "return" | "def" | "class" | "lambda" | "with" | "yield" | "global"
            | "nonlocal" | "del" | "assert" | "async" | "await"
    )
}

fn to_target(e: &Expr) -> Option<Target> {
    match e {
        Expr::Name(n) => Some(Target::Name(n.clone())),
        Expr::Index(obj, idx) => Some(Target::Index((**obj).clone(), (**idx).clone())),
        Expr::Tuple(items) | Expr::List(items) => {
            items.iter().map(to_target).collect::<Option<Vec<_>>>().map(Target::Tuple)
        }
        _ => None,
    }
}

use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;

use serde_json::Value as Json;

use super::parser::{BinOp, CmpOp, Const, Expr, Handler, Stmt, StmtKind, Target};
use super::value::{py_cmp, py_eq, table_columns, table_rows, Num, Value};
use super::{Abort, Exc, Fault, Port};

const TOOLS: [&str; 6] = [
    "LoadDB",
    "FilterDB",
    "GetValue",
    "Calculate",
    "Calendar",
    "SQLInterpreter",
];

const EXCEPTIONS: [&str; 12] = [
    "Exception",
    "ValueError",
    "TypeError",
    "KeyError",
    "IndexError",
    "RuntimeError",
    "ZeroDivisionError",
    "NameError",
    "AssertionError",
    "AttributeError",
    "OverflowError",
    "NotImplementedError",
];

enum Flow {
    Normal,
    Break,
    Continue,
}

type R<T> = Result<T, Fault>;

pub struct Interp<'p> {
    vars: HashMap<String, Value>,
    port: &'p mut dyn Port,
    line: usize,
    deadline: Option<Instant>,
    ticks: u32,
    handling: Vec<Exc>,
}

fn exc(kind: &str, msg: impl Into<String>) -> Fault {
    Fault::Exc(Exc {
        error_type: kind.to_string(),
        message: msg.into(),
        line: None,
    })
}

fn type_err(msg: impl Into<String>) -> Fault {
    exc("TypeError", msg)
}

impl<'p> Interp<'p> {
    pub fn new(port: &'p mut dyn Port, deadline: Option<Instant>) -> Interp<'p> {
        Interp {
            vars: HashMap::new(),
            port,
            line: 0,
            deadline,
            ticks: 0,
            handling: Vec::new(),
        }
    }

    pub fn run(&mut self, prog: &[Stmt]) -> Result<(), Fault> {
        match self.block(prog) {
            Ok(_) => Ok(()),
            Err(Fault::Exc(mut e)) => {
                e.line.get_or_insert(self.line);
                Err(Fault::Exc(e))
            }
            Err(f) => Err(f),
        }
    }

    fn tick(&mut self) -> R<()> {
        self.ticks = self.ticks.wrapping_add(1);
        if self.ticks % 1024 == 0 {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    return Err(Fault::Abort(Abort {
                        exit_code: super::EXIT_DEADLINE,
                        detail: "deadline exceeded".into(),
                    }));
                }
            }
        }
        Ok(())
    }

    fn block(&mut self, body: &[Stmt]) -> R<Flow> {
        for s in body {
            match self.stmt(s)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    /// Stamps the current line on exceptions that do not carry one yet.
    fn at_line<T>(&self, r: R<T>, line: usize) -> R<T> {
        r.map_err(|f| match f {
            Fault::Exc(mut e) => {
                e.line.get_or_insert(line);
                Fault::Exc(e)
            }
            other => other,
        })
    }

    fn stmt(&mut self, s: &Stmt) -> R<Flow> {
        self.line = s.line;
        self.tick()?;
        let r = self.stmt_inner(s);
        self.at_line(r, s.line)
    }

    fn stmt_inner(&mut self, s: &Stmt) -> R<Flow> {
        match &s.kind {
            StmtKind::Pass => Ok(Flow::Normal),
            StmtKind::Break => Ok(Flow::Break),
            StmtKind::Continue => Ok(Flow::Continue),
            StmtKind::Import(module) => Err(exc(
                "ImportError",
                format!("import of '{module}' is not allowed in plans"),
            )),
            StmtKind::Expr(e) => {
                self.eval(e)?;
                Ok(Flow::Normal)
            }
            StmtKind::Assign(targets, value) => {
                let v = self.eval(value)?;
                for t in targets {
                    self.assign(t, v.clone())?;
                }
                Ok(Flow::Normal)
            }
            StmtKind::AugAssign(target, op, value) => {
                let current = match target {
                    Target::Name(n) => self.lookup(n)?,
                    Target::Index(obj, idx) => {
                        let o = self.eval(obj)?;
                        let i = self.eval(idx)?;
                        index(&o, &i)?
                    }
                    Target::Tuple(_) => {
                        return Err(exc("SyntaxError", "illegal expression for augmented assignment"))
                    }
                };
                let rhs = self.eval(value)?;
                let v = binop(*op, &current, &rhs)?;
                self.assign(target, v)?;
                Ok(Flow::Normal)
            }
            StmtKind::If(arms, orelse) => {
                for (cond, body) in arms {
                    if self.eval(cond)?.truthy() {
                        return self.block(body);
                    }
                    self.line = s.line;
                }
                self.block(orelse)
            }
            StmtKind::While(cond, body) => {
                while self.eval(cond)?.truthy() {
                    self.tick()?;
                    match self.block(body)? {
                        Flow::Break => break,
                        Flow::Continue | Flow::Normal => {}
                    }
                    self.line = s.line;
                }
                Ok(Flow::Normal)
            }
            StmtKind::For(target, iter, body) => {
                let items = iterate(&self.eval(iter)?)?;
                for item in items {
                    self.line = s.line;
                    self.assign(target, item)?;
                    match self.block(body)? {
                        Flow::Break => break,
                        Flow::Continue | Flow::Normal => {}
                    }
                }
                Ok(Flow::Normal)
            }
            StmtKind::Try(body, handlers) => match self.block(body) {
                Ok(flow) => Ok(flow),
                Err(Fault::Exc(e)) => {
                    let Some(h) = handlers.iter().find(|h| matches_handler(h, &e)) else {
                        return Err(Fault::Exc(e));
                    };
                    if let Some(name) = &h.bind {
                        self.vars.insert(
                            name.clone(),
                            Value::Exception(Rc::new((e.error_type.clone(), e.message.clone()))),
                        );
                    }
                    self.handling.push(e);
                    let r = self.block(&h.body);
                    self.handling.pop();
                    r
                }
                Err(f) => Err(f),
            },
            StmtKind::Raise(None) => match self.handling.last() {
                Some(e) => Err(Fault::Exc(e.clone())),
                None => Err(exc("RuntimeError", "No active exception to reraise")),
            },
            StmtKind::Raise(Some(e)) => match self.eval(e)? {
                Value::Exception(x) => Err(exc(&x.0, x.1.clone())),
                other => Err(type_err(format!(
                    "exceptions must derive from BaseException, not {}",
                    other.type_name()
                ))),
            },
        }
    }

    fn assign(&mut self, target: &Target, v: Value) -> R<()> {
        match target {
            Target::Name(n) => {
                self.vars.insert(n.clone(), v);
                Ok(())
            }
            Target::Index(obj, idx) => {
                let o = self.eval(obj)?;
                let i = self.eval(idx)?;
                match &o {
                    Value::List(l) => {
                        let len = l.borrow().len();
                        let pos = norm_index(&i, len, "list assignment index out of range")?;
                        l.borrow_mut()[pos] = v;
                        Ok(())
                    }
                    Value::Dict(d) => {
                        let mut d = d.borrow_mut();
                        match d.iter_mut().find(|(k, _)| py_eq(k, &i)) {
                            Some(slot) => slot.1 = v,
                            None => d.push((i, v)),
                        }
                        Ok(())
                    }
                    other => Err(type_err(format!(
                        "'{}' object does not support item assignment",
                        other.type_name()
                    ))),
                }
            }
            Target::Tuple(targets) => {
                let items = iterate(&v)?;
                if items.len() != targets.len() {
                    return Err(exc(
                        "ValueError",
                        format!(
                            "cannot unpack {} values into {} targets",
                            items.len(),
                            targets.len()
                        ),
                    ));
                }
                for (t, item) in targets.iter().zip(items) {
                    self.assign(t, item)?;
                }
                Ok(())
            }
        }
    }

    fn lookup(&self, name: &str) -> R<Value> {
        self.vars
            .get(name)
            .cloned()
            .ok_or_else(|| exc("NameError", format!("name '{name}' is not defined")))
    }

    fn eval(&mut self, e: &Expr) -> R<Value> {
        match e {
            Expr::Const(c) => Ok(match c {
                Const::None => Value::None,
                Const::Bool(b) => Value::Bool(*b),
                Const::Int(v) => Value::Int(*v),
                Const::Float(v) => Value::Float(*v),
                Const::Str(s) => Value::str(s.as_str()),
            }),
            Expr::Name(n) => self.lookup(n),
            Expr::List(items) => Ok(Value::list(self.eval_all(items)?)),
            Expr::Tuple(items) => Ok(Value::Tuple(Rc::new(self.eval_all(items)?))),
            Expr::Dict(pairs) => {
                let mut out: Vec<(Value, Value)> = Vec::new();
                for (k, v) in pairs {
                    let k = self.eval(k)?;
                    let v = self.eval(v)?;
                    match out.iter_mut().find(|(k2, _)| py_eq(k2, &k)) {
                        Some(slot) => slot.1 = v,
                        None => out.push((k, v)),
                    }
                }
                Ok(Value::Dict(Rc::new(std::cell::RefCell::new(out))))
            }
            Expr::Neg(x) => match self.eval(x)?.as_num() {
                Some(Num::Int(v)) => v
                    .checked_neg()
                    .map(Value::Int)
                    .ok_or_else(|| exc("OverflowError", "integer overflow")),
                Some(Num::Float(v)) => Ok(Value::Float(-v)),
                None => Err(type_err("bad operand type for unary -")),
            },
            Expr::Not(x) => Ok(Value::Bool(!self.eval(x)?.truthy())),
            Expr::And(a, b) => {
                let l = self.eval(a)?;
                if l.truthy() {
                    self.eval(b)
                } else {
                    Ok(l)
                }
            }
            Expr::Or(a, b) => {
                let l = self.eval(a)?;
                if l.truthy() {
                    Ok(l)
                } else {
                    self.eval(b)
                }
            }
            Expr::IfElse(cond, body, orelse) => {
                if self.eval(cond)?.truthy() {
                    self.eval(body)
                } else {
                    self.eval(orelse)
                }
            }
            Expr::Bin(op, a, b) => {
                let l = self.eval(a)?;
                let r = self.eval(b)?;
                binop(*op, &l, &r)
            }
            Expr::Cmp(first, rest) => {
                let mut lhs = self.eval(first)?;
                for (op, rhs) in rest {
                    let rhs = self.eval(rhs)?;
                    if !compare(*op, &lhs, &rhs)? {
                        return Ok(Value::Bool(false));
                    }
                    lhs = rhs;
                }
                Ok(Value::Bool(true))
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj)?;
                let i = self.eval(idx)?;
                index(&o, &i)
            }
            Expr::Slice(obj, lo, hi) => {
                let o = self.eval(obj)?;
                let lo = lo.as_ref().map(|x| self.eval(x)).transpose()?;
                let hi = hi.as_ref().map(|x| self.eval(x)).transpose()?;
                slice(&o, lo.as_ref(), hi.as_ref())
            }
            Expr::Attr(obj, name) => {
                let o = self.eval(obj)?;
                Err(exc(
                    "AttributeError",
                    format!("'{}' object attribute '{name}' is not supported", o.type_name()),
                ))
            }
            Expr::ListComp(elt, target, iter, cond) => {
                let items = iterate(&self.eval(iter)?)?;
                let mut out = Vec::new();
                for item in items {
                    self.tick()?;
                    self.assign(target, item)?;
                    if let Some(c) = cond {
                        if !self.eval(c)?.truthy() {
                            continue;
                        }
                    }
                    out.push(self.eval(elt)?);
                }
                Ok(Value::list(out))
            }
            Expr::Call(func, args, kwargs) => self.call(func, args, kwargs),
        }
    }

    fn eval_all(&mut self, items: &[Expr]) -> R<Vec<Value>> {
        items.iter().map(|x| self.eval(x)).collect()
    }

    fn call(&mut self, func: &Expr, args: &[Expr], kwargs: &[(String, Expr)]) -> R<Value> {
        let argv = self.eval_all(args)?;
        let mut kw = Vec::new();
        for (k, v) in kwargs {
            kw.push((k.clone(), self.eval(v)?));
        }
        match func {
            Expr::Attr(obj, method) => {
                let o = self.eval(obj)?;
                no_kwargs(method, &kw)?;
                call_method(&o, method, argv)
            }
            Expr::Name(name) if !self.vars.contains_key(name) => {
                if TOOLS.contains(&name.as_str()) {
                    no_kwargs(name, &kw)?;
                    return self.tool(name, &argv);
                }
                if EXCEPTIONS.contains(&name.as_str())
                    || crate::toolkit::ToolErrorCode::parse(name).is_some()
                {
                    no_kwargs(name, &kw)?;
                    let msg = argv.first().map(Value::to_str).unwrap_or_default();
                    return Ok(Value::Exception(Rc::new((name.clone(), msg))));
                }
                self.builtin(name, argv, kw)
            }
            other => {
                let v = self.eval(other)?;
                Err(type_err(format!("'{}' object is not callable", v.type_name())))
            }
        }
    }

    fn tool(&mut self, name: &str, args: &[Value]) -> R<Value> {
        let json: Vec<Json> = args.iter().map(Value::to_json).collect();
        match self.port.tool(name, json).map_err(Fault::Abort)? {
            Ok(v) => Ok(Value::from_json(&v)),
            Err((code, message)) => Err(exc(&code, message)),
        }
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, kw: Vec<(String, Value)>) -> R<Value> {
        match name {
            "print" => {
                let mut sep = " ".to_string();
                for (k, v) in &kw {
                    match k.as_str() {
                        "sep" => sep = v.to_str(),
                        "end" => {}
                        _ => return Err(type_err(format!("'{k}' is an invalid keyword argument for print()"))),
                    }
                }
                let parts: Vec<String> = args.iter().map(Value::to_str).collect();
                self.port.print(&parts.join(&sep)).map_err(Fault::Abort)?;
                Ok(Value::None)
            }
            "sorted" => {
                let mut reverse = false;
                for (k, v) in &kw {
                    if k == "reverse" {
                        reverse = v.truthy();
                    } else {
                        return Err(type_err(format!("'{k}' is an invalid keyword argument for sorted()")));
                    }
                }
                let [x] = arity::<1>(name, args)?;
                let mut items = iterate(&x)?;
                sort_values(&mut items)?;
                if reverse {
                    items.reverse();
                }
                Ok(Value::list(items))
            }
            _ => {
                no_kwargs(name, &kw)?;
                call_builtin(name, args)
            }
        }
    }
}

fn matches_handler(h: &Handler, e: &Exc) -> bool {
    match &h.exc {
        None => true,
        Some(n) => n == "Exception" || *n == e.error_type,
    }
}

fn no_kwargs(name: &str, kw: &[(String, Value)]) -> R<()> {
    match kw.first() {
        None => Ok(()),
        Some((k, _)) => Err(type_err(format!("{name}() got an unexpected keyword argument '{k}'"))),
    }
}

fn arity<const N: usize>(name: &str, args: Vec<Value>) -> R<[Value; N]> {
    let n = args.len();
    args.try_into()
        .map_err(|_| type_err(format!("{name}() takes {N} argument(s) ({n} given)")))
}

fn int_of(v: &Value, what: &str) -> R<i64> {
    match v.as_num() {
        Some(Num::Int(i)) => Ok(i),
        _ => Err(type_err(format!(
            "{what} must be integers, not {}",
            v.type_name()
        ))),
    }
}

fn norm_index(i: &Value, len: usize, msg: &str) -> R<usize> {
    let raw = int_of(i, "indices")?;
    let idx = if raw < 0 { raw + len as i64 } else { raw };
    if idx < 0 || idx >= len as i64 {
        Err(exc("IndexError", msg))
    } else {
        Ok(idx as usize)
    }
}

pub fn iterate(v: &Value) -> R<Vec<Value>> {
    match v {
        Value::List(l) => Ok(l.borrow().clone()),
        Value::Tuple(t) => Ok((**t).clone()),
        Value::Str(s) => Ok(s.chars().map(|c| Value::str(c.to_string())).collect()),
        Value::Dict(d) => Ok(d.borrow().iter().map(|(k, _)| k.clone()).collect()),
        Value::Table(t) => Ok(table_rows(t)
            .map(|rows| rows.iter().map(Value::from_json).collect())
            .unwrap_or_default()),
        other => Err(type_err(format!("'{}' object is not iterable", other.type_name()))),
    }
}

fn index(o: &Value, i: &Value) -> R<Value> {
    match o {
        Value::List(l) => {
            let l = l.borrow();
            Ok(l[norm_index(i, l.len(), "list index out of range")?].clone())
        }
        Value::Tuple(t) => Ok(t[norm_index(i, t.len(), "tuple index out of range")?].clone()),
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let c = chars[norm_index(i, chars.len(), "string index out of range")?];
            Ok(Value::str(c.to_string()))
        }
        Value::Dict(d) => d
            .borrow()
            .iter()
            .find(|(k, _)| py_eq(k, i))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| exc("KeyError", i.repr())),
        Value::Table(t) => match i {
            Value::Str(col) => {
                let cols = table_columns(t);
                let Some(pos) = cols.iter().position(|c| c == &**col) else {
                    return Err(exc("KeyError", i.repr()));
                };
                let rows = table_rows(t).cloned().unwrap_or_default();
                Ok(Value::list(
                    rows.iter()
                        .map(|r| r.get(pos).map(Value::from_json).unwrap_or(Value::None))
                        .collect(),
                ))
            }
            _ => {
                let rows = table_rows(t).cloned().unwrap_or_default();
                Ok(Value::from_json(&rows[norm_index(i, rows.len(), "table row index out of range")?]))
            }
        },
        other => Err(type_err(format!(
            "'{}' object is not subscriptable",
            other.type_name()
        ))),
    }
}

fn slice(o: &Value, lo: Option<&Value>, hi: Option<&Value>) -> R<Value> {
    let bounds = |len: usize| -> R<(usize, usize)> {
        let clamp = |v: Option<&Value>, default: i64| -> R<usize> {
            let raw = match v {
                None | Some(Value::None) => default,
                Some(v) => int_of(v, "slice indices")?,
            };
            let adj = if raw < 0 { raw + len as i64 } else { raw };
            Ok(adj.clamp(0, len as i64) as usize)
        };
        let a = clamp(lo, 0)?;
        let b = clamp(hi, len as i64)?;
        Ok((a, b.max(a)))
    };
    match o {
        Value::List(l) => {
            let l = l.borrow();
            let (a, b) = bounds(l.len())?;
            Ok(Value::list(l[a..b].to_vec()))
        }
        Value::Tuple(t) => {
            let (a, b) = bounds(t.len())?;
            Ok(Value::Tuple(Rc::new(t[a..b].to_vec())))
        }
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let (a, b) = bounds(chars.len())?;
            Ok(Value::str(chars[a..b].iter().collect::<String>()))
        }
        other => Err(type_err(format!(
            "'{}' object is not subscriptable",
            other.type_name()
        ))),
    }
}

fn unsupported(op: &str, a: &Value, b: &Value) -> Fault {
    type_err(format!(
        "unsupported operand type(s) for {op}: '{}' and '{}'",
        a.type_name(),
        b.type_name()
    ))
}

fn overflow() -> Fault {
    exc("OverflowError", "integer overflow")
}

pub fn binop(op: BinOp, a: &Value, b: &Value) -> R<Value> {
    let sym = match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::FloorDiv => "//",
        BinOp::Mod => "%",
        BinOp::Pow => "**",
    };
    if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
        return num_op(op, x, y);
    }
    match (op, a, b) {
        (BinOp::Add, Value::Str(x), Value::Str(y)) => Ok(Value::str(format!("{x}{y}"))),
        (BinOp::Add, Value::List(x), Value::List(y)) => {
            let mut v = x.borrow().clone();
            v.extend(y.borrow().iter().cloned());
            Ok(Value::list(v))
        }
        (BinOp::Add, Value::Tuple(x), Value::Tuple(y)) => {
            let mut v = (**x).clone();
            v.extend(y.iter().cloned());
            Ok(Value::Tuple(Rc::new(v)))
        }
        (BinOp::Mul, Value::Str(s), n) | (BinOp::Mul, n, Value::Str(s)) if n.as_num().is_some() => {
            let k = int_of(n, "repeat counts")?.max(0) as usize;
            Ok(Value::str(s.repeat(k)))
        }
        (BinOp::Mul, Value::List(l), n) | (BinOp::Mul, n, Value::List(l)) if n.as_num().is_some() => {
            let k = int_of(n, "repeat counts")?.max(0) as usize;
            let items = l.borrow();
            let mut out = Vec::with_capacity(items.len() * k);
            for _ in 0..k {
                out.extend(items.iter().cloned());
            }
            Ok(Value::list(out))
        }
        _ => Err(unsupported(sym, a, b)),
    }
}

fn num_op(op: BinOp, x: Num, y: Num) -> R<Value> {
    use Num::Int;
    match (op, x, y) {
        (BinOp::Add, Int(a), Int(b)) => a.checked_add(b).map(Value::Int).ok_or_else(overflow),
        (BinOp::Sub, Int(a), Int(b)) => a.checked_sub(b).map(Value::Int).ok_or_else(overflow),
        (BinOp::Mul, Int(a), Int(b)) => a.checked_mul(b).map(Value::Int).ok_or_else(overflow),
        (BinOp::Add, a, b) => Ok(Value::Float(a.f() + b.f())),
        (BinOp::Sub, a, b) => Ok(Value::Float(a.f() - b.f())),
        (BinOp::Mul, a, b) => Ok(Value::Float(a.f() * b.f())),
        (BinOp::Div, a, b) => {
            if b.f() == 0.0 {
                Err(exc("ZeroDivisionError", "division by zero"))
            } else {
                Ok(Value::Float(a.f() / b.f()))
            }
        }
        (BinOp::FloorDiv, Int(a), Int(b)) => {
            if b == 0 {
                return Err(exc("ZeroDivisionError", "integer division or modulo by zero"));
            }
            let q = a.checked_div(b).ok_or_else(overflow)?;
            let adjust = a % b != 0 && ((a < 0) != (b < 0));
            Ok(Value::Int(if adjust { q - 1 } else { q }))
        }
        (BinOp::FloorDiv, a, b) => {
            if b.f() == 0.0 {
                Err(exc("ZeroDivisionError", "float floor division by zero"))
            } else {
                Ok(Value::Float((a.f() / b.f()).floor()))
            }
        }
        (BinOp::Mod, Int(a), Int(b)) => {
            if b == 0 {
                return Err(exc("ZeroDivisionError", "integer division or modulo by zero"));
            }
            let r = a.checked_rem(b).ok_or_else(overflow)?;
            Ok(Value::Int(if r != 0 && ((r < 0) != (b < 0)) { r + b } else { r }))
        }
        (BinOp::Mod, a, b) => {
            let (a, b) = (a.f(), b.f());
            if b == 0.0 {
                return Err(exc("ZeroDivisionError", "float modulo"));
            }
            let r = a % b;
            Ok(Value::Float(if r != 0.0 && ((r < 0.0) != (b < 0.0)) { r + b } else { r }))
        }
        (BinOp::Pow, Int(a), Int(b)) if b >= 0 => {
            let e = u32::try_from(b).map_err(|_| overflow())?;
            a.checked_pow(e).map(Value::Int).ok_or_else(overflow)
        }
        (BinOp::Pow, a, b) => {
            if a.f() == 0.0 && b.f() < 0.0 {
                return Err(exc(
                    "ZeroDivisionError",
                    "0.0 cannot be raised to a negative power",
                ));
            }
            Ok(Value::Float(a.f().powf(b.f())))
        }
    }
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> R<bool> {
    let ordered = |want: fn(std::cmp::Ordering) -> bool, sym: &str| -> R<bool> {
        py_cmp(a, b).map(want).ok_or_else(|| {
            type_err(format!(
                "'{sym}' not supported between instances of '{}' and '{}'",
                a.type_name(),
                b.type_name()
            ))
        })
    };
    match op {
        CmpOp::Eq => Ok(py_eq(a, b)),
        CmpOp::Ne => Ok(!py_eq(a, b)),
        CmpOp::Lt => ordered(|o| o.is_lt(), "<"),
        CmpOp::Le => ordered(|o| o.is_le(), "<="),
        CmpOp::Gt => ordered(|o| o.is_gt(), ">"),
        CmpOp::Ge => ordered(|o| o.is_ge(), ">="),
        CmpOp::In => contains(b, a),
        CmpOp::NotIn => contains(b, a).map(|c| !c),
        CmpOp::Is => Ok(identical(a, b)),
        CmpOp::IsNot => Ok(!identical(a, b)),
    }
}

fn identical(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::None, Value::None) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::List(x), Value::List(y)) => Rc::ptr_eq(x, y),
        (Value::Dict(x), Value::Dict(y)) => Rc::ptr_eq(x, y),
        _ => false,
    }
}

fn contains(container: &Value, item: &Value) -> R<bool> {
    match (container, item) {
        (Value::Str(s), Value::Str(sub)) => Ok(s.contains(&**sub)),
        (Value::Str(_), other) => Err(type_err(format!(
            "'in <string>' requires string as left operand, not {}",
            other.type_name()
        ))),
        (Value::Table(t), Value::Str(col)) => Ok(table_columns(t).iter().any(|c| c == &**col)),
        _ => Ok(iterate(container)?.iter().any(|x| py_eq(x, item))),
    }
}

fn sort_values(items: &mut [Value]) -> R<()> {
    let mut failure = None;
    items.sort_by(|a, b| {
        py_cmp(a, b).unwrap_or_else(|| {
            failure.get_or_insert_with(|| {
                type_err(format!(
                    "'<' not supported between instances of '{}' and '{}'",
                    a.type_name(),
                    b.type_name()
                ))
            });
            std::cmp::Ordering::Equal
        })
    });
    failure.map_or(Ok(()), Err)
}

fn extreme(name: &str, args: Vec<Value>, want: std::cmp::Ordering) -> R<Value> {
    let items = if args.len() == 1 {
        iterate(&args[0])?
    } else {
        args
    };
    let mut best: Option<Value> = None;
    for v in items {
        best = Some(match best {
            None => v,
            Some(b) => match py_cmp(&v, &b) {
                Some(o) if o == want => v,
                Some(_) => b,
                None => {
                    return Err(type_err(format!(
                        "'{}' not supported between instances of '{}' and '{}'",
                        if want.is_lt() { "<" } else { ">" },
                        v.type_name(),
                        b.type_name()
                    )))
                }
            },
        });
    }
    best.ok_or_else(|| exc("ValueError", format!("{name}() arg is an empty sequence")))
}

fn round_half_even(v: f64) -> f64 {
    let r = v.round();
    if (v - v.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - v.signum()
    } else {
        r
    }
}

fn call_builtin(name: &str, args: Vec<Value>) -> R<Value> {
    match name {
        "len" => {
            let [x] = arity::<1>(name, args)?;
            let n = match &x {
                Value::Str(s) => s.chars().count(),
                Value::List(l) => l.borrow().len(),
                Value::Tuple(t) => t.len(),
                Value::Dict(d) => d.borrow().len(),
                Value::Table(t) => table_rows(t).map_or(0, Vec::len),
                other => {
                    return Err(type_err(format!(
                        "object of type '{}' has no len()",
                        other.type_name()
                    )))
                }
            };
            Ok(Value::Int(n as i64))
        }
        "str" => {
            if args.is_empty() {
                return Ok(Value::str(""));
            }
            let [x] = arity::<1>(name, args)?;
            Ok(Value::str(x.to_str()))
        }
        "repr" => {
            let [x] = arity::<1>(name, args)?;
            Ok(Value::str(x.repr()))
        }
        "bool" => {
            let [x] = arity::<1>(name, args)?;
            Ok(Value::Bool(x.truthy()))
        }
        "int" => {
            let [x] = arity::<1>(name, args)?;
            match &x {
                Value::Str(s) => s
                    .trim()
                    .parse::<i64>()
                    .map(Value::Int)
                    .map_err(|_| exc("ValueError", format!("invalid literal for int() with base 10: {}", x.repr()))),
                v => match v.as_num() {
                    Some(Num::Int(i)) => Ok(Value::Int(i)),
                    Some(Num::Float(f)) if f.is_finite() => Ok(Value::Int(f.trunc() as i64)),
                    Some(Num::Float(_)) => Err(exc("ValueError", "cannot convert float NaN or infinity to integer")),
                    None => Err(type_err(format!(
                        "int() argument must be a string or a number, not '{}'",
                        v.type_name()
                    ))),
                },
            }
        }
        "float" => {
            let [x] = arity::<1>(name, args)?;
            match &x {
                Value::Str(s) => {
                    let t = s.trim().to_ascii_lowercase();
                    let parsed = match t.as_str() {
                        "nan" => Some(f64::NAN),
                        "inf" | "infinity" => Some(f64::INFINITY),
                        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
                        _ => t.parse::<f64>().ok(),
                    };
                    parsed.map(Value::Float).ok_or_else(|| {
                        exc("ValueError", format!("could not convert string to float: {}", x.repr()))
                    })
                }
                v => v.as_num().map(|n| Value::Float(n.f())).ok_or_else(|| {
                    type_err(format!(
                        "float() argument must be a string or a number, not '{}'",
                        v.type_name()
                    ))
                }),
            }
        }
        "abs" => {
            let [x] = arity::<1>(name, args)?;
            match x.as_num() {
                Some(Num::Int(i)) => i.checked_abs().map(Value::Int).ok_or_else(overflow),
                Some(Num::Float(f)) => Ok(Value::Float(f.abs())),
                None => Err(type_err(format!("bad operand type for abs(): '{}'", x.type_name()))),
            }
        }
        "round" => {
            let n = args.len();
            let mut it = args.into_iter();
            let x = it.next().ok_or_else(|| type_err("round() takes 1 or 2 arguments (0 given)"))?;
            let digits = it.next();
            if n > 2 {
                return Err(type_err(format!("round() takes 1 or 2 arguments ({n} given)")));
            }
            let num = x
                .as_num()
                .ok_or_else(|| type_err(format!("type {} doesn't define __round__ method", x.type_name())))?;
            match (num, digits) {
                (Num::Int(i), None) => Ok(Value::Int(i)),
                (Num::Float(f), None) => Ok(Value::Int(round_half_even(f) as i64)),
                (Num::Int(i), Some(_)) => Ok(Value::Int(i)),
                (Num::Float(f), Some(d)) => {
                    let d = int_of(&d, "round() digits")?;
                    if !f.is_finite() {
                        return Ok(Value::Float(f));
                    }
                    if d >= 0 {
                        // Exact decimal rounding, ties to even.
                        let text = format!("{:.*}", d.min(300) as usize, f);
                        return Ok(Value::Float(text.parse().unwrap_or(f)));
                    }
                    let scale = 10f64.powi(d.max(-308) as i32);
                    Ok(Value::Float(round_half_even(f * scale) / scale))
                }
            }
        }
        "min" => extreme(name, args, std::cmp::Ordering::Less),
        "max" => extreme(name, args, std::cmp::Ordering::Greater),
        "sum" => {
            if args.is_empty() || args.len() > 2 {
                return Err(type_err("sum() takes 1 or 2 arguments"));
            }
            let mut it = args.into_iter();
            let items = iterate(&it.next().unwrap())?;
            let mut acc = it.next().unwrap_or(Value::Int(0));
            for v in items {
                acc = binop(BinOp::Add, &acc, &v)?;
            }
            Ok(acc)
        }
        "list" => {
            if args.is_empty() {
                return Ok(Value::list(Vec::new()));
            }
            let [x] = arity::<1>(name, args)?;
            Ok(Value::list(iterate(&x)?))
        }
        "tuple" => {
            let [x] = arity::<1>(name, args)?;
            Ok(Value::Tuple(Rc::new(iterate(&x)?)))
        }
        "range" => {
            let ints: Vec<i64> = args.iter().map(|a| int_of(a, "range() arguments")).collect::<R<_>>()?;
            let (start, stop, step) = match ints.as_slice() {
                [stop] => (0, *stop, 1),
                [start, stop] => (*start, *stop, 1),
                [start, stop, step] => (*start, *stop, *step),
                _ => return Err(type_err("range expected 1 to 3 arguments")),
            };
            if step == 0 {
                return Err(exc("ValueError", "range() arg 3 must not be zero"));
            }
            let mut out = Vec::new();
            let mut i = start;
            while (step > 0 && i < stop) || (step < 0 && i > stop) {
                if out.len() >= 10_000_000 {
                    return Err(exc("MemoryError", "range too large"));
                }
                out.push(Value::Int(i));
                i += step;
            }
            Ok(Value::list(out))
        }
        "enumerate" => {
            let [x] = arity::<1>(name, args)?;
            Ok(Value::list(
                iterate(&x)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| Value::Tuple(Rc::new(vec![Value::Int(i as i64), v])))
                    .collect(),
            ))
        }
        "zip" => {
            let seqs: Vec<Vec<Value>> = args.iter().map(iterate).collect::<R<_>>()?;
            let n = seqs.iter().map(Vec::len).min().unwrap_or(0);
            Ok(Value::list(
                (0..n)
                    .map(|i| Value::Tuple(Rc::new(seqs.iter().map(|s| s[i].clone()).collect())))
                    .collect(),
            ))
        }
        "dict" => {
            if !args.is_empty() {
                return Err(type_err("dict() arguments are not supported"));
            }
            Ok(Value::Dict(Rc::new(std::cell::RefCell::new(Vec::new()))))
        }
        "open" | "eval" | "exec" | "compile" | "__import__" | "input" | "globals" | "locals"
        | "getattr" | "setattr" | "vars" | "dir" => Err(exc(
            "NameError",
            format!("name '{name}' is not defined (not available in plans)"),
        )),
        _ => Err(exc("NameError", format!("name '{name}' is not defined"))),
    }
}

fn call_method(o: &Value, method: &str, args: Vec<Value>) -> R<Value> {
    let no_attr = || {
        exc(
            "AttributeError",
            format!("'{}' object has no attribute '{method}'", o.type_name()),
        )
    };
    match o {
        Value::Str(s) => str_method(s, method, args).unwrap_or_else(|| Err(no_attr())),
        Value::List(l) => match method {
            "append" => {
                let [x] = arity::<1>(method, args)?;
                l.borrow_mut().push(x);
                Ok(Value::None)
            }
            "extend" => {
                let [x] = arity::<1>(method, args)?;
                let items = iterate(&x)?;
                l.borrow_mut().extend(items);
                Ok(Value::None)
            }
            "pop" => {
                let len = l.borrow().len();
                if len == 0 {
                    return Err(exc("IndexError", "pop from empty list"));
                }
                let pos = match args.first() {
                    None => len - 1,
                    Some(i) => norm_index(i, len, "pop index out of range")?,
                };
                Ok(l.borrow_mut().remove(pos))
            }
            "index" => {
                let [x] = arity::<1>(method, args)?;
                l.borrow()
                    .iter()
                    .position(|v| py_eq(v, &x))
                    .map(|p| Value::Int(p as i64))
                    .ok_or_else(|| exc("ValueError", format!("{} is not in list", x.repr())))
            }
            "count" => {
                let [x] = arity::<1>(method, args)?;
                Ok(Value::Int(l.borrow().iter().filter(|v| py_eq(v, &x)).count() as i64))
            }
            "sort" => {
                let mut items = l.borrow().clone();
                sort_values(&mut items)?;
                *l.borrow_mut() = items;
                Ok(Value::None)
            }
            "reverse" => {
                l.borrow_mut().reverse();
                Ok(Value::None)
            }
            _ => Err(no_attr()),
        },
        Value::Dict(d) => match method {
            "get" => {
                let mut it = args.into_iter();
                let k = it.next().ok_or_else(|| type_err("get expected at least 1 argument"))?;
                let default = it.next().unwrap_or(Value::None);
                Ok(d.borrow()
                    .iter()
                    .find(|(k2, _)| py_eq(k2, &k))
                    .map(|(_, v)| v.clone())
                    .unwrap_or(default))
            }
            "keys" => Ok(Value::list(d.borrow().iter().map(|(k, _)| k.clone()).collect())),
            "values" => Ok(Value::list(d.borrow().iter().map(|(_, v)| v.clone()).collect())),
            "items" => Ok(Value::list(
                d.borrow()
                    .iter()
                    .map(|(k, v)| Value::Tuple(Rc::new(vec![k.clone(), v.clone()])))
                    .collect(),
            )),
            _ => Err(no_attr()),
        },
        _ => Err(no_attr()),
    }
}

fn str_arg(v: &Value, method: &str) -> R<Rc<str>> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        other => Err(type_err(format!(
            "{method}() argument must be str, not {}",
            other.type_name()
        ))),
    }
}

fn str_method(s: &str, method: &str, args: Vec<Value>) -> Option<R<Value>> {
    let r = (|| -> R<Value> {
        match method {
            "lower" => Ok(Value::str(s.to_lowercase())),
            "upper" => Ok(Value::str(s.to_uppercase())),
            "strip" | "lstrip" | "rstrip" => {
                let set: Option<Vec<char>> = match args.first() {
                    Some(v) => Some(str_arg(v, method)?.chars().collect()),
                    None => None,
                };
                let pred = |c: char| match &set {
                    Some(chars) => chars.contains(&c),
                    None => c.is_whitespace(),
                };
                Ok(Value::str(match method {
                    "strip" => s.trim_matches(pred),
                    "lstrip" => s.trim_start_matches(pred),
                    _ => s.trim_end_matches(pred),
                }))
            }
            "split" => {
                let parts: Vec<Value> = match args.first() {
                    None | Some(Value::None) => s.split_whitespace().map(Value::str).collect(),
                    Some(sep) => {
                        let sep = str_arg(sep, method)?;
                        if sep.is_empty() {
                            return Err(exc("ValueError", "empty separator"));
                        }
                        s.split(&*sep).map(Value::str).collect()
                    }
                };
                Ok(Value::list(parts))
            }
            "startswith" | "endswith" => {
                let [p] = arity::<1>(method, args)?;
                let p = str_arg(&p, method)?;
                Ok(Value::Bool(if method == "startswith" {
                    s.starts_with(&*p)
                } else {
                    s.ends_with(&*p)
                }))
            }
            "replace" => {
                let [a, b] = arity::<2>(method, args)?;
                Ok(Value::str(s.replace(&*str_arg(&a, method)?, &str_arg(&b, method)?)))
            }
            "find" => {
                let [p] = arity::<1>(method, args)?;
                let p = str_arg(&p, method)?;
                Ok(Value::Int(match s.find(&*p) {
                    Some(byte) => s[..byte].chars().count() as i64,
                    None => -1,
                }))
            }
            "count" => {
                let [p] = arity::<1>(method, args)?;
                let p = str_arg(&p, method)?;
                Ok(Value::Int(if p.is_empty() {
                    s.chars().count() as i64 + 1
                } else {
                    s.matches(&*p).count() as i64
                }))
            }
            "join" => {
                let [items] = arity::<1>(method, args)?;
                let parts: Vec<String> = iterate(&items)?
                    .iter()
                    .map(|v| match v {
                        Value::Str(x) => Ok(x.to_string()),
                        other => Err(type_err(format!(
                            "sequence item: expected str instance, {} found",
                            other.type_name()
                        ))),
                    })
                    .collect::<R<_>>()?;
                Ok(Value::str(parts.join(s)))
            }
            "isdigit" => Ok(Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))),
            "format" => {
                let mut out = String::new();
                let mut next = args.iter();
                let mut rest = s;
                while let Some(pos) = rest.find("{}") {
                    out.push_str(&rest[..pos]);
                    let v = next
                        .next()
                        .ok_or_else(|| exc("IndexError", "Replacement index out of range for positional args tuple"))?;
                    out.push_str(&v.to_str());
                    rest = &rest[pos + 2..];
                }
                out.push_str(rest);
                Ok(Value::str(out))
            }
            _ => Err(exc("AttributeError", format!("'str' object has no attribute '{method}'"))),
        }
    })();
    Some(r)
}

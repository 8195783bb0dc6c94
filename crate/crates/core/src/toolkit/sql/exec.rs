use std::cmp::Ordering;
use std::collections::HashMap;

use super::parser::{AggFunc, ArithOp, Expr, OrderKey, Select, SelectItem};
use super::{SqlFault, SqlOutput};
use crate::ehr_store::{Cell, EhrDatabase, TableData, Timestamp};
use crate::toolkit::{compare_cells, CompareOp};

struct Bound<'a> {
    table: &'a TableData,
    name: String,
    alias: Option<String>,
    offset: usize,
}

struct Scope<'a> {
    tables: Vec<Bound<'a>>,
}

/// Expression with column references resolved to offsets in the joined row.
#[derive(Debug, Clone)]
enum Node {
    Col(usize),
    Lit(Cell),
    Neg(Box<Node>),
    Arith(ArithOp, Box<Node>, Box<Node>),
    Cmp(CompareOp, Box<Node>, Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Not(Box<Node>),
    In(Box<Node>, Vec<Node>, bool),
    Like(Box<Node>, Box<Node>, bool),
    IsNull(Box<Node>, bool),
    Agg {
        func: AggFunc,
        distinct: bool,
        arg: Option<Box<Node>>,
        pos: usize,
    },
}

impl<'a> Scope<'a> {
    fn width(&self) -> usize {
        self.tables
            .last()
            .map(|t| t.offset + t.table.columns.len())
            .unwrap_or(0)
    }

    fn find_table(&self, qualifier: &str) -> Option<&Bound<'a>> {
        self.tables
            .iter()
            .find(|t| t.alias.as_deref().is_some_and(|a| a.eq_ignore_ascii_case(qualifier)))
            .or_else(|| {
                self.tables
                    .iter()
                    .find(|t| t.alias.is_none() && t.name.eq_ignore_ascii_case(qualifier))
            })
    }

    fn resolve(&self, table: Option<&str>, name: &str, pos: usize) -> Result<usize, SqlFault> {
        match table {
            Some(q) => {
                let t = self
                    .find_table(q)
                    .ok_or_else(|| SqlFault::new(pos, format!("no such table or alias: {q}")))?;
                t.table
                    .columns
                    .iter()
                    .position(|c| c.name.eq_ignore_ascii_case(name))
                    .map(|i| t.offset + i)
                    .ok_or_else(|| SqlFault::new(pos, format!("no such column: {q}.{name}")))
            }
            None => {
                let mut hits = self.tables.iter().filter_map(|t| {
                    t.table
                        .columns
                        .iter()
                        .position(|c| c.name.eq_ignore_ascii_case(name))
                        .map(|i| t.offset + i)
                });
                let first = hits
                    .next()
                    .ok_or_else(|| SqlFault::new(pos, format!("no such column: {name}")))?;
                if hits.next().is_some() {
                    return Err(SqlFault::new(pos, format!("ambiguous column name: {name}")));
                }
                Ok(first)
            }
        }
    }

    fn bind(&self, e: &Expr, allow_agg: bool) -> Result<Node, SqlFault> {
        let b = |e: &Expr| self.bind(e, allow_agg).map(Box::new);
        Ok(match e {
            Expr::Column { table, name, pos } => Node::Col(self.resolve(table.as_deref(), name, *pos)?),
            Expr::Literal(c) => Node::Lit(c.clone()),
            Expr::Neg(x) => Node::Neg(b(x)?),
            Expr::Arith { op, lhs, rhs, .. } => Node::Arith(*op, b(lhs)?, b(rhs)?),
            Expr::Compare { op, lhs, rhs } => Node::Cmp(*op, b(lhs)?, b(rhs)?),
            Expr::And(l, r) => Node::And(b(l)?, b(r)?),
            Expr::Or(l, r) => Node::Or(b(l)?, b(r)?),
            Expr::Not(x) => Node::Not(b(x)?),
            Expr::InList {
                expr,
                list,
                negated,
            } => Node::In(
                b(expr)?,
                list.iter()
                    .map(|x| self.bind(x, allow_agg))
                    .collect::<Result<_, _>>()?,
                *negated,
            ),
            Expr::Like {
                expr,
                pattern,
                negated,
            } => Node::Like(b(expr)?, b(pattern)?, *negated),
            Expr::IsNull { expr, negated } => Node::IsNull(b(expr)?, *negated),
            Expr::Agg {
                func,
                distinct,
                arg,
                pos,
            } => {
                if !allow_agg {
                    return Err(SqlFault::new(
                        *pos,
                        "aggregate functions are not allowed here",
                    ));
                }
                let arg = match arg {
                    Some(a) => {
                        if a.contains_aggregate() {
                            return Err(SqlFault::new(*pos, "aggregates cannot be nested"));
                        }
                        Some(Box::new(self.bind(a, false)?))
                    }
                    None => None,
                };
                Node::Agg {
                    func: *func,
                    distinct: *distinct,
                    arg,
                    pos: *pos,
                }
            }
        })
    }
}

fn truth(c: &Cell) -> Option<bool> {
    match c {
        Cell::Null => None,
        Cell::Integer(v) => Some(*v != 0),
        Cell::Real(v) => Some(*v != 0.0),
        Cell::Text(s) => Some(s.trim().parse::<f64>().is_ok_and(|v| v != 0.0)),
        Cell::DateTime(_) => Some(true),
    }
}

fn boolean(b: Option<bool>) -> Cell {
    match b {
        None => Cell::Null,
        Some(true) => Cell::Integer(1),
        Some(false) => Cell::Integer(0),
    }
}

/// Comparison with literal coercion: a text operand is read as a number or a
/// timestamp when the other side is one.
pub(super) fn sql_compare(a: &Cell, b: &Cell) -> Option<Ordering> {
    if a.is_null() || b.is_null() {
        return None;
    }
    if let Some(o) = compare_cells(a, b) {
        return Some(o);
    }
    let coerce = |text: &str, like: &Cell| -> Option<Cell> {
        match like {
            Cell::Integer(_) | Cell::Real(_) => text.trim().parse::<f64>().ok().map(Cell::Real),
            Cell::DateTime(_) => Timestamp::parse(text).map(Cell::DateTime),
            _ => None,
        }
    };
    match (a, b) {
        (Cell::Text(s), other) => compare_cells(&coerce(s, other)?, other),
        (other, Cell::Text(s)) => compare_cells(other, &coerce(s, other)?),
        _ => None,
    }
}

fn numeric(c: &Cell) -> Option<Cell> {
    match c {
        Cell::Integer(_) | Cell::Real(_) => Some(c.clone()),
        Cell::Text(s) => {
            let s = s.trim();
            s.parse::<i64>()
                .map(Cell::Integer)
                .or_else(|_| s.parse::<f64>().map(Cell::Real))
                .ok()
        }
        _ => None,
    }
}

fn arith(op: ArithOp, a: &Cell, b: &Cell) -> Cell {
    let (Some(a), Some(b)) = (numeric(a), numeric(b)) else {
        return Cell::Null;
    };
    if let (Cell::Integer(x), Cell::Integer(y)) = (&a, &b) {
        let r = match op {
            ArithOp::Add => x.checked_add(*y),
            ArithOp::Sub => x.checked_sub(*y),
            ArithOp::Mul => x.checked_mul(*y),
            ArithOp::Div if *y == 0 => return Cell::Null,
            ArithOp::Div => x.checked_div(*y),
        };
        if let Some(r) = r {
            return Cell::Integer(r);
        }
    }
    let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
    match op {
        ArithOp::Add => Cell::Real(x + y),
        ArithOp::Sub => Cell::Real(x - y),
        ArithOp::Mul => Cell::Real(x * y),
        ArithOp::Div if y == 0.0 => Cell::Null,
        ArithOp::Div => Cell::Real(x / y),
    }
}

/// SQL LIKE with `%` and `_`, ASCII case-insensitive.
pub(super) fn like(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    // dp[j]: pattern[..i] matches text[..j]
    let mut dp = vec![false; t.len() + 1];
    dp[0] = true;
    for &pc in &p {
        let mut next = vec![false; t.len() + 1];
        if pc == '%' {
            let mut any = false;
            for j in 0..=t.len() {
                any |= dp[j];
                next[j] = any;
            }
        } else {
            for j in 1..=t.len() {
                next[j] = dp[j - 1] && (pc == '_' || pc == t[j - 1]);
            }
        }
        dp = next;
    }
    dp[t.len()]
}

fn dedupe_key(cells: &[Cell]) -> String {
    format!("{cells:?}")
}

fn aggregate(
    func: AggFunc,
    distinct: bool,
    arg: Option<&Node>,
    pos: usize,
    rows: &[Vec<Cell>],
) -> Result<Cell, SqlFault> {
    let Some(arg) = arg else {
        return Ok(Cell::Integer(rows.len() as i64));
    };
    let mut values = Vec::with_capacity(rows.len());
    for r in rows {
        let v = eval(arg, r)?;
        if !v.is_null() {
            values.push(v);
        }
    }
    if distinct {
        let mut seen = std::collections::HashSet::new();
        values.retain(|v| seen.insert(dedupe_key(std::slice::from_ref(v))));
    }
    match func {
        AggFunc::Count => Ok(Cell::Integer(values.len() as i64)),
        AggFunc::Sum | AggFunc::Avg => {
            if values.is_empty() {
                return Ok(Cell::Null);
            }
            let nums: Vec<Cell> = values
                .iter()
                .map(|v| {
                    numeric(v).ok_or_else(|| {
                        SqlFault::new(pos, format!("cannot aggregate non-numeric value {v}"))
                    })
                })
                .collect::<Result<_, _>>()?;
            if func == AggFunc::Sum {
                let int_sum = nums.iter().try_fold(0i64, |acc, v| match v {
                    Cell::Integer(x) => acc.checked_add(*x),
                    _ => None,
                });
                if let Some(s) = int_sum {
                    return Ok(Cell::Integer(s));
                }
                return Ok(Cell::Real(nums.iter().filter_map(Cell::as_f64).sum()));
            }
            let total: f64 = nums.iter().filter_map(Cell::as_f64).sum();
            Ok(Cell::Real(total / nums.len() as f64))
        }
        AggFunc::Min | AggFunc::Max => {
            let want = if func == AggFunc::Max {
                Ordering::Greater
            } else {
                Ordering::Less
            };
            Ok(values
                .into_iter()
                .fold(None::<Cell>, |best, v| match best {
                    Some(b) if sql_compare(&v, &b) != Some(want) => Some(b),
                    _ => Some(v),
                })
                .unwrap_or(Cell::Null))
        }
    }
}

/// Evaluates against one joined row. Aggregates are not valid here.
fn eval(n: &Node, row: &[Cell]) -> Result<Cell, SqlFault> {
    eval_in(n, row, None)
}

/// `group` carries the rows an aggregate folds over; plain columns read the
/// group's first row (`row`).
fn eval_in(n: &Node, row: &[Cell], group: Option<&[Vec<Cell>]>) -> Result<Cell, SqlFault> {
    let ev = |x: &Node| eval_in(x, row, group);
    Ok(match n {
        Node::Col(i) => row.get(*i).cloned().unwrap_or(Cell::Null),
        Node::Lit(c) => c.clone(),
        Node::Neg(x) => arith(ArithOp::Sub, &Cell::Integer(0), &ev(x)?),
        Node::Arith(op, l, r) => arith(*op, &ev(l)?, &ev(r)?),
        Node::Cmp(op, l, r) => boolean(sql_compare(&ev(l)?, &ev(r)?).map(|o| op.holds(o))),
        Node::And(l, r) => {
            let (a, b) = (truth(&ev(l)?), truth(&ev(r)?));
            boolean(match (a, b) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            })
        }
        Node::Or(l, r) => {
            let (a, b) = (truth(&ev(l)?), truth(&ev(r)?));
            boolean(match (a, b) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            })
        }
        Node::Not(x) => boolean(truth(&ev(x)?).map(|b| !b)),
        Node::In(x, list, negated) => {
            let v = ev(x)?;
            if v.is_null() {
                return Ok(Cell::Null);
            }
            let mut found = false;
            let mut saw_null = false;
            for item in list {
                let c = ev(item)?;
                match sql_compare(&v, &c) {
                    Some(Ordering::Equal) => found = true,
                    None if c.is_null() => saw_null = true,
                    _ => {}
                }
            }
            boolean(if found {
                Some(!negated)
            } else if saw_null {
                None
            } else {
                Some(*negated)
            })
        }
        Node::Like(x, p, negated) => {
            let (v, p) = (ev(x)?, ev(p)?);
            if v.is_null() || p.is_null() {
                Cell::Null
            } else {
                boolean(Some(like(&v.to_string(), &p.to_string()) != *negated))
            }
        }
        Node::IsNull(x, negated) => boolean(Some(ev(x)?.is_null() != *negated)),
        Node::Agg {
            func,
            distinct,
            arg,
            pos,
        } => match group {
            Some(rows) => aggregate(*func, *distinct, arg.as_deref(), *pos, rows)?,
            None => {
                return Err(SqlFault::new(
                    *pos,
                    "aggregate functions are not allowed here",
                ))
            }
        },
    })
}

fn passes(n: &Node, row: &[Cell]) -> Result<bool, SqlFault> {
    Ok(truth(&eval(n, row)?) == Some(true))
}

enum Projection {
    Node(Node),
    Column(usize),
}

enum OrderSource {
    Output(usize),
    Node(Node),
}

fn display_name(e: &Expr) -> String {
    match e {
        Expr::Column { name, .. } => name.clone(),
        Expr::Agg { func, arg, .. } => {
            let f = format!("{func:?}").to_uppercase();
            match arg.as_deref() {
                None => format!("{f}(*)"),
                Some(a) => format!("{f}({})", display_name(a)),
            }
        }
        _ => "expr".into(),
    }
}

pub(super) fn execute(db: &EhrDatabase, stmt: &Select) -> Result<SqlOutput, SqlFault> {
    let mut scope = Scope { tables: Vec::new() };
    for t in &stmt.from {
        let table = db
            .tables()
            .iter()
            .find(|x| x.name.eq_ignore_ascii_case(&t.name))
            .ok_or_else(|| SqlFault::new(t.pos, format!("no such table: {}", t.name)))?;
        let offset = scope.width();
        scope.tables.push(Bound {
            table,
            name: t.name.clone(),
            alias: t.alias.clone(),
            offset,
        });
    }

    // Nested-loop join, left to right. An ON condition may only see the
    // tables joined so far; binding against the partial scope enforces that.
    let mut joined: Vec<Vec<Cell>> = vec![Vec::new()];
    for (i, tref) in stmt.from.iter().enumerate() {
        let partial = Scope {
            tables: scope
                .tables
                .iter()
                .take(i + 1)
                .map(|b| Bound {
                    table: b.table,
                    name: b.name.clone(),
                    alias: b.alias.clone(),
                    offset: b.offset,
                })
                .collect(),
        };
        let on = tref
            .on
            .as_ref()
            .map(|e| partial.bind(e, false))
            .transpose()?;
        let right = scope.tables[i].table;
        let mut next = Vec::with_capacity(joined.len() * right.rows.len().max(1));
        for left in &joined {
            for r in &right.rows {
                let mut row = Vec::with_capacity(left.len() + r.len());
                row.extend(left.iter().cloned());
                row.extend(r.iter().cloned());
                let keep = match &on {
                    Some(cond) => passes(cond, &row)?,
                    None => true,
                };
                if keep {
                    next.push(row);
                }
            }
        }
        joined = next;
    }

    if let Some(f) = &stmt.filter {
        let cond = scope.bind(f, false)?;
        let mut kept = Vec::with_capacity(joined.len());
        for row in joined {
            if passes(&cond, &row)? {
                kept.push(row);
            }
        }
        joined = kept;
    }

    let grouped = !stmt.group_by.is_empty()
        || stmt.items.iter().any(|i| match i {
            SelectItem::Expr { expr, .. } => expr.contains_aggregate(),
            _ => false,
        })
        || stmt.order_by.iter().any(|k| k.expr.contains_aggregate());

    let mut columns = Vec::new();
    let mut projections = Vec::new();
    for item in &stmt.items {
        match item {
            SelectItem::Wildcard => {
                for b in &scope.tables {
                    for (i, c) in b.table.columns.iter().enumerate() {
                        columns.push(c.name.clone());
                        projections.push(Projection::Column(b.offset + i));
                    }
                }
            }
            SelectItem::TableWildcard(q, pos) => {
                let b = scope
                    .find_table(q)
                    .ok_or_else(|| SqlFault::new(*pos, format!("no such table or alias: {q}")))?;
                for (i, c) in b.table.columns.iter().enumerate() {
                    columns.push(c.name.clone());
                    projections.push(Projection::Column(b.offset + i));
                }
            }
            SelectItem::Expr { expr, alias } => {
                columns.push(alias.clone().unwrap_or_else(|| display_name(expr)));
                projections.push(Projection::Node(scope.bind(expr, grouped)?));
            }
        }
    }

    let order_sources = stmt
        .order_by
        .iter()
        .map(|OrderKey { expr, .. }| -> Result<OrderSource, SqlFault> {
            if let Expr::Literal(Cell::Integer(n)) = expr {
                let n = *n;
                if n < 1 || n as usize > columns.len() {
                    return Err(SqlFault::new(
                        1,
                        format!("ORDER BY position {n} is out of range"),
                    ));
                }
                return Ok(OrderSource::Output(n as usize - 1));
            }
            if let Expr::Column {
                table: None, name, ..
            } = expr
            {
                let aliased = stmt.items.iter().enumerate().find_map(|(i, it)| match it {
                    SelectItem::Expr {
                        alias: Some(a), ..
                    } if a.eq_ignore_ascii_case(name) => Some(i),
                    _ => None,
                });
                if let Some(i) = aliased {
                    // Wildcards before the alias shift output positions.
                    let before: usize = stmt.items[..i]
                        .iter()
                        .map(|it| match it {
                            SelectItem::Expr { .. } => 1,
                            SelectItem::Wildcard => scope
                                .tables
                                .iter()
                                .map(|b| b.table.columns.len())
                                .sum(),
                            SelectItem::TableWildcard(q, _) => scope
                                .find_table(q)
                                .map(|b| b.table.columns.len())
                                .unwrap_or(0),
                        })
                        .sum();
                    return Ok(OrderSource::Output(before));
                }
            }
            Ok(OrderSource::Node(scope.bind(expr, grouped)?))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // Each unit is (representative row, rows it stands for).
    let units: Vec<(Vec<Cell>, Vec<Vec<Cell>>)> = if grouped {
        let keys: Vec<Node> = stmt
            .group_by
            .iter()
            .map(|e| scope.bind(e, false))
            .collect::<Result<_, _>>()?;
        if keys.is_empty() {
            let first = joined
                .first()
                .cloned()
                .unwrap_or_else(|| vec![Cell::Null; scope.width()]);
            vec![(first, joined)]
        } else {
            let mut index: HashMap<String, usize> = HashMap::new();
            let mut groups: Vec<(Vec<Cell>, Vec<Vec<Cell>>)> = Vec::new();
            for row in joined {
                let key: Vec<Cell> = keys.iter().map(|k| eval(k, &row)).collect::<Result<_, _>>()?;
                let slot = *index.entry(dedupe_key(&key)).or_insert_with(|| {
                    groups.push((row.clone(), Vec::new()));
                    groups.len() - 1
                });
                groups[slot].1.push(row);
            }
            groups
        }
    } else {
        joined.into_iter().map(|r| (r, Vec::new())).collect()
    };

    let mut produced: Vec<(Vec<Cell>, Vec<Cell>)> = Vec::with_capacity(units.len());
    for (row, group) in &units {
        let g = grouped.then_some(group.as_slice());
        let out: Vec<Cell> = projections
            .iter()
            .map(|p| match p {
                Projection::Column(i) => Ok(row[*i].clone()),
                Projection::Node(n) => eval_in(n, row, g),
            })
            .collect::<Result<_, _>>()?;
        let keys: Vec<Cell> = order_sources
            .iter()
            .map(|s| match s {
                OrderSource::Output(i) => Ok(out[*i].clone()),
                OrderSource::Node(n) => eval_in(n, row, g),
            })
            .collect::<Result<_, _>>()?;
        produced.push((out, keys));
    }

    if stmt.distinct {
        let mut seen = std::collections::HashSet::new();
        produced.retain(|(out, _)| seen.insert(dedupe_key(out)));
    }

    if !stmt.order_by.is_empty() {
        produced.sort_by(|(_, a), (_, b)| {
            for (k, (x, y)) in stmt.order_by.iter().zip(a.iter().zip(b)) {
                let o = match (x.is_null(), y.is_null()) {
                    (true, true) => Ordering::Equal,
                    (true, false) => Ordering::Less,
                    (false, true) => Ordering::Greater,
                    _ => sql_compare(x, y)
                        .unwrap_or_else(|| x.to_string().cmp(&y.to_string())),
                };
                let o = if k.descending { o.reverse() } else { o };
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        });
    }

    let mut rows: Vec<Vec<Cell>> = produced.into_iter().map(|(o, _)| o).collect();
    if let Some(n) = stmt.limit {
        rows.truncate(n);
    }
    Ok(SqlOutput { columns, rows })
}

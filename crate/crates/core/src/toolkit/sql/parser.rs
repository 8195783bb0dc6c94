use super::lexer::{Tok, Token};
use super::SqlFault;
use crate::ehr_store::Cell;
use crate::toolkit::CompareOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column {
        table: Option<String>,
        name: String,
        pos: usize,
    },
    Literal(Cell),
    Neg(Box<Expr>),
    Arith {
        op: ArithOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        pos: usize,
    },
    Compare {
        op: CompareOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    InList {
        expr: Box<Expr>,
        list: Vec<Expr>,
        negated: bool,
    },
    Like {
        expr: Box<Expr>,
        pattern: Box<Expr>,
        negated: bool,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    /// `arg == None` is `COUNT(*)`.
    Agg {
        func: AggFunc,
        distinct: bool,
        arg: Option<Box<Expr>>,
        pos: usize,
    },
}

impl Expr {
    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Agg { .. } => true,
            Expr::Column { .. } | Expr::Literal(_) => false,
            Expr::Neg(e) | Expr::Not(e) | Expr::IsNull { expr: e, .. } => e.contains_aggregate(),
            Expr::Arith { lhs, rhs, .. }
            | Expr::Compare { lhs, rhs, .. }
            | Expr::And(lhs, rhs)
            | Expr::Or(lhs, rhs) => lhs.contains_aggregate() || rhs.contains_aggregate(),
            Expr::InList { expr, list, .. } => {
                expr.contains_aggregate() || list.iter().any(Expr::contains_aggregate)
            }
            Expr::Like { expr, pattern, .. } => {
                expr.contains_aggregate() || pattern.contains_aggregate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    TableWildcard(String, usize),
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
    pub pos: usize,
    /// `ON` condition for an explicit join; `None` for the first table and
    /// comma joins.
    pub on: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderKey {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: Vec<TableRef>,
    pub filter: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub order_by: Vec<OrderKey>,
    pub limit: Option<usize>,
}

pub const MAX_TABLES: usize = 3;

const RESERVED: &[&str] = &[
    "SELECT", "DISTINCT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "ASC", "DESC", "LIMIT", "AND",
    "OR", "NOT", "IN", "LIKE", "IS", "NULL", "AS", "JOIN", "INNER", "ON", "LEFT", "RIGHT",
    "OUTER", "CROSS", "UNION", "HAVING", "OFFSET",
];

fn is_reserved(tok: &Token) -> bool {
    RESERVED.iter().any(|k| tok.keyword(k))
}

pub struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    pub fn new(toks: Vec<Token>) -> Parser {
        Parser { toks, at: 0 }
    }

    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.toks[(self.at + n).min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T, SqlFault> {
        let t = self.peek();
        Err(SqlFault::new(
            t.pos,
            format!("expected {wanted}, found {}", t.describe()),
        ))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek().keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlFault> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.unexpected(kw)
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if &self.peek().tok == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), SqlFault> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.unexpected(what)
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), SqlFault> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident { text, quoted } if *quoted || !is_reserved(&t) => {
                self.bump();
                Ok((text.clone(), t.pos))
            }
            _ => self.unexpected(what),
        }
    }

    pub fn statement(&mut self) -> Result<Select, SqlFault> {
        self.expect_keyword("SELECT")?;
        let distinct = self.eat_keyword("DISTINCT");
        let mut items = vec![self.select_item()?];
        while self.eat(&Tok::Comma) {
            items.push(self.select_item()?);
        }
        self.expect_keyword("FROM")?;
        let mut from = vec![self.table_ref(None)?];
        loop {
            if self.eat(&Tok::Comma) {
                from.push(self.table_ref(None)?);
            } else if self.peek().keyword("INNER") || self.peek().keyword("JOIN") {
                self.eat_keyword("INNER");
                self.expect_keyword("JOIN")?;
                let mut t = self.table_ref(None)?;
                self.expect_keyword("ON")?;
                t.on = Some(self.expr()?);
                from.push(t);
            } else {
                break;
            }
            if from.len() > MAX_TABLES {
                let pos = from.last().map(|t| t.pos).unwrap_or(1);
                return Err(SqlFault::new(
                    pos,
                    format!("at most {MAX_TABLES} tables may be joined"),
                ));
            }
        }
        let filter = if self.eat_keyword("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            group_by.push(self.expr()?);
            while self.eat(&Tok::Comma) {
                group_by.push(self.expr()?);
            }
        }
        let mut order_by = Vec::new();
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let expr = self.expr()?;
                let descending = if self.eat_keyword("DESC") {
                    true
                } else {
                    self.eat_keyword("ASC");
                    false
                };
                order_by.push(OrderKey { expr, descending });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let limit = if self.eat_keyword("LIMIT") {
            let t = self.bump();
            match &t.tok {
                Tok::Number(n) => Some(n.parse::<usize>().map_err(|_| {
                    SqlFault::new(t.pos, format!("LIMIT expects a non-negative integer, found {n}"))
                })?),
                _ => {
                    return Err(SqlFault::new(
                        t.pos,
                        format!("expected an integer after LIMIT, found {}", t.describe()),
                    ))
                }
            }
        } else {
            None
        };
        self.eat(&Tok::Semi);
        if self.peek().tok != Tok::End {
            return self.unexpected("end of statement");
        }
        Ok(Select {
            distinct,
            items,
            from,
            filter,
            group_by,
            order_by,
            limit,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlFault> {
        if self.eat(&Tok::Star) {
            return Ok(SelectItem::Wildcard);
        }
        if matches!(self.peek().tok, Tok::Ident { .. })
            && self.peek_at(1).tok == Tok::Dot
            && self.peek_at(2).tok == Tok::Star
        {
            let (name, pos) = self.ident("a table name")?;
            self.bump();
            self.bump();
            return Ok(SelectItem::TableWildcard(name, pos));
        }
        let expr = self.expr()?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident("an alias")?.0)
        } else if matches!(self.peek().tok, Tok::Ident { .. }) && !is_reserved(self.peek()) {
            Some(self.ident("an alias")?.0)
        } else {
            None
        };
        Ok(SelectItem::Expr { expr, alias })
    }

    fn table_ref(&mut self, on: Option<Expr>) -> Result<TableRef, SqlFault> {
        let (name, pos) = self.ident("a table name")?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident("a table alias")?.0)
        } else if matches!(self.peek().tok, Tok::Ident { .. }) && !is_reserved(self.peek()) {
            Some(self.ident("a table alias")?.0)
        } else {
            None
        };
        Ok(TableRef {
            name,
            alias,
            pos,
            on,
        })
    }

    pub fn expr(&mut self) -> Result<Expr, SqlFault> {
        let mut lhs = self.and_expr()?;
        while self.eat_keyword("OR") {
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and_expr()?));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlFault> {
        let mut lhs = self.not_expr()?;
        while self.eat_keyword("AND") {
            lhs = Expr::And(Box::new(lhs), Box::new(self.not_expr()?));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlFault> {
        if self.eat_keyword("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Expr, SqlFault> {
        let lhs = self.additive()?;
        let op = match self.peek().tok {
            Tok::Eq => Some(CompareOp::Eq),
            Tok::Ne => Some(CompareOp::Ne),
            Tok::Lt => Some(CompareOp::Lt),
            Tok::Le => Some(CompareOp::Le),
            Tok::Gt => Some(CompareOp::Gt),
            Tok::Ge => Some(CompareOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let rhs = self.additive()?;
            return Ok(Expr::Compare {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            });
        }
        if self.eat_keyword("IS") {
            let negated = self.eat_keyword("NOT");
            self.expect_keyword("NULL")?;
            return Ok(Expr::IsNull {
                expr: Box::new(lhs),
                negated,
            });
        }
        let negated = if self.peek().keyword("NOT")
            && (self.peek_at(1).keyword("IN") || self.peek_at(1).keyword("LIKE"))
        {
            self.bump();
            true
        } else {
            false
        };
        if self.eat_keyword("IN") {
            self.expect(&Tok::LParen, "'('")?;
            if self.peek().keyword("SELECT") {
                let pos = self.peek().pos;
                return Err(SqlFault::new(pos, "subqueries are not supported"));
            }
            let mut list = vec![self.additive()?];
            while self.eat(&Tok::Comma) {
                list.push(self.additive()?);
            }
            self.expect(&Tok::RParen, "')'")?;
            return Ok(Expr::InList {
                expr: Box::new(lhs),
                list,
                negated,
            });
        }
        if self.eat_keyword("LIKE") {
            let pattern = self.additive()?;
            return Ok(Expr::Like {
                expr: Box::new(lhs),
                pattern: Box::new(pattern),
                negated,
            });
        }
        if negated {
            return self.unexpected("IN or LIKE");
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, SqlFault> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.bump().pos;
            let rhs = self.multiplicative()?;
            lhs = Expr::Arith {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                pos,
            };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, SqlFault> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => return Ok(lhs),
            };
            let pos = self.bump().pos;
            let rhs = self.unary()?;
            lhs = Expr::Arith {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                pos,
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, SqlFault> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(&Tok::Plus) {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SqlFault> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(n) => {
                self.bump();
                let cell = if let Ok(v) = n.parse::<i64>() {
                    Cell::Integer(v)
                } else if let Ok(v) = n.parse::<f64>() {
                    Cell::Real(v)
                } else {
                    return Err(SqlFault::new(t.pos, format!("malformed number {n}")));
                };
                Ok(Expr::Literal(cell))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Cell::Text(s.clone())))
            }
            Tok::LParen => {
                self.bump();
                if self.peek().keyword("SELECT") {
                    return Err(SqlFault::new(self.peek().pos, "subqueries are not supported"));
                }
                let e = self.expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident { .. } if t.keyword("NULL") => {
                self.bump();
                Ok(Expr::Literal(Cell::Null))
            }
            Tok::Ident { text, quoted } => {
                if !quoted && self.peek_at(1).tok == Tok::LParen {
                    let func = match text.to_ascii_uppercase().as_str() {
                        "COUNT" => AggFunc::Count,
                        "SUM" => AggFunc::Sum,
                        "AVG" => AggFunc::Avg,
                        "MIN" => AggFunc::Min,
                        "MAX" => AggFunc::Max,
                        _ => {
                            return Err(SqlFault::new(
                                t.pos,
                                format!("unsupported function {text}()"),
                            ))
                        }
                    };
                    self.bump();
                    self.bump();
                    let distinct = self.eat_keyword("DISTINCT");
                    let arg = if func == AggFunc::Count && !distinct && self.eat(&Tok::Star) {
                        None
                    } else {
                        Some(Box::new(self.expr()?))
                    };
                    self.expect(&Tok::RParen, "')'")?;
                    return Ok(Expr::Agg {
                        func,
                        distinct,
                        arg,
                        pos: t.pos,
                    });
                }
                let (first, pos) = self.ident("an expression")?;
                if self.eat(&Tok::Dot) {
                    let (name, _) = self.ident("a column name")?;
                    return Ok(Expr::Column {
                        table: Some(first),
                        name,
                        pos,
                    });
                }
                Ok(Expr::Column {
                    table: None,
                    name: first,
                    pos,
                })
            }
            _ => self.unexpected("an expression"),
        }
    }
}

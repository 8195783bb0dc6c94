//! Read-only SELECT subset evaluated over the in-memory tables.
//!
//! Supported: a SELECT list of columns, arithmetic, `COUNT/SUM/AVG/MIN/MAX`
//! (optionally `DISTINCT`), `SELECT DISTINCT`; `FROM` with up to three
//! tables joined by commas or `[INNER] JOIN ... ON`; `WHERE` with
//! `AND/OR/NOT`, the six comparators, `IN (...)`, `LIKE`, `IS [NOT] NULL`;
//! `GROUP BY`; `ORDER BY ... ASC|DESC`; `LIMIT`. Identifiers and keywords are
//! case-insensitive; text comparison is case-sensitive except under `LIKE`.
//!
//! Row order is deterministic: the ORDER BY order when given (stable, NULLs
//! first ascending), otherwise scan order, with joins enumerated as nested
//! loops from left to right. Groups appear in order of first occurrence.

mod exec;
mod lexer;
mod parser;

use std::fmt;

use super::{ToolError, ToolErrorCode};
use crate::ehr_store::{Cell, EhrDatabase};

pub use parser::{AggFunc, Select};

/// A parse, planning or runtime failure at a 1-based character position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlFault {
    pub pos: usize,
    pub detail: String,
}

impl SqlFault {
    pub(crate) fn new(pos: usize, detail: impl Into<String>) -> SqlFault {
        SqlFault {
            pos,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for SqlFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SQL error at position {}: {}", self.pos, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqlOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

pub fn parse(sql: &str) -> Result<Select, SqlFault> {
    parser::Parser::new(lexer::tokenize(sql)?).statement()
}

/// Runs one statement and keeps the column names. Zero rows is not an error
/// at this level.
pub fn query(db: &EhrDatabase, sql: &str) -> Result<SqlOutput, SqlFault> {
    let stmt = parse(sql)?;
    exec::execute(db, &stmt)
}

pub fn sql_interpreter(db: &EhrDatabase, sql: &str) -> Result<Vec<Vec<Cell>>, ToolError> {
    let out = query(db, sql)
        .map_err(|f| ToolError::new(ToolErrorCode::SqlError, f.to_string()))?;
    if out.rows.is_empty() {
        return Err(ToolError::new(
            ToolErrorCode::EmptyResult,
            format!("the query returned no rows: {}", sql.trim()),
        ));
    }
    Ok(out.rows)
}

#[cfg(test)]
mod tests;

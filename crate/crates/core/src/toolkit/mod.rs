//! The six tools available to generated plans.
//!
//! Tool semantics live here and only here: the executor bridge forwards
//! sandbox RPCs to [`dispatch`], and the CLI `tools exec` command calls the
//! same functions directly.

mod calculator;
mod calendar;
mod condition;
pub mod sql;
pub mod wire;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr_store::{Cell, EhrDatabase, TableData};

pub use calculator::calculate;
pub use calendar::{calendar, shift, Offset, OffsetUnit};
pub use condition::{filter_db, parse_condition, Condition, Extremum};
pub use sql::sql_interpreter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolErrorCode {
    UnknownTable,
    UnknownColumn,
    BadCondition,
    EmptyResult,
    BadExpression,
    BadDate,
    SqlError,
}

impl ToolErrorCode {
    pub const ALL: [ToolErrorCode; 7] = [
        ToolErrorCode::UnknownTable,
        ToolErrorCode::UnknownColumn,
        ToolErrorCode::BadCondition,
        ToolErrorCode::EmptyResult,
        ToolErrorCode::BadExpression,
        ToolErrorCode::BadDate,
        ToolErrorCode::SqlError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolErrorCode::UnknownTable => "UnknownTable",
            ToolErrorCode::UnknownColumn => "UnknownColumn",
            ToolErrorCode::BadCondition => "BadCondition",
            ToolErrorCode::EmptyResult => "EmptyResult",
            ToolErrorCode::BadExpression => "BadExpression",
            ToolErrorCode::BadDate => "BadDate",
            ToolErrorCode::SqlError => "SqlError",
        }
    }

    pub fn parse(text: &str) -> Option<ToolErrorCode> {
        Self::ALL.into_iter().find(|c| c.as_str() == text)
    }
}

impl fmt::Display for ToolErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tool failure. The message is shown to the agent verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ToolError {
    pub code: ToolErrorCode,
    pub message: String,
}

impl ToolError {
    pub fn new(code: ToolErrorCode, message: impl Into<String>) -> ToolError {
        ToolError {
            code,
            message: message.into(),
        }
    }
}

pub(crate) fn unknown_column(table: &TableData, column: &str) -> ToolError {
    let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    ToolError::new(
        ToolErrorCode::UnknownColumn,
        format!(
            "column '{column}' does not exist in table '{}'; available columns: {}",
            table.name,
            names.join(", ")
        ),
    )
}

/// Relational operators shared by the condition grammar and SQL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn is_ordered(self) -> bool {
        !matches!(self, CompareOp::Eq | CompareOp::Ne)
    }
}

/// Orders two non-null cells of compatible kinds; `None` when they cannot be
/// compared (a null, or mismatched kinds).
pub fn compare_cells(a: &Cell, b: &Cell) -> Option<Ordering> {
    match (a, b) {
        (Cell::Integer(x), Cell::Integer(y)) => Some(x.cmp(y)),
        (Cell::Integer(_) | Cell::Real(_), Cell::Integer(_) | Cell::Real(_)) => {
            a.as_f64()?.partial_cmp(&b.as_f64()?)
        }
        (Cell::Text(x), Cell::Text(y)) => Some(x.cmp(y)),
        (Cell::DateTime(x), Cell::DateTime(y)) => Some(x.at.cmp(&y.at)),
        _ => None,
    }
}

/// What a tool hands back to the plan.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolValue {
    Table(TableData),
    Scalar(Cell),
    List(Vec<Cell>),
    Rows(Vec<Vec<Cell>>),
    Number(f64),
    Text(String),
}

impl ToolValue {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ToolValue::Table(t) => wire::table_to_wire(t),
            ToolValue::Scalar(c) => c.to_json(),
            ToolValue::List(cells) => cells.iter().map(Cell::to_json).collect(),
            ToolValue::Rows(rows) => rows
                .iter()
                .map(|r| r.iter().map(Cell::to_json).collect::<serde_json::Value>())
                .collect(),
            ToolValue::Number(v) => number_to_json(*v),
            ToolValue::Text(s) => s.clone().into(),
        }
    }
}

/// Integral results travel as JSON integers so a plan printing `20` sees `20`.
pub fn number_to_json(v: f64) -> serde_json::Value {
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        serde_json::Value::from(v as i64)
    } else {
        serde_json::Number::from_f64(v)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    }
}

impl fmt::Display for ToolValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolValue::Table(t) => {
                let header: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
                writeln!(f, "{}", header.join("\t"))?;
                for row in &t.rows {
                    let cells: Vec<String> = row.iter().map(Cell::to_string).collect();
                    writeln!(f, "{}", cells.join("\t"))?;
                }
                Ok(())
            }
            ToolValue::Scalar(c) => write!(f, "{c}"),
            ToolValue::List(cells) => {
                let parts: Vec<String> = cells.iter().map(Cell::to_string).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            ToolValue::Rows(rows) => {
                for row in rows {
                    let cells: Vec<String> = row.iter().map(Cell::to_string).collect();
                    writeln!(f, "{}", cells.join("\t"))?;
                }
                Ok(())
            }
            ToolValue::Number(v) => write!(f, "{}", number_to_json(*v)),
            ToolValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolName {
    LoadDB,
    FilterDB,
    GetValue,
    Calculate,
    Calendar,
    SQLInterpreter,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::LoadDB,
        ToolName::FilterDB,
        ToolName::GetValue,
        ToolName::Calculate,
        ToolName::Calendar,
        ToolName::SQLInterpreter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::LoadDB => "LoadDB",
            ToolName::FilterDB => "FilterDB",
            ToolName::GetValue => "GetValue",
            ToolName::Calculate => "Calculate",
            ToolName::Calendar => "Calendar",
            ToolName::SQLInterpreter => "SQLInterpreter",
        }
    }

    pub fn parse(text: &str) -> Option<ToolName> {
        Self::ALL.into_iter().find(|n| n.as_str() == text)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn load_db<'a>(db: &'a EhrDatabase, table_name: &str) -> Result<&'a TableData, ToolError> {
    db.table(table_name).ok_or_else(|| {
        let mut names: Vec<&str> = db.tables().iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        ToolError::new(
            ToolErrorCode::UnknownTable,
            format!(
                "table '{table_name}' does not exist (names are case-sensitive); available tables: {}",
                names.join(", ")
            ),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Max,
    Min,
    Sum,
    Count,
}

impl Aggregate {
    fn as_str(self) -> &'static str {
        match self {
            Aggregate::Mean => "mean",
            Aggregate::Max => "max",
            Aggregate::Min => "min",
            Aggregate::Sum => "sum",
            Aggregate::Count => "count",
        }
    }

    fn parse(text: &str) -> Option<Aggregate> {
        match text.trim().to_ascii_lowercase().as_str() {
            "mean" => Some(Aggregate::Mean),
            "max" => Some(Aggregate::Max),
            "min" => Some(Aggregate::Min),
            "sum" => Some(Aggregate::Sum),
            "count" => Some(Aggregate::Count),
            _ => None,
        }
    }
}

/// `"COLUMN"` returns every non-null value in row order; `"COLUMN, AGG"`
/// folds the column with one of mean, max, min, sum, count.
pub fn get_value(table: &TableData, spec: &str) -> Result<ToolValue, ToolError> {
    let mut parts = spec.split(',');
    let column = parts.next().unwrap_or("").trim();
    let agg = parts.next();
    if column.is_empty() || parts.next().is_some() {
        return Err(ToolError::new(
            ToolErrorCode::BadCondition,
            format!("malformed value spec {spec:?}; expected \"COLUMN\" or \"COLUMN, AGGREGATE\""),
        ));
    }
    let idx = table
        .column_index(column)
        .ok_or_else(|| unknown_column(table, column))?;
    let values: Vec<&Cell> = table
        .rows
        .iter()
        .map(|r| &r[idx])
        .filter(|c| !c.is_null())
        .collect();
    let Some(agg) = agg else {
        return Ok(ToolValue::List(values.into_iter().cloned().collect()));
    };
    let agg = Aggregate::parse(agg).ok_or_else(|| {
        ToolError::new(
            ToolErrorCode::BadCondition,
            format!(
                "unknown aggregate {:?}; expected one of mean, max, min, sum, count",
                agg.trim()
            ),
        )
    })?;
    let kind = table.columns[idx].value_kind;
    match agg {
        Aggregate::Count => Ok(ToolValue::Scalar(Cell::Integer(values.len() as i64))),
        Aggregate::Sum | Aggregate::Mean if !kind.is_numeric() => Err(ToolError::new(
            ToolErrorCode::BadExpression,
            format!("cannot compute {} over {kind} column '{column}'", agg.as_str()),
        )),
        Aggregate::Sum => {
            let ints: Option<Vec<i64>> = values
                .iter()
                .map(|c| match c {
                    Cell::Integer(v) => Some(*v),
                    _ => None,
                })
                .collect();
            if let Some(total) = ints.and_then(|v| v.into_iter().try_fold(0i64, i64::checked_add)) {
                return Ok(ToolValue::Scalar(Cell::Integer(total)));
            }
            Ok(ToolValue::Scalar(Cell::Real(
                values.iter().filter_map(|c| c.as_f64()).sum(),
            )))
        }
        Aggregate::Mean => {
            if values.is_empty() {
                return Err(ToolError::new(
                    ToolErrorCode::EmptyResult,
                    format!("column '{column}' has no values to average"),
                ));
            }
            let sum: f64 = values.iter().filter_map(|c| c.as_f64()).sum();
            Ok(ToolValue::Scalar(Cell::Real(sum / values.len() as f64)))
        }
        Aggregate::Max | Aggregate::Min => {
            let want = if agg == Aggregate::Max {
                Ordering::Greater
            } else {
                Ordering::Less
            };
            let best = values.into_iter().fold(None::<&Cell>, |best, c| match best {
                Some(b) if compare_cells(c, b) != Some(want) => Some(b),
                _ => Some(c),
            });
            best.cloned().map(ToolValue::Scalar).ok_or_else(|| {
                ToolError::new(
                    ToolErrorCode::EmptyResult,
                    format!("column '{column}' has no values"),
                )
            })
        }
    }
}

/// A failed tool RPC: either a tool-level error or arguments the tool could
/// not accept at all (wrong arity, wrong JSON shape).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CallError {
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("{0}")]
    BadArguments(String),
}

impl CallError {
    pub fn code(&self) -> &str {
        match self {
            CallError::Tool(e) => e.code.as_str(),
            CallError::BadArguments(_) => "TypeError",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CallError::Tool(e) => e.message.clone(),
            CallError::BadArguments(m) => m.clone(),
        }
    }
}

fn arg_str<'a>(
    tool: ToolName,
    args: &'a [serde_json::Value],
    i: usize,
) -> Result<&'a str, CallError> {
    args.get(i).and_then(|v| v.as_str()).ok_or_else(|| {
        CallError::BadArguments(format!("{tool}() argument {} must be a string", i + 1))
    })
}

fn arity(tool: ToolName, args: &[serde_json::Value], allowed: &[usize]) -> Result<(), CallError> {
    if allowed.contains(&args.len()) {
        Ok(())
    } else {
        let want: Vec<String> = allowed.iter().map(|n| n.to_string()).collect();
        Err(CallError::BadArguments(format!(
            "{tool}() takes {} argument(s) but {} were given",
            want.join(" or "),
            args.len()
        )))
    }
}

/// Resolves a table argument: a wire-format table object, or a table name.
fn arg_table(
    db: &EhrDatabase,
    tool: ToolName,
    args: &[serde_json::Value],
    i: usize,
) -> Result<TableData, CallError> {
    match args.get(i) {
        Some(serde_json::Value::String(name)) => Ok(load_db(db, name)?.clone()),
        Some(v @ serde_json::Value::Object(_)) => wire::table_from_wire(v).map_err(|e| {
            CallError::BadArguments(format!("{tool}() argument {} is not a table: {e}", i + 1))
        }),
        _ => Err(CallError::BadArguments(format!(
            "{tool}() argument {} must be a table",
            i + 1
        ))),
    }
}

/// Runs a tool by name with JSON arguments, as received over the sandbox
/// protocol.
pub fn dispatch(
    db: &EhrDatabase,
    tool: ToolName,
    args: &[serde_json::Value],
) -> Result<ToolValue, CallError> {
    match tool {
        ToolName::LoadDB => {
            arity(tool, args, &[1])?;
            Ok(ToolValue::Table(load_db(db, arg_str(tool, args, 0)?)?.clone()))
        }
        ToolName::FilterDB => {
            arity(tool, args, &[2])?;
            let table = arg_table(db, tool, args, 0)?;
            Ok(ToolValue::Table(filter_db(&table, arg_str(tool, args, 1)?)?))
        }
        ToolName::GetValue => {
            arity(tool, args, &[2])?;
            let table = arg_table(db, tool, args, 0)?;
            Ok(get_value(&table, arg_str(tool, args, 1)?)?)
        }
        ToolName::Calculate => {
            arity(tool, args, &[1])?;
            Ok(ToolValue::Number(calculate(arg_str(tool, args, 0)?)?))
        }
        ToolName::Calendar => {
            arity(tool, args, &[1, 2])?;
            let (anchor, offset) = if args.len() == 1 {
                ("now", arg_str(tool, args, 0)?)
            } else {
                (arg_str(tool, args, 0)?, arg_str(tool, args, 1)?)
            };
            Ok(ToolValue::Text(calendar(db, anchor, offset)?))
        }
        ToolName::SQLInterpreter => {
            arity(tool, args, &[1])?;
            Ok(ToolValue::Rows(sql_interpreter(db, arg_str(tool, args, 0)?)?))
        }
    }
}

/// Tool definitions shown to the planner and the debugger.
pub const TOOL_DEFINITIONS: &str = "\
Tool definitions (call them as ordinary functions inside your code):
(1) LoadDB(table_name) -> table. Loads one table of the database by its exact, case-sensitive name.
(2) FilterDB(table, condition) -> table. Keeps the rows that satisfy one condition. A condition is \
COLUMN OP VALUE with OP one of =, !=, <, <=, >, >= (for example \"GENDER=F\" or \"AGE>=65\"); or \
min(COLUMN) / max(COLUMN) to keep the rows holding the extreme value; or \
count[COLUMN GROUP-BY GROUP_COLUMN] OP N to keep rows whose group has OP N values. Text comparison is \
exact and case-sensitive. Filtering to zero rows raises EmptyResult.
(3) GetValue(table, \"COLUMN\") -> list of the column's non-empty values; GetValue(table, \"COLUMN, AGG\") \
-> one number, where AGG is mean, max, min, sum or count.
(4) Calculate(expression) -> number. Evaluates + - * / with parentheses and mean(...), max(...), min(...), sum(...).
(5) Calendar(offset) or Calendar(date, offset) -> date text. Shifts a date (default: the database's current \
time) by an offset such as \"-1 year\", \"+2 weeks\", \"-30 days\" or \"+1 month\".
(6) SQLInterpreter(sql) -> list of rows. Runs one read-only SELECT statement (joins of up to three tables, \
WHERE, GROUP BY, ORDER BY, LIMIT; no subqueries).
";

//! FilterDB condition grammar.
//!
//! ```text
//! COND := COLUMN OP LITERAL
//!       | min(COLUMN) | max(COLUMN)
//!       | count[COLUMN GROUP-BY GCOL] OP INTEGER
//! OP   := = | != | < | <= | > | >=
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;

use super::{compare_cells, unknown_column, CompareOp, ToolError, ToolErrorCode};
use crate::ehr_store::{Cell, TableData, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Compare {
        column: String,
        op: CompareOp,
        literal: String,
    },
    Extremum {
        column: String,
        which: Extremum,
    },
    /// Keeps rows whose `group_column` group holds `op count` non-null
    /// values of `column`.
    GroupedCount {
        column: String,
        group_column: String,
        op: CompareOp,
        count: i64,
    },
}

fn bad(condition: &str, detail: impl std::fmt::Display) -> ToolError {
    ToolError::new(
        ToolErrorCode::BadCondition,
        format!("cannot parse condition {condition:?}: {detail}"),
    )
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn take_ident(s: &str) -> Option<(&str, &str)> {
    let mut chars = s.char_indices();
    match chars.next() {
        Some((_, c)) if is_ident_start(c) => {}
        _ => return None,
    }
    let end = chars
        .find(|(_, c)| !is_ident_char(*c))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    Some((&s[..end], &s[end..]))
}

fn take_op(s: &str) -> Option<(CompareOp, &str)> {
    for (text, op) in [
        ("<=", CompareOp::Le),
        (">=", CompareOp::Ge),
        ("!=", CompareOp::Ne),
        ("=", CompareOp::Eq),
        ("<", CompareOp::Lt),
        (">", CompareOp::Gt),
    ] {
        if let Some(rest) = s.strip_prefix(text) {
            return Some((op, rest));
        }
    }
    None
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['\'', '"'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

pub fn parse_condition(text: &str) -> Result<Condition, ToolError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(bad(text, "empty condition"));
    }
    for (prefix, which) in [("min(", Extremum::Min), ("max(", Extremum::Max)] {
        if let Some(inner) = s.strip_prefix(prefix) {
            let inner = inner
                .strip_suffix(')')
                .ok_or_else(|| bad(text, "missing closing ')'"))?;
            let column = inner.trim();
            if take_ident(column).is_none_or(|(_, rest)| !rest.is_empty()) {
                return Err(bad(text, format!("{column:?} is not a column name")));
            }
            return Ok(Condition::Extremum {
                column: column.to_string(),
                which,
            });
        }
    }
    if let Some(inner) = s.strip_prefix("count[") {
        let (group, rest) = inner
            .split_once(']')
            .ok_or_else(|| bad(text, "missing closing ']'"))?;
        let words: Vec<&str> = group.split_whitespace().collect();
        let [column, "GROUP-BY", group_column] = words[..] else {
            return Err(bad(text, "expected count[COLUMN GROUP-BY GROUP_COLUMN]"));
        };
        let (op, count) = take_op(rest.trim_start())
            .ok_or_else(|| bad(text, "expected one of =, !=, <, <=, >, >= after ']'"))?;
        let count: i64 = count
            .trim()
            .parse()
            .map_err(|_| bad(text, format!("{:?} is not an integer count", count.trim())))?;
        return Ok(Condition::GroupedCount {
            column: column.to_string(),
            group_column: group_column.to_string(),
            op,
            count,
        });
    }
    let (column, rest) = take_ident(s).ok_or_else(|| bad(text, "expected a column name"))?;
    let (op, literal) = take_op(rest.trim_start()).ok_or_else(|| {
        bad(
            text,
            format!(
                "expected one of =, !=, <, <=, >, >= after '{column}', found {:?}",
                rest.trim_start().chars().next().map(String::from).unwrap_or_default()
            ),
        )
    })?;
    if op == CompareOp::Eq && literal.starts_with('=') {
        return Err(bad(text, "use '=' rather than '=='"));
    }
    Ok(Condition::Compare {
        column: column.to_string(),
        op,
        literal: unquote(literal).to_string(),
    })
}

enum Matcher {
    Typed(Cell),
    /// Equality against a literal that does not parse as the column kind:
    /// compares the cell's text rendering.
    Rendered(String),
}

fn literal_matcher(
    kind: ValueKind,
    op: CompareOp,
    literal: &str,
    text: &str,
) -> Result<Matcher, ToolError> {
    let parsed = match kind {
        // Numeric columns accept "3" and "3.0" alike.
        ValueKind::Integer | ValueKind::Real => literal.trim().parse::<f64>().ok().map(Cell::Real),
        ValueKind::Datetime if literal.is_empty() => None,
        other => other.parse_cell(literal).filter(|c| !c.is_null()),
    };
    match parsed {
        Some(cell) => Ok(Matcher::Typed(cell)),
        None if !op.is_ordered() => Ok(Matcher::Rendered(literal.to_string())),
        None => Err(bad(
            text,
            format!("{literal:?} is not a valid {kind} value for operator {}", op.symbol()),
        )),
    }
}

impl Matcher {
    fn matches(&self, cell: &Cell, op: CompareOp) -> bool {
        if cell.is_null() {
            return false;
        }
        match self {
            Matcher::Typed(lit) => compare_cells(cell, lit).is_some_and(|o| op.holds(o)),
            Matcher::Rendered(s) => op.holds(cell.to_string().as_str().cmp(s.as_str())),
        }
    }
}

fn group_key(cell: &Cell) -> String {
    match cell {
        Cell::Null => "\0null".into(),
        other => other.to_string(),
    }
}

/// Rows of `table` satisfying `condition`, in their original order.
pub fn filter_db(table: &TableData, condition: &str) -> Result<TableData, ToolError> {
    let parsed = parse_condition(condition)?;
    let col = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| unknown_column(table, name))
    };
    let rows: Vec<Vec<Cell>> = match &parsed {
        Condition::Compare {
            column,
            op,
            literal,
        } => {
            let idx = col(column)?;
            let matcher =
                literal_matcher(table.columns[idx].value_kind, *op, literal, condition)?;
            table
                .rows
                .iter()
                .filter(|r| matcher.matches(&r[idx], *op))
                .cloned()
                .collect()
        }
        Condition::Extremum { column, which } => {
            let idx = col(column)?;
            let want = match which {
                Extremum::Min => Ordering::Less,
                Extremum::Max => Ordering::Greater,
            };
            let best = table
                .rows
                .iter()
                .map(|r| &r[idx])
                .filter(|c| !c.is_null())
                .fold(None::<&Cell>, |best, c| match best {
                    Some(b) if compare_cells(c, b) != Some(want) => Some(b),
                    _ => Some(c),
                })
                .cloned();
            match best {
                Some(best) => table
                    .rows
                    .iter()
                    .filter(|r| compare_cells(&r[idx], &best) == Some(Ordering::Equal))
                    .cloned()
                    .collect(),
                None => Vec::new(),
            }
        }
        Condition::GroupedCount {
            column,
            group_column,
            op,
            count,
        } => {
            let idx = col(column)?;
            let gidx = col(group_column)?;
            let mut counts: HashMap<String, i64> = HashMap::new();
            for r in &table.rows {
                let n = counts.entry(group_key(&r[gidx])).or_default();
                if !r[idx].is_null() {
                    *n += 1;
                }
            }
            table
                .rows
                .iter()
                .filter(|r| op.holds(counts[&group_key(&r[gidx])].cmp(count)))
                .cloned()
                .collect()
        }
    };
    if rows.is_empty() {
        return Err(ToolError::new(
            ToolErrorCode::EmptyResult,
            format!(
                "no rows of table '{}' satisfy {condition:?}",
                table.name
            ),
        ));
    }
    Ok(table.with_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr_store::ColumnSchema;

    fn col(name: &str, kind: ValueKind) -> ColumnSchema {
        ColumnSchema {
            name: name.into(),
            value_kind: kind,
            description: String::new(),
        }
    }

    fn patients() -> TableData {
        TableData {
            name: "patients".into(),
            columns: vec![
                col("SUBJECT_ID", ValueKind::Integer),
                col("GENDER", ValueKind::Text),
                col("AGE", ValueKind::Integer),
            ],
            rows: vec![
                vec![Cell::Integer(1), Cell::Text("F".into()), Cell::Integer(70)],
                vec![Cell::Integer(2), Cell::Text("M".into()), Cell::Integer(63)],
                vec![Cell::Integer(3), Cell::Text("F".into()), Cell::Integer(63)],
            ],
        }
    }

    fn ids(t: &TableData) -> Vec<i64> {
        t.rows
            .iter()
            .map(|r| match r[0] {
                Cell::Integer(v) => v,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn equality_on_text() {
        let t = filter_db(&patients(), "GENDER=F").unwrap();
        assert_eq!(ids(&t), [1, 3]);
        assert_eq!(ids(&filter_db(&patients(), "GENDER = 'F'").unwrap()), [1, 3]);
        assert_eq!(ids(&filter_db(&patients(), "GENDER!=F").unwrap()), [2]);
        let err = filter_db(&patients(), "GENDER=f").unwrap_err();
        assert_eq!(err.code, ToolErrorCode::EmptyResult);
    }

    #[test]
    fn extremum_keeps_ties() {
        assert_eq!(ids(&filter_db(&patients(), "min(AGE)").unwrap()), [2, 3]);
        assert_eq!(ids(&filter_db(&patients(), "max(AGE)").unwrap()), [1]);
    }

    #[test]
    fn ordered_comparisons() {
        assert_eq!(ids(&filter_db(&patients(), "AGE>=64").unwrap()), [1]);
        assert_eq!(ids(&filter_db(&patients(), "AGE<70.5").unwrap()), [1, 2, 3]);
        let err = filter_db(&patients(), "AGE>old").unwrap_err();
        assert_eq!(err.code, ToolErrorCode::BadCondition);
    }

    #[test]
    fn grouped_count() {
        assert_eq!(
            ids(&filter_db(&patients(), "count[SUBJECT_ID GROUP-BY GENDER]>=2").unwrap()),
            [1, 3]
        );
        assert_eq!(
            ids(&filter_db(&patients(), "count[SUBJECT_ID GROUP-BY AGE]=1").unwrap()),
            [1]
        );
    }

    #[test]
    fn malformed_conditions() {
        for c in [
            "GENDER~F",
            "",
            "min(AGE",
            "count[AGE BY GENDER]>1",
            "count[AGE GROUP-BY GENDER]>x",
            "=F",
            "GENDER==F",
        ] {
            let err = filter_db(&patients(), c).unwrap_err();
            assert_eq!(err.code, ToolErrorCode::BadCondition, "{c}");
        }
        let err = filter_db(&patients(), "gender=F").unwrap_err();
        assert_eq!(err.code, ToolErrorCode::UnknownColumn);
        assert!(err.message.contains("GENDER"));
    }

    #[test]
    fn nulls_never_match() {
        let mut t = patients();
        t.rows[0][1] = Cell::Null;
        assert_eq!(ids(&filter_db(&t, "GENDER!=M").unwrap()), [3]);
    }
}

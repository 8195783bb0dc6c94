//! Tables on the sandbox wire: `{"columns":[...],"rows":[[...]...]}`.
//!
//! The host also writes `"name"` and `"kinds"` so a table handed back by the
//! plan keeps its column kinds; both keys are optional on input, and missing
//! kinds are inferred from the JSON cell values.

use serde_json::{json, Value};

use crate::ehr_store::{infer_kind, Cell, ColumnSchema, TableData, ValueKind};

pub fn table_to_wire(table: &TableData) -> Value {
    json!({
        "name": table.name,
        "columns": table.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
        "kinds": table.columns.iter().map(|c| c.value_kind.as_str()).collect::<Vec<_>>(),
        "rows": table.rows.iter()
            .map(|r| r.iter().map(Cell::to_json).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    })
}

fn cell_text(v: &Value) -> Result<String, String> {
    match v {
        Value::Null => Ok(String::new()),
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("cell {other} is not a scalar")),
    }
}

pub fn table_from_wire(value: &Value) -> Result<TableData, String> {
    let obj = value.as_object().ok_or("table must be a JSON object")?;
    let columns: Vec<String> = obj
        .get("columns")
        .and_then(Value::as_array)
        .ok_or("table is missing \"columns\"")?
        .iter()
        .map(|c| c.as_str().map(str::to_string).ok_or("column names must be strings"))
        .collect::<Result<_, _>>()?;
    let raw_rows: Vec<Vec<String>> = obj
        .get("rows")
        .and_then(Value::as_array)
        .ok_or("table is missing \"rows\"")?
        .iter()
        .map(|r| {
            let cells = r.as_array().ok_or("each row must be an array")?;
            if cells.len() != columns.len() {
                return Err(format!(
                    "row has {} cells but the table has {} columns",
                    cells.len(),
                    columns.len()
                ));
            }
            cells.iter().map(cell_text).collect()
        })
        .collect::<Result<_, String>>()?;

    let kinds: Vec<ValueKind> = match obj.get("kinds") {
        Some(k) => {
            let kinds: Vec<ValueKind> =
                serde_json::from_value(k.clone()).map_err(|e| format!("bad \"kinds\": {e}"))?;
            if kinds.len() != columns.len() {
                return Err("\"kinds\" and \"columns\" differ in length".into());
            }
            kinds
        }
        None => (0..columns.len())
            .map(|i| infer_kind(raw_rows.iter().map(|r| r[i].as_str())))
            .collect(),
    };

    let rows = raw_rows
        .iter()
        .map(|raw| {
            raw.iter()
                .zip(&kinds)
                .map(|(v, k)| {
                    // JSON numbers in an integer column may arrive as "3.0".
                    k.parse_cell(v)
                        .or_else(|| match k {
                            ValueKind::Integer => v
                                .parse::<f64>()
                                .ok()
                                .filter(|f| f.fract() == 0.0)
                                .map(|f| Cell::Integer(f as i64)),
                            _ => None,
                        })
                        .ok_or_else(|| format!("cell {v:?} is not a valid {k}"))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TableData {
        name: obj
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or("table")
            .to_string(),
        columns: columns
            .into_iter()
            .zip(kinds)
            .map(|(name, value_kind)| ColumnSchema {
                name,
                value_kind,
                description: String::new(),
            })
            .collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr_store::Timestamp;
    use proptest::prelude::*;

    fn arb_cell(kind: ValueKind) -> BoxedStrategy<Cell> {
        let value = match kind {
            ValueKind::Integer => any::<i32>().prop_map(|v| Cell::Integer(v as i64)).boxed(),
            ValueKind::Real => (-1e6f64..1e6).prop_map(Cell::Real).boxed(),
            ValueKind::Text => "[A-Za-z ]{1,8}".prop_map(Cell::Text).boxed(),
            ValueKind::Datetime => (0u32..3000)
                .prop_map(|d| {
                    let s = chrono::NaiveDate::from_ymd_opt(2100, 1, 1).unwrap()
                        + chrono::Duration::days(d as i64);
                    Cell::DateTime(Timestamp::parse(&s.format("%Y-%m-%d").to_string()).unwrap())
                })
                .boxed(),
        };
        prop_oneof![1 => Just(Cell::Null), 4 => value].boxed()
    }

    proptest! {
        #[test]
        fn wire_round_trip(kinds in prop::collection::vec(
            prop_oneof![Just(ValueKind::Integer), Just(ValueKind::Real), Just(ValueKind::Text), Just(ValueKind::Datetime)],
            1..4,
        ), seed_rows in 0usize..6) {
            let strategy = kinds.iter().map(|k| arb_cell(*k)).collect::<Vec<_>>();
            let mut runner = proptest::test_runner::TestRunner::deterministic();
            let rows: Vec<Vec<Cell>> = (0..seed_rows)
                .map(|_| strategy.iter().map(|s| s.new_tree(&mut runner).unwrap().current()).collect())
                .collect();
            let table = TableData {
                name: "t".into(),
                columns: kinds.iter().enumerate().map(|(i, k)| ColumnSchema {
                    name: format!("C{i}"), value_kind: *k, description: String::new(),
                }).collect(),
                rows,
            };
            let back = table_from_wire(&table_to_wire(&table)).unwrap();
            prop_assert_eq!(back, table);
        }
    }

    #[test]
    fn kinds_are_inferred_when_absent() {
        let t = table_from_wire(&json!({
            "columns": ["A", "B"],
            "rows": [[1, "x"], [null, "y"]]
        }))
        .unwrap();
        assert_eq!(t.columns[0].value_kind, ValueKind::Integer);
        assert_eq!(t.columns[1].value_kind, ValueKind::Text);
        assert_eq!(t.rows[1][0], Cell::Null);
        assert!(table_from_wire(&json!({"columns": ["A"], "rows": [[1, 2]]})).is_err());
    }
}

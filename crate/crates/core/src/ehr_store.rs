//! Relational tables, their schemas, and the metadata block shown to the agent.
//!
//! A database directory holds one `<name>.csv` per table; a JSON metadata
//! file describes the dataset and every column. Everything is immutable
//! once loaded.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("metadata names table '{0}' but no {0}.csv exists")]
    MissingTable(String),
    #[error("schema mismatch in table '{table}': {detail}")]
    SchemaMismatch { table: String, detail: String },
    #[error("parse error in {table}.{column} (row {row}): cannot read {value:?} as {kind}")]
    ParseError {
        table: String,
        column: String,
        row: usize,
        value: String,
        kind: ValueKind,
    },
    #[error("invalid metadata file {path}: {detail}")]
    Metadata { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Integer,
    Real,
    Text,
    Datetime,
}

impl ValueKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Integer | ValueKind::Real)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Integer => "integer",
            ValueKind::Real => "real",
            ValueKind::Text => "text",
            ValueKind::Datetime => "datetime",
        }
    }

    /// Parses a raw field as this kind. The empty string is the null sentinel.
    pub fn parse_cell(self, raw: &str) -> Option<Cell> {
        if raw.is_empty() {
            return Some(Cell::Null);
        }
        match self {
            ValueKind::Integer => raw.trim().parse::<i64>().ok().map(Cell::Integer),
            ValueKind::Real => raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Cell::Real),
            ValueKind::Datetime => Timestamp::parse(raw.trim()).map(Cell::DateTime),
            ValueKind::Text => Some(Cell::Text(raw.to_string())),
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ISO-8601 `YYYY-MM-DD[ HH:MM:SS]` instant. Remembers whether the source
/// text carried a time part so it renders back the way it was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    pub at: NaiveDateTime,
    pub date_only: bool,
}

impl Timestamp {
    pub fn parse(text: &str) -> Option<Timestamp> {
        let text = text.trim();
        if let Ok(at) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S") {
            return Some(Timestamp {
                at,
                date_only: false,
            });
        }
        if let Ok(at) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S") {
            return Some(Timestamp {
                at,
                date_only: false,
            });
        }
        // chrono accepts single-digit fields; the format is fixed-width.
        if text.len() == 10 {
            if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
                return Some(Timestamp {
                    at: d.and_hms_opt(0, 0, 0)?,
                    date_only: true,
                });
            }
        }
        None
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.date_only {
            write!(f, "{}", self.at.format("%Y-%m-%d"))
        } else {
            write!(f, "{}", self.at.format("%Y-%m-%d %H:%M:%S"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    DateTime(Timestamp),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(v) => Some(*v as f64),
            Cell::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Cell::Null => serde_json::Value::Null,
            Cell::Integer(v) => (*v).into(),
            Cell::Real(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Cell::Text(s) => s.clone().into(),
            Cell::DateTime(t) => t.to_string().into(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str(""),
            Cell::Integer(v) => write!(f, "{v}"),
            Cell::Real(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::DateTime(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub value_kind: ValueKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableData {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
    pub rows: Vec<Vec<Cell>>,
}

impl TableData {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Same schema, subset of rows.
    pub fn with_rows(&self, rows: Vec<Vec<Cell>>) -> TableData {
        TableData {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EhrDatabase {
    pub overall_description: String,
    tables: Vec<TableData>,
    by_name: BTreeMap<String, usize>,
    pub system_time: Option<Timestamp>,
}

impl EhrDatabase {
    /// Builds a database from already-parsed tables. `system_time` defaults to
    /// the latest datetime cell when not given.
    pub fn new(
        overall_description: impl Into<String>,
        tables: Vec<TableData>,
        system_time: Option<Timestamp>,
    ) -> Result<EhrDatabase, StoreError> {
        let mut by_name = BTreeMap::new();
        for (i, t) in tables.iter().enumerate() {
            if by_name.insert(t.name.clone(), i).is_some() {
                return Err(StoreError::SchemaMismatch {
                    table: t.name.clone(),
                    detail: "table listed twice".into(),
                });
            }
        }
        let system_time = system_time.or_else(|| max_datetime(&tables));
        Ok(EhrDatabase {
            overall_description: overall_description.into(),
            tables,
            by_name,
            system_time,
        })
    }

    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.by_name.get(name).map(|&i| &self.tables[i])
    }

    /// Tables in load (metadata) order.
    pub fn tables(&self) -> &[TableData] {
        &self.tables
    }
}

fn max_datetime(tables: &[TableData]) -> Option<Timestamp> {
    tables
        .iter()
        .flat_map(|t| t.rows.iter().flatten())
        .filter_map(|c| match c {
            Cell::DateTime(ts) => Some(*ts),
            _ => None,
        })
        .max_by_key(|ts| ts.at)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataFile {
    overall_description: String,
    #[serde(default)]
    system_time: Option<String>,
    #[serde(default)]
    tables: Vec<MetadataTable>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataTable {
    name: String,
    columns: Vec<MetadataColumn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataColumn {
    name: String,
    #[serde(default)]
    kind: Option<ValueKind>,
    #[serde(default)]
    description: String,
}

pub fn load_database(root: &Path, metadata_path: &Path) -> Result<EhrDatabase, StoreError> {
    let bytes = fs::read(metadata_path).map_err(|source| StoreError::Io {
        path: metadata_path.to_path_buf(),
        source,
    })?;
    let meta: MetadataFile =
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Metadata {
            path: metadata_path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let system_time = match &meta.system_time {
        Some(s) => Some(Timestamp::parse(s).ok_or_else(|| StoreError::Metadata {
            path: metadata_path.to_path_buf(),
            detail: format!("system_time {s:?} is not ISO-8601"),
        })?),
        None => None,
    };

    let listed: Vec<&str> = meta.tables.iter().map(|t| t.name.as_str()).collect();
    for on_disk in csv_stems(root)? {
        if !listed.contains(&on_disk.as_str()) {
            return Err(StoreError::SchemaMismatch {
                table: on_disk,
                detail: "CSV file present but not described in metadata".into(),
            });
        }
    }

    let tables = meta
        .tables
        .iter()
        .map(|t| load_table(root, t))
        .collect::<Result<Vec<_>, _>>()?;
    EhrDatabase::new(meta.overall_description, tables, system_time)
}

fn csv_stems(root: &Path) -> Result<Vec<String>, StoreError> {
    let io = |source| StoreError::Io {
        path: root.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_table(root: &Path, meta: &MetadataTable) -> Result<TableData, StoreError> {
    let path = root.join(format!("{}.csv", meta.name));
    if !path.is_file() {
        return Err(StoreError::MissingTable(meta.name.clone()));
    }
    let mismatch = |detail: String| StoreError::SchemaMismatch {
        table: meta.name.clone(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| mismatch(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| mismatch(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = meta.columns.iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(mismatch(format!(
            "CSV header {header:?} does not match metadata columns {expected:?}"
        )));
    }
    for (i, c) in meta.columns.iter().enumerate() {
        if c.name.is_empty() || meta.columns[..i].iter().any(|p| p.name == c.name) {
            return Err(mismatch(format!("column name {:?} empty or duplicated", c.name)));
        }
    }

    let mut raw_rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| mismatch(e.to_string()))?;
        raw_rows.push(record.iter().map(str::to_string).collect::<Vec<_>>());
    }

    let columns: Vec<ColumnSchema> = meta
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| ColumnSchema {
            name: c.name.clone(),
            value_kind: c
                .kind
                .unwrap_or_else(|| infer_kind(raw_rows.iter().map(|r| r[i].as_str()))),
            description: c.description.clone(),
        })
        .collect();

    let mut rows = Vec::with_capacity(raw_rows.len());
    for (r, raw) in raw_rows.into_iter().enumerate() {
        let mut row = Vec::with_capacity(columns.len());
        for (value, col) in raw.into_iter().zip(&columns) {
            let cell = col
                .value_kind
                .parse_cell(&value)
                .ok_or_else(|| StoreError::ParseError {
                    table: meta.name.clone(),
                    column: col.name.clone(),
                    row: r + 1,
                    value: value.clone(),
                    kind: col.value_kind,
                })?;
            row.push(cell);
        }
        rows.push(row);
    }
    Ok(TableData {
        name: meta.name.clone(),
        columns,
        rows,
    })
}

/// Inference order: integer, real, datetime, then text. Nulls are ignored;
/// an all-null column is text.
pub fn infer_kind<'a>(values: impl Iterator<Item = &'a str> + Clone) -> ValueKind {
    let non_null = values.filter(|v| !v.is_empty());
    if non_null.clone().next().is_none() {
        return ValueKind::Text;
    }
    for kind in [ValueKind::Integer, ValueKind::Real, ValueKind::Datetime] {
        if non_null.clone().all(|v| kind.parse_cell(v).is_some()) {
            return kind;
        }
    }
    ValueKind::Text
}

/// The metadata prose block: overall description, then one header line per
/// table followed by `COLUMN: description` lines, in load order.
pub fn render_metadata(db: &EhrDatabase) -> String {
    let mut out = String::new();
    out.push_str(db.overall_description.trim_end());
    out.push('\n');
    for table in db.tables() {
        out.push('\n');
        out.push_str(&format!("Table: {}\n", table.name));
        for col in &table.columns {
            out.push_str(&format!("{}: {}\n", col.name, col.description));
        }
    }
    out
}

pub fn table_names_of(db: &EhrDatabase) -> Vec<String> {
    // by_name is a BTreeMap, so keys are already sorted and unique.
    db.by_name.keys().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
    }

    fn demo_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo")
    }

    #[test]
    fn loads_the_demo_fixture() {
        let root = demo_dir();
        let db = load_database(&root.join("tables"), &root.join("metadata.json")).unwrap();
        let on_disk = fs::read_dir(root.join("tables"))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "csv")
            })
            .count();
        assert_eq!(db.tables().len(), on_disk);
        assert_eq!(db.tables().len(), 5);
        assert_eq!(
            table_names_of(&db),
            [
                "admissions",
                "d_icd_procedures",
                "patients",
                "prescriptions",
                "procedures_icd"
            ]
        );
        assert_eq!(table_names_of(&db), table_names_of(&db));
        let text = render_metadata(&db);
        assert_eq!(text.lines().next().unwrap(), db.overall_description.trim_end());
        assert_eq!(text, render_metadata(&db));
    }

    #[test]
    fn empty_directory_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "meta.json", r#"{"overall_description":"nothing","tables":[]}"#);
        let tables = dir.path().join("tables");
        fs::create_dir(&tables).unwrap();
        let db = load_database(&tables, &dir.path().join("meta.json")).unwrap();
        assert!(db.tables().is_empty());
        assert!(table_names_of(&db).is_empty());
        assert_eq!(db.system_time, None);
    }

    #[test]
    fn missing_table_file() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "meta.json",
            r#"{"overall_description":"x","tables":[{"name":"labevents","columns":[]}]}"#,
        );
        let err = load_database(dir.path(), &dir.path().join("meta.json")).unwrap_err();
        assert!(matches!(err, StoreError::MissingTable(t) if t == "labevents"));
    }

    #[test]
    fn header_mismatch_and_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.csv", "A,B\n1,2\n");
        write(
            dir.path(),
            "meta.json",
            r#"{"overall_description":"x","tables":[{"name":"t","columns":[{"name":"A","kind":"integer","description":""},{"name":"C","description":""}]}]}"#,
        );
        let err = load_database(dir.path(), &dir.path().join("meta.json")).unwrap_err();
        assert!(matches!(err, StoreError::SchemaMismatch { .. }));

        write(dir.path(), "t.csv", "A,B\n1,2\nx,3\n");
        write(
            dir.path(),
            "meta.json",
            r#"{"overall_description":"x","tables":[{"name":"t","columns":[{"name":"A","kind":"integer","description":""},{"name":"B","description":""}]}]}"#,
        );
        let err = load_database(dir.path(), &dir.path().join("meta.json")).unwrap_err();
        assert!(matches!(err, StoreError::ParseError { row: 2, .. }), "{err}");
    }

    #[test]
    fn unlisted_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "extra.csv", "A\n1\n");
        write(dir.path(), "meta.json", r#"{"overall_description":"x","tables":[]}"#);
        let err = load_database(dir.path(), &dir.path().join("meta.json")).unwrap_err();
        assert!(matches!(err, StoreError::SchemaMismatch { .. }));
    }

    #[test]
    fn kind_inference_order() {
        assert_eq!(infer_kind(["1", "", "3"].into_iter()), ValueKind::Integer);
        assert_eq!(infer_kind(["1", "2.5"].into_iter()), ValueKind::Real);
        assert_eq!(
            infer_kind(["2105-01-01", "2105-01-02 10:00:00"].into_iter()),
            ValueKind::Datetime
        );
        assert_eq!(infer_kind(["2105-01-01", "soon"].into_iter()), ValueKind::Text);
        assert_eq!(infer_kind(["", ""].into_iter()), ValueKind::Text);
    }

    #[test]
    fn system_time_defaults_to_latest_cell() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "T\n2105-01-01\n2105-06-01 12:00:00\n\n");
        write(dir.path(), "b.csv", "T\n2104-12-31\n");
        write(
            dir.path(),
            "meta.json",
            r#"{"overall_description":"x","tables":[{"name":"a","columns":[{"name":"T","description":""}]},{"name":"b","columns":[{"name":"T","description":""}]}]}"#,
        );
        let db = load_database(dir.path(), &dir.path().join("meta.json")).unwrap();
        assert_eq!(
            db.system_time.unwrap().to_string(),
            "2105-06-01 12:00:00"
        );
    }

    #[test]
    fn seventeen_tables_render_seventeen_headers() {
        let tables = (0..17)
            .map(|i| TableData {
                name: format!("t{i}"),
                columns: vec![ColumnSchema {
                    name: "ID".into(),
                    value_kind: ValueKind::Integer,
                    description: "row id".into(),
                }],
                rows: vec![],
            })
            .collect();
        let db = EhrDatabase::new("MIMIC-like", tables, None).unwrap();
        let text = render_metadata(&db);
        assert_eq!(text.lines().filter(|l| l.starts_with("Table: ")).count(), 17);
    }

    #[test]
    fn timestamps_keep_their_shape() {
        assert_eq!(Timestamp::parse("2105-12-31").unwrap().to_string(), "2105-12-31");
        assert_eq!(
            Timestamp::parse("2105-12-31 08:00:00").unwrap().to_string(),
            "2105-12-31 08:00:00"
        );
        assert!(Timestamp::parse("2105-1-3").is_none());
        assert!(Timestamp::parse("yesterday").is_none());
    }
}

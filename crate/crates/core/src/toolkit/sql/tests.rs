use super::*;
use crate::ehr_store::load_database;
use std::path::Path;

fn demo() -> EhrDatabase {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo");
    load_database(&root.join("tables"), &root.join("metadata.json")).unwrap()
}

fn run(sql: &str) -> Vec<Vec<Cell>> {
    sql_interpreter(&demo(), sql).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

fn int(v: i64) -> Cell {
    Cell::Integer(v)
}

fn text(s: &str) -> Cell {
    Cell::Text(s.into())
}

#[test]
fn count_star() {
    assert_eq!(run("SELECT COUNT(*) FROM patients"), vec![vec![int(3)]]);
}

#[test]
fn latest_admission_of_a_patient() {
    let rows = run(
        "SELECT ADMITTIME FROM admissions WHERE SUBJECT_ID=28020 ORDER BY ADMITTIME DESC LIMIT 1",
    );
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0].to_string(), "2105-10-20 06:50:00");
}

#[test]
fn syntax_error_reports_position() {
    let err = sql_interpreter(&demo(), "SELEC x").unwrap_err();
    assert_eq!(err.code, ToolErrorCode::SqlError);
    assert!(err.message.contains("position 1"), "{}", err.message);
}

#[test]
fn empty_result_is_an_error() {
    let err = sql_interpreter(&demo(), "SELECT * FROM patients WHERE GENDER='X'").unwrap_err();
    assert_eq!(err.code, ToolErrorCode::EmptyResult);
}

#[test]
fn unknown_names() {
    let err = sql_interpreter(&demo(), "SELECT * FROM labevents").unwrap_err();
    assert!(err.message.contains("no such table"));
    let err = sql_interpreter(&demo(), "SELECT nope FROM patients").unwrap_err();
    assert!(err.message.contains("no such column"));
    let err = sql_interpreter(
        &demo(),
        "SELECT SUBJECT_ID FROM patients, admissions",
    )
    .unwrap_err();
    assert!(err.message.contains("ambiguous"));
}

#[test]
fn joins_group_and_order() {
    let rows = run(
        "SELECT p.GENDER, COUNT(DISTINCT a.HADM_ID) AS n FROM patients p \
         JOIN admissions a ON p.SUBJECT_ID = a.SUBJECT_ID GROUP BY p.GENDER ORDER BY n DESC",
    );
    // Equal counts keep first-occurrence order under the stable sort.
    assert_eq!(rows, vec![vec![text("F"), int(3)], vec![text("M"), int(3)]]);

    let rows = run(
        "SELECT d.SHORT_TITLE FROM procedures_icd pr, d_icd_procedures d \
         WHERE pr.ICD9_CODE = d.ICD9_CODE AND pr.SUBJECT_ID = 31300 ORDER BY pr.CHARTTIME",
    );
    assert_eq!(
        rows,
        vec![
            vec![text("Insert endotracheal tube")],
            vec![text("Temporary tracheostomy")]
        ]
    );
}

#[test]
fn three_way_join_in_nested_loop_order() {
    let rows = run(
        "SELECT p.SUBJECT_ID, a.HADM_ID, r.DRUG FROM patients p \
         INNER JOIN admissions a ON a.SUBJECT_ID = p.SUBJECT_ID \
         INNER JOIN prescriptions r ON r.HADM_ID = a.HADM_ID WHERE r.DRUG LIKE 'aspirin%'",
    );
    assert_eq!(
        rows,
        vec![
            vec![int(10006), int(142345), text("Aspirin EC")],
            vec![int(28020), int(121680), text("Aspirin EC")],
            vec![int(31300), int(155722), text("Aspirin EC")],
        ]
    );
}

#[test]
fn predicates() {
    assert_eq!(
        run("SELECT COUNT(*) FROM admissions WHERE DISCHTIME IS NULL"),
        vec![vec![int(1)]]
    );
    assert_eq!(
        run("SELECT COUNT(*) FROM admissions WHERE ADMISSION_TYPE NOT IN ('EMERGENCY', 'URGENT')"),
        vec![vec![int(1)]]
    );
    assert_eq!(
        run("SELECT COUNT(*) FROM admissions WHERE NOT (AGE < 65 OR INSURANCE = 'Medicare')"),
        vec![vec![int(2)]]
    );
    assert_eq!(
        run("SELECT COUNT(*) FROM admissions WHERE ADMITTIME >= '2105-01-01'"),
        vec![vec![int(3)]]
    );
    assert_eq!(
        run("SELECT SUM(DOSE_VAL_RX), MAX(DRUG), AVG(AGE) FROM prescriptions, admissions WHERE prescriptions.HADM_ID = admissions.HADM_ID AND DRUG = 'Vancomycin'"),
        vec![vec![Cell::Real(2250.0), text("Vancomycin"), Cell::Real(65.0)]]
    );
}

#[test]
fn aggregates_on_empty_input_give_one_row() {
    assert_eq!(
        run("SELECT COUNT(*), SUM(AGE) FROM admissions WHERE AGE > 200"),
        vec![vec![int(0), Cell::Null]]
    );
}

#[test]
fn distinct_and_ordinals() {
    assert_eq!(
        run("SELECT DISTINCT DRUG FROM prescriptions WHERE ROUTE = 'IV' ORDER BY 1"),
        vec![vec![text("Furosemide")], vec![text("Vancomycin")]]
    );
}

#[test]
fn like_matcher() {
    use super::exec::like;
    assert!(like("Aspirin EC", "asp%"));
    assert!(like("abc", "a_c"));
    assert!(!like("abc", "a_"));
    assert!(like("", "%"));
    assert!(like("100%", "100%"));
    assert!(!like("abd", "%c%"));
}

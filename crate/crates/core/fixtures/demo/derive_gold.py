"""Builds dataset.jsonl: gold answers come from running each gold SQL with
sqlite3 over the CSV tables. Run from this directory."""

import csv
import json
import sqlite3
from pathlib import Path

HERE = Path(__file__).resolve().parent

ITEMS = [
    ("q01", "how many patients are female?",
     "SELECT COUNT(*) FROM patients WHERE GENDER = 'F'"),
    ("q02", "how many admissions had the admission type EMERGENCY?",
     "SELECT COUNT(*) FROM admissions WHERE ADMISSION_TYPE = 'EMERGENCY'"),
    ("q03", "what is the maximum age of patient 28020 across all admissions?",
     "SELECT MAX(AGE) FROM admissions WHERE SUBJECT_ID = 28020"),
    ("q04", "how many times was aspirin ec prescribed?",
     "SELECT COUNT(*) FROM prescriptions WHERE DRUG = 'Aspirin EC'"),
    ("q05", "what was the total prescribed dose of Vancomycin?",
     "SELECT SUM(DOSE_VAL_RX) FROM prescriptions WHERE DRUG = 'Vancomycin'"),
    ("q06", "how many patients were given temporary tracheostomy?",
     "SELECT COUNT(DISTINCT procedures_icd.SUBJECT_ID) FROM procedures_icd "
     "JOIN d_icd_procedures ON procedures_icd.ICD9_CODE = d_icd_procedures.ICD9_CODE "
     "WHERE d_icd_procedures.SHORT_TITLE = 'Temporary tracheostomy'"),
    ("q07", "what was the insurance of the last admission of patient 31300?",
     "SELECT INSURANCE FROM admissions WHERE SUBJECT_ID = 31300 ORDER BY ADMITTIME DESC LIMIT 1"),
    ("q08", "what was the age of the patient at admission 121680?",
     "SELECT AGE FROM admissions WHERE HADM_ID = 121680"),
    ("q09", "which drugs were prescribed to patient 10006?",
     "SELECT DISTINCT DRUG FROM prescriptions WHERE SUBJECT_ID = 10006"),
    ("q10", "how many distinct patients received a drug by the IV route?",
     "SELECT COUNT(DISTINCT SUBJECT_ID) FROM prescriptions WHERE ROUTE = 'IV'"),
    ("q11", "what is the gender of the patient who was prescribed Furosemide?",
     "SELECT DISTINCT patients.GENDER FROM patients JOIN prescriptions "
     "ON patients.SUBJECT_ID = prescriptions.SUBJECT_ID WHERE prescriptions.DRUG = 'Furosemide'"),
    ("q12", "how many procedures were charted during admissions where the patient was older than 65?",
     "SELECT COUNT(*) FROM procedures_icd JOIN admissions ON procedures_icd.HADM_ID = admissions.HADM_ID "
     "WHERE admissions.AGE > 65"),
    ("q13", "what was the average prescribed dose of Heparin?",
     "SELECT AVG(DOSE_VAL_RX) FROM prescriptions WHERE DRUG = 'Heparin'"),
    ("q14", "how many female patients were prescribed Aspirin EC?",
     "SELECT COUNT(DISTINCT patients.SUBJECT_ID) FROM patients JOIN prescriptions "
     "ON patients.SUBJECT_ID = prescriptions.SUBJECT_ID "
     "WHERE patients.GENDER = 'F' AND prescriptions.DRUG = 'Aspirin EC'"),
    ("q15", "how many PO prescriptions were given during emergency admissions of female patients?",
     "SELECT COUNT(*) FROM prescriptions JOIN admissions ON prescriptions.HADM_ID = admissions.HADM_ID "
     "JOIN patients ON admissions.SUBJECT_ID = patients.SUBJECT_ID "
     "WHERE patients.GENDER = 'F' AND admissions.ADMISSION_TYPE = 'EMERGENCY' AND prescriptions.ROUTE = 'PO'"),
    ("q16", "how many female patients had a temporary tracheostomy during an emergency admission?",
     "SELECT COUNT(DISTINCT patients.SUBJECT_ID) FROM patients "
     "JOIN admissions ON patients.SUBJECT_ID = admissions.SUBJECT_ID "
     "JOIN procedures_icd ON admissions.HADM_ID = procedures_icd.HADM_ID "
     "JOIN d_icd_procedures ON procedures_icd.ICD9_CODE = d_icd_procedures.ICD9_CODE "
     "WHERE patients.GENDER = 'F' AND admissions.ADMISSION_TYPE = 'EMERGENCY' "
     "AND d_icd_procedures.SHORT_TITLE = 'Temporary tracheostomy'"),
    ("q17", "what is the date one month after the admission time of admission 187491?",
     "SELECT datetime(ADMITTIME, '+1 month') FROM admissions WHERE HADM_ID = 187491"),
    ("q18", "how many patients had a closed bronchial biopsy?",
     "SELECT COUNT(DISTINCT procedures_icd.SUBJECT_ID) FROM procedures_icd "
     "JOIN d_icd_procedures ON procedures_icd.ICD9_CODE = d_icd_procedures.ICD9_CODE "
     "WHERE d_icd_procedures.SHORT_TITLE = 'Closed bronchial biopsy'"),
    ("q19", "list the admission ids of patient 31300.",
     "SELECT HADM_ID FROM admissions WHERE SUBJECT_ID = 31300"),
    ("q20", "how many admissions did patient 28020 have?",
     "SELECT COUNT(*) FROM admissions WHERE SUBJECT_ID = 28020"),
]


def typed(kind, raw):
    if raw == "":
        return None
    if kind == "integer":
        return int(raw)
    if kind == "real":
        return float(raw)
    return raw


def load(conn):
    meta = json.loads((HERE / "metadata.json").read_text())
    for table in meta["tables"]:
        cols = table["columns"]
        conn.execute(
            "CREATE TABLE {} ({})".format(table["name"], ", ".join(c["name"] for c in cols))
        )
        with open(HERE / "tables" / (table["name"] + ".csv"), newline="") as f:
            for row in csv.DictReader(f):
                values = [typed(c["kind"], row[c["name"]]) for c in cols]
                conn.execute(
                    "INSERT INTO {} VALUES ({})".format(table["name"], ", ".join("?" * len(cols))),
                    values,
                )


def render(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def main():
    conn = sqlite3.connect(":memory:")
    load(conn)
    lines = []
    for item_id, question, sql in ITEMS:
        rows = conn.execute(sql).fetchall()
        values = [render(r[0]) for r in rows]
        answer = values[0] if len(values) == 1 else values
        lines.append(json.dumps(
            {"id": item_id, "question": question, "answer": answer, "gold_sql": sql}
        ))
    (HERE / "dataset.jsonl").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()

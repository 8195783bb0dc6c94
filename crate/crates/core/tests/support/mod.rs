#![allow(dead_code)]

//! A scripted stand-in for the model, used to record the committed demo
//! traces, plus helpers that build the demo agent.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ehragent::debugger::DEBUG_SYSTEM;
use ehragent::ehr_store::{load_database, EhrDatabase};
use ehragent::executor::SandboxConfig;
use ehragent::knowledge::{load_knowledge_demos, KNOWLEDGE_SYSTEM};
use ehragent::llm::{ChatBackend, ChatMessage, LlmError, Role};
use ehragent::orchestrator::{load_demos, Agent, AgentConfig};

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo")
}

pub fn demo_db() -> EhrDatabase {
    let d = demo_dir();
    load_database(&d.join("tables"), &d.join("metadata.json")).unwrap()
}

pub fn stub_sandbox() -> SandboxConfig {
    SandboxConfig {
        command: vec![env!("CARGO_BIN_EXE_ehragent-sandbox-stub").to_string()],
        timeout_s: 30.0,
    }
}

pub fn demo_agent(cfg: AgentConfig) -> Agent {
    let d = demo_dir();
    Agent::new(
        cfg,
        demo_db(),
        load_demos(&d.join("demos.json")).unwrap(),
        load_knowledge_demos(&d.join("knowledge_demos.json")).unwrap(),
        stub_sandbox(),
    )
}

pub const ADVERSARIAL_Q: &str = "what is the dose unit of the Insulin prescription?";

pub struct Scenario {
    pub knowledge: String,
    pub turns: Vec<String>,
    pub debug: Vec<String>,
}

fn plan(note: &str, code: &str) -> String {
    format!("{note}\n```python\n{}\n```", code.trim())
}

fn answer(v: &str) -> String {
    format!("The output answers the question.\nANSWER: {v}\nTERMINATE")
}

fn scenario(knowledge: &str, turns: Vec<String>, debug: Vec<&str>) -> Scenario {
    Scenario {
        knowledge: knowledge.to_string(),
        turns,
        debug: debug.into_iter().map(str::to_string).collect(),
    }
}

fn unknown_column_loop(table: &str, filter: &str, columns: &[&str], agg: &str) -> Vec<String> {
    columns
        .iter()
        .map(|c| {
            plan(
                "Retrying with another column name.",
                &format!("rows = FilterDB(LoadDB('{table}'), '{filter}')\nprint(GetValue(rows, '{c}, {agg}'))"),
            )
        })
        .collect()
}

const WRONG_CAUSE: &str = "The aggregate may not apply to this column. Another spelling of the column name could work.";

/// Replies for every question of the demo dataset and for the adversarial
/// budget question.
pub fn scenarios() -> HashMap<String, Scenario> {
    let mut m = HashMap::new();
    let mut add = |q: &str, s: Scenario| {
        m.insert(q.to_string(), s);
    };

    add("how many patients are female?", scenario(
        "Sex is stored in patients.GENDER as F or M. Each row of patients is one patient, identified by SUBJECT_ID.",
        vec![
            plan("Count the female rows of patients.", r#"
patients = LoadDB('patients')
female = FilterDB(patients, 'GENDER=F')
print(GetValue(female, 'SUBJECT_ID, count'))"#),
            answer("2"),
        ],
        vec![],
    ));
    add("how many admissions had the admission type EMERGENCY?", scenario(
        "admissions.ADMISSION_TYPE holds EMERGENCY, ELECTIVE or URGENT; each admission has one HADM_ID.",
        vec![
            plan("Filter admissions by type and count them.", r#"
admissions = LoadDB('admissions')
emergency = FilterDB(admissions, 'ADMISSION_TYPE=EMERGENCY')
print(GetValue(emergency, 'HADM_ID, count'))"#),
            answer("4"),
        ],
        vec![],
    ));
    add("what is the maximum age of patient 28020 across all admissions?", scenario(
        "admissions.AGE is the age at admission; the patient is matched by admissions.SUBJECT_ID.",
        vec![
            plan("Take the maximum age over the patient's admissions.", r#"
admissions = FilterDB(LoadDB('admissions'), 'SUBJECT_ID=28020')
print(GetValue(admissions, 'AGE, max'))"#),
            answer("67"),
        ],
        vec![],
    ));
    add("how many times was aspirin ec prescribed?", scenario(
        "Aspirin EC is a drug, stored in prescriptions.DRUG as 'Aspirin EC'. Each prescriptions row is one prescription.",
        vec![
            plan("Filter prescriptions by drug name.", r#"
prescriptions = LoadDB('prescriptions')
aspirin = FilterDB(prescriptions, 'DRUG=aspirin ec')
print(GetValue(aspirin, 'ROW_ID, count'))"#),
            plan("Use the capitalisation stored in the table.", r#"
prescriptions = LoadDB('prescriptions')
aspirin = FilterDB(prescriptions, 'DRUG=Aspirin EC')
print(GetValue(aspirin, 'ROW_ID, count'))"#),
            answer("3"),
        ],
        vec!["Text comparison in FilterDB is case-sensitive. The condition uses 'aspirin ec', but the drug is stored as 'Aspirin EC', so no row matches."],
    ));
    add("what was the total prescribed dose of Vancomycin?", scenario(
        "Doses are in prescriptions.DOSE_VAL_RX with the unit in DOSE_UNIT_RX; the drug name is in prescriptions.DRUG.",
        vec![
            plan("Sum the Vancomycin doses.", r#"
vanco = FilterDB(LoadDB('prescriptions'), 'DRUG=Vancomycin')
print(GetValue(vanco, 'DOSE_VAL_RX, sum'))"#),
            answer("2250"),
        ],
        vec![],
    ));
    add("how many patients were given temporary tracheostomy?", scenario(
        "Temporary tracheostomy is a procedure. Its ICD-9 code is found through d_icd_procedures.SHORT_TITLE, and procedures_icd rows with that ICD9_CODE carry the SUBJECT_ID of the patients.",
        vec![
            plan("Look up the procedure code, then count distinct patients.", r#"
titles = LoadDB('d_icd_procedures')
code = GetValue(FilterDB(titles, 'SHORT_TITLE=Temporary tracheostomy'), 'ICD9_CODE')[0]
procedures = FilterDB(LoadDB('procedures_icd'), 'ICD9_CODE=' + str(code))
subjects = []
for s in GetValue(procedures, 'SUBJECT_ID'):
    if s not in subjects:
        subjects.append(s)
print(len(subjects))"#),
            answer("2"),
        ],
        vec![],
    ));
    add("what was the insurance of the last admission of patient 31300?", scenario(
        "admissions.INSURANCE holds the insurance of each admission; the latest admission has the greatest ADMITTIME.",
        vec![
            plan("Order the patient's admissions by time.", r#"
rows = SQLInterpreter("SELECT INSURANCE FROM admissions WHERE SUBJECT_ID = 31300 ORDER BY ADMITTIME DESC LIMIT 1")
print(rows[0][0])"#),
            answer("Medicaid"),
        ],
        vec![],
    ));
    add("what was the age of the patient at admission 121680?", scenario(
        "admissions.AGE is the age at admission; admissions are identified by HADM_ID.",
        vec![
            plan("Read the age of that admission.", r#"
admission = FilterDB(LoadDB('admissions'), 'HADM_ID=121680')
print(GetValue(admission, 'AGE')[0])"#),
            answer("67"),
        ],
        vec![],
    ));
    add("which drugs were prescribed to patient 10006?", scenario(
        "prescriptions.DRUG names each prescribed drug; the patient is prescriptions.SUBJECT_ID.",
        vec![
            plan("List the distinct drug names.", r#"
rows = FilterDB(LoadDB('prescriptions'), 'SUBJECT_ID=10006')
drugs = []
for d in GetValue(rows, 'DRUG'):
    if d not in drugs:
        drugs.append(d)
print(drugs)"#),
            answer("Aspirin EC, Heparin"),
        ],
        vec![],
    ));
    add("how many distinct patients received a drug by the IV route?", scenario(
        "The route of administration is prescriptions.ROUTE (PO, IV, SC); patients are prescriptions.SUBJECT_ID.",
        vec![
            plan("Collect distinct patients with an IV prescription.", r#"
iv = FilterDB(LoadDB('prescriptions'), 'ROUTE=IV')
subjects = []
for s in GetValue(iv, 'SUBJECT_ID'):
    if s not in subjects:
        subjects.append(s)
print(len(subjects))"#),
            answer("2"),
        ],
        vec![],
    ));
    add("what is the gender of the patient who was prescribed Furosemide?", scenario(
        "Furosemide appears in prescriptions.DRUG; link prescriptions.SUBJECT_ID to patients.SUBJECT_ID and read patients.GENDER.",
        vec![
            plan("Find the patient, then the gender.", r#"
rx = FilterDB(LoadDB('prescriptions'), 'DRUG=Furosemide')
subject = GetValue(rx, 'SUBJECT_ID')[0]
patient = FilterDB(LoadDB('patients'), 'SUBJECT_ID=' + str(subject))
print(GetValue(patient, 'GENDER')[0])"#),
            answer("M"),
        ],
        vec![],
    ));
    add("how many procedures were charted during admissions where the patient was older than 65?", scenario(
        "procedures_icd rows are linked to admissions by HADM_ID; admissions.AGE is the age at admission.",
        vec![
            plan("Join procedures with admissions.", r#"
rows = SQLInterpreter("SELECT COUNT(*) FROM procedures_icd JOIN admissions ON procedures_icd.HADM_ID = admissions.HADM_ID WHERE admissions.AGE > 65")
print(rows[0][0])"#),
            answer("2"),
        ],
        vec![],
    ));
    let heparin_cols = [
        "DOSE", "DOSE_VAL", "DOSE_RX", "DOSEVAL", "DOSE_VALUE", "VAL_RX", "DOSE_AMOUNT", "AMOUNT", "DOSAGE",
        "DOSE_MG", "DOSE_QTY",
    ];
    add("what was the average prescribed dose of Heparin?", scenario(
        "Heparin appears in prescriptions.DRUG; the dose is recorded with each prescription.",
        unknown_column_loop("prescriptions", "DRUG=Heparin", &heparin_cols, "mean"),
        vec![WRONG_CAUSE; 10],
    ));
    add("how many female patients were prescribed Aspirin EC?", scenario(
        "Aspirin EC appears in prescriptions.DRUG; prescriptions.SUBJECT_ID links to patients.SUBJECT_ID, whose GENDER is F for female patients.",
        vec![
            plan("Check the gender of each patient with an Aspirin EC prescription.", r#"
patients = LoadDB('patients')
rx = FilterDB(LoadDB('prescriptions'), 'DRUG=Aspirin EC')
subjects = []
for s in GetValue(rx, 'SUBJECT_ID'):
    if s not in subjects:
        subjects.append(s)
count = 0
for s in subjects:
    gender = GetValue(FilterDB(patients, 'SUBJECT_ID=' + str(s)), 'GENDER')[0]
    if gender == 'F':
        count += 1
print(count)"#),
            answer("2"),
        ],
        vec![],
    ));
    add("how many PO prescriptions were given during emergency admissions of female patients?", scenario(
        "prescriptions.ROUTE holds PO; prescriptions.HADM_ID links to admissions, whose ADMISSION_TYPE is EMERGENCY; admissions.SUBJECT_ID links to patients.GENDER.",
        vec![
            plan("Join the three tables.", r#"
rows = SQLInterpreter("SELECT COUNT(*) FROM prescriptions JOIN admissions ON prescriptions.HADM_ID = admissions.HADM_ID JOIN patients ON admissions.SUBJECT_ID = patients.SUBJECT_ID WHERE patients.GENDER = 'F' AND admissions.ADMISSION_TYPE = 'EMERGENCY' AND prescriptions.ROUTE = 'PO'")
print(rows[0][0])"#),
            answer("2"),
        ],
        vec![],
    ));
    add("how many female patients had a temporary tracheostomy during an emergency admission?", scenario(
        "patients.GENDER gives the sex; admissions.ADMISSION_TYPE the admission type; procedures_icd links admissions (HADM_ID) to ICD-9 codes, and d_icd_procedures.SHORT_TITLE names them.",
        vec![
            plan("Join all four tables.", r#"
rows = SQLInterpreter("SELECT DISTINCT patients.SUBJECT_ID FROM patients JOIN admissions ON patients.SUBJECT_ID = admissions.SUBJECT_ID JOIN procedures_icd ON admissions.HADM_ID = procedures_icd.HADM_ID JOIN d_icd_procedures ON procedures_icd.ICD9_CODE = d_icd_procedures.ICD9_CODE WHERE patients.GENDER = 'F' AND admissions.ADMISSION_TYPE = 'EMERGENCY' AND d_icd_procedures.SHORT_TITLE = 'Temporary tracheostomy'")
print(len(rows))"#),
            plan("Look up the code first, then join three tables.", r#"
code = GetValue(FilterDB(LoadDB('d_icd_procedures'), 'SHORT_TITLE=Temporary tracheostomy'), 'ICD9_CODE')[0]
rows = SQLInterpreter("SELECT DISTINCT patients.SUBJECT_ID FROM patients JOIN admissions ON patients.SUBJECT_ID = admissions.SUBJECT_ID JOIN procedures_icd ON admissions.HADM_ID = procedures_icd.HADM_ID WHERE patients.GENDER = 'F' AND admissions.ADMISSION_TYPE = 'EMERGENCY' AND procedures_icd.ICD9_CODE = '" + str(code) + "'")
print(len(rows))"#),
            answer("1"),
        ],
        vec!["The interpreter joins at most three tables, and the statement joins four. Resolve the procedure code from d_icd_procedures first."],
    ));
    add("what is the date one month after the admission time of admission 187491?", scenario(
        "admissions.ADMITTIME is the admission time of each HADM_ID; dates are shifted with Calendar.",
        vec![
            plan("Shift the admission time.", r#"
admit = GetValue(FilterDB(LoadDB('admissions'), 'HADM_ID=187491'), 'ADMITTIME')[0]
print(Calendar(admit, '+1 mon'))"#),
            plan("Use a different unit.", r#"
admit = GetValue(FilterDB(LoadDB('admissions'), 'HADM_ID=187491'), 'ADMITTIME')[0]
print(Calendar(admit, '+1 fortnight'))"#),
            "I could not find an offset that Calendar accepts for one month.\nTERMINATE".to_string(),
        ],
        vec![
            "The offset unit 'mon' may be misspelled.",
            "Calendar may not support this unit for this date.",
        ],
    ));
    add("how many patients had a closed bronchial biopsy?", scenario(
        "Procedures are named in d_icd_procedures.SHORT_TITLE; procedures_icd links their ICD9_CODE to patients by SUBJECT_ID.",
        vec![
            plan("Join procedures with their titles.", r#"
rows = SQLInterpreter("SELECT DISTINCT procedures_icd.SUBJECT_ID FROM procedures_icd JOIN d_icd_procedures ON procedures_icd.ICD9_CODE = d_icd_procedures.ICD9_CODE WHERE d_icd_procedures.SHORT_TITLE = 'Closed Bronchial Biopsy'")
print(len(rows))"#),
            plan("Match the stored capitalisation.", r#"
rows = SQLInterpreter("SELECT DISTINCT procedures_icd.SUBJECT_ID FROM procedures_icd JOIN d_icd_procedures ON procedures_icd.ICD9_CODE = d_icd_procedures.ICD9_CODE WHERE d_icd_procedures.SHORT_TITLE = 'Closed bronchial biopsy'")
print(len(rows))"#),
            "The query keeps returning nothing, so the answer cannot be determined.\nTERMINATE".to_string(),
        ],
        vec![
            "The title may be stored with different capitalisation.",
            "The join condition may be wrong.",
        ],
    ));
    add("list the admission ids of patient 31300.", scenario(
        "admissions.HADM_ID identifies each admission; admissions.SUBJECT_ID is the patient.",
        vec![
            "Patient 31300 has admissions in the admissions table, identified by HADM_ID.".to_string(),
            "The admission ids are the HADM_ID values of the rows with SUBJECT_ID 31300.".to_string(),
            "ANSWER: 187491, 155722\nTERMINATE".to_string(),
        ],
        vec![],
    ));
    add("how many admissions did patient 28020 have?", scenario(
        "admissions has one row per admission; the patient is admissions.SUBJECT_ID.",
        vec![
            plan("Count the patient's rows.", r#"
rows = FilterDB(LoadDB('prescriptions'), 'SUBJECT_ID=28020')
print(GetValue(rows, 'ROW_ID, count'))"#),
            answer("5"),
        ],
        vec![],
    ));
    let insulin_cols = [
        "UNIT", "DOSE_UNIT", "UNITS", "DOSEUNIT", "UNIT_RX", "DOSE_UNITS", "RX_UNIT", "UNIT_NAME", "MEASURE",
        "DOSE_UOM", "UOM",
    ];
    add(ADVERSARIAL_Q, scenario(
        "Insulin appears in prescriptions.DRUG.",
        insulin_cols
            .iter()
            .map(|c| {
                plan(
                    "Read the unit column.",
                    &format!("rows = FilterDB(LoadDB('prescriptions'), 'DRUG=Insulin')\nprint(GetValue(rows, '{c}')[0])"),
                )
            })
            .collect(),
        vec!["Another spelling of the column name could work."; 10],
    ));
    m
}

/// Picks replies by call type, question and turn. Calls must arrive in
/// order: a debug call is attributed to the question of the last planner or
/// knowledge call.
pub struct ScriptedBackend {
    scenarios: HashMap<String, Scenario>,
    state: Mutex<(String, usize)>,
}

impl ScriptedBackend {
    pub fn new() -> ScriptedBackend {
        ScriptedBackend {
            scenarios: scenarios(),
            state: Mutex::new((String::new(), 0)),
        }
    }
}

fn question_of(prompt: &str) -> String {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("Question: "))
        .last()
        .unwrap_or_default()
        .to_string()
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, LlmError> {
        let system = messages[0].content.as_str();
        let mut state = self.state.lock().unwrap();
        let missing = |q: &str| LlmError::BadResponse(format!("no script for {q:?}"));
        if system == DEBUG_SYSTEM {
            let s = self.scenarios.get(&state.0).ok_or_else(|| missing(&state.0))?;
            let reply = s
                .debug
                .get(state.1)
                .cloned()
                .ok_or_else(|| LlmError::BadResponse(format!("debug script exhausted for {:?}", state.0)))?;
            state.1 += 1;
            return Ok(reply);
        }
        let q = question_of(&messages[1].content);
        let s = self.scenarios.get(&q).ok_or_else(|| missing(&q))?;
        if system == KNOWLEDGE_SYSTEM {
            *state = (q, 0);
            return Ok(s.knowledge.clone());
        }
        let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
        if turn == 0 {
            *state = (q.clone(), 0);
        }
        s.turns
            .get(turn)
            .cloned()
            .ok_or_else(|| LlmError::BadResponse(format!("planner script exhausted for {q:?} at turn {turn}")))
    }
}

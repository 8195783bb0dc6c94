//! Query-specific background knowledge: which tables, columns and
//! identifiers a question touches, written by the model from the metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::llm::{chat, ChatBackend, ChatMessage, LlmError};

pub const KNOWLEDGE_SYSTEM: &str = "You are a clinical data specialist. Given the metadata of an \
EHR database and a question, write the background knowledge needed to answer it: the medical \
meaning of the terms, the tables and columns that hold the relevant records, and the identifiers \
that link those tables. Do not write code.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeDemo {
    pub question: String,
    pub knowledge: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSummary {
    pub query: String,
    pub body: String,
}

pub fn load_knowledge_demos(path: &Path) -> Result<Vec<KnowledgeDemo>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Metadata, then each demonstration, then the question on the last line.
pub fn build_knowledge_prompt(metadata_text: &str, q: &str, demos: &[KnowledgeDemo]) -> String {
    let mut out = String::new();
    out.push_str(metadata_text.trim_end());
    out.push_str("\n\n");
    for d in demos {
        out.push_str("Question: ");
        out.push_str(&d.question);
        out.push_str("\nKnowledge:\n");
        out.push_str(d.knowledge.trim_end());
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(q);
    out
}

pub fn integrate_knowledge(
    llm: &dyn ChatBackend,
    metadata_text: &str,
    q: &str,
    demos: &[KnowledgeDemo],
    temperature: f64,
) -> Result<KnowledgeSummary, LlmError> {
    let messages = [
        ChatMessage::system(KNOWLEDGE_SYSTEM),
        ChatMessage::user(build_knowledge_prompt(metadata_text, q, demos)),
    ];
    let reply = chat(llm, &messages, temperature)?;
    Ok(KnowledgeSummary {
        query: q.to_string(),
        body: reply.trim().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{fingerprint, ReplayBackend};

    fn demos() -> Vec<KnowledgeDemo> {
        vec![
            KnowledgeDemo {
                question: "q1".into(),
                knowledge: "k1".into(),
            },
            KnowledgeDemo {
                question: "q2".into(),
                knowledge: "k2\n".into(),
            },
        ]
    }

    #[test]
    fn prompt_template() {
        let p = build_knowledge_prompt("META\nTable: t", "count female patients", &demos());
        assert!(p.starts_with("META\nTable: t\n\n"));
        assert!(p.ends_with("count female patients"));
        assert_eq!(
            p,
            "META\nTable: t\n\nQuestion: q1\nKnowledge:\nk1\n\nQuestion: q2\nKnowledge:\nk2\n\nQuestion: count female patients"
        );
        assert_eq!(p, build_knowledge_prompt("META\nTable: t", "count female patients", &demos()));
        let bare = build_knowledge_prompt("META", "q", &[]);
        assert_eq!(bare, "META\n\nQuestion: q");
        assert!(!bare.contains("Knowledge:"));
    }

    #[test]
    fn reply_is_trimmed() {
        let messages = [
            ChatMessage::system(KNOWLEDGE_SYSTEM),
            ChatMessage::user(build_knowledge_prompt("META", "q", &[])),
        ];
        let replay = ReplayBackend::from_pairs([(fingerprint(&messages), "  look in prescriptions \n".to_string())]);
        let k = integrate_knowledge(&replay, "META", "q", &[], 0.0).unwrap();
        assert_eq!(k.body, "look in prescriptions");
        assert!(matches!(
            integrate_knowledge(&replay, "META", "other", &[], 0.0),
            Err(LlmError::ReplayMiss(_))
        ));
    }
}

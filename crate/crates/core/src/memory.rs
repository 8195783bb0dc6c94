//! Long-term memory of solved questions and the plans that solved them.
//!
//! Entries are retrieved as few-shot demonstrations by edit distance between
//! questions. The store is an append-only newline-delimited JSON file.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("cannot persist memory to {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("memory file {path} line {line}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("memory entries need a non-empty question and code")]
    EmptyEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Success,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub seq: u64,
    pub question: String,
    pub code: String,
    pub status: EntryStatus,
}

/// Edit distance with unit insert, delete and substitute costs, over Unicode
/// scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Orders entries by ascending distance to `query`, most recent first on
/// ties, and keeps the first `k`.
pub fn rank_entries(
    entries: &[MemoryEntry],
    query: &str,
    k: usize,
    lowercase: bool,
) -> Vec<MemoryEntry> {
    let norm = |s: &str| if lowercase { s.to_lowercase() } else { s.to_string() };
    let q = norm(query);
    let mut scored: Vec<(usize, &MemoryEntry)> = entries
        .iter()
        .map(|e| (levenshtein(&q, &norm(&e.question)), e))
        .collect();
    scored.sort_by(|(da, ea), (db, eb)| da.cmp(db).then(eb.seq.cmp(&ea.seq)));
    scored.into_iter().take(k).map(|(_, e)| e.clone()).collect()
}

/// Shared, append-only memory store. Reads may run concurrently; inserts are
/// serialized on the file handle.
#[derive(Debug)]
pub struct MemoryStore {
    entries: RwLock<Vec<MemoryEntry>>,
    path: PathBuf,
    writer: Mutex<()>,
    lowercase: bool,
    persist: bool,
}

impl MemoryStore {
    /// Opens a store, loading existing records. A missing file is an empty
    /// store; the file is created on first insert.
    pub fn open(path: impl Into<PathBuf>) -> Result<MemoryStore, MemoryError> {
        let path = path.into();
        let entries = if path.exists() {
            read_entries(&path)?
        } else {
            Vec::new()
        };
        Ok(MemoryStore {
            entries: RwLock::new(entries),
            path,
            writer: Mutex::new(()),
            lowercase: false,
            persist: true,
        })
    }

    /// A copy of the current entries whose inserts stay in memory and never
    /// touch the backing file.
    pub fn detached(&self) -> MemoryStore {
        MemoryStore {
            entries: RwLock::new(self.entries()),
            path: self.path.clone(),
            writer: Mutex::new(()),
            lowercase: self.lowercase,
            persist: false,
        }
    }

    /// Compare questions case-insensitively during retrieval.
    pub fn with_lowercase(mut self, lowercase: bool) -> MemoryStore {
        self.lowercase = lowercase;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Vec<MemoryEntry> {
        self.entries.read().expect("memory lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("memory lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn retrieve_topk(&self, question: &str, k: usize) -> Vec<MemoryEntry> {
        let entries = self.entries.read().expect("memory lock poisoned");
        rank_entries(&entries, question, k, self.lowercase)
    }

    pub fn insert_success(&self, question: &str, code: &str) -> Result<MemoryEntry, MemoryError> {
        if question.trim().is_empty() || code.trim().is_empty() {
            return Err(MemoryError::EmptyEntry);
        }
        let _guard = self.writer.lock().expect("memory writer poisoned");
        let seq = self
            .entries
            .read()
            .expect("memory lock poisoned")
            .last()
            .map(|e| e.seq + 1)
            .unwrap_or(0);
        let entry = MemoryEntry {
            seq,
            question: question.to_string(),
            code: code.to_string(),
            status: EntryStatus::Success,
        };
        let persist = |source| MemoryError::Persistence {
            path: self.path.clone(),
            source,
        };
        if self.persist {
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(persist)?;
            file.write_all(line.as_bytes()).map_err(persist)?;
            file.flush().map_err(persist)?;
        }
        self.entries
            .write()
            .expect("memory lock poisoned")
            .push(entry.clone());
        Ok(entry)
    }

    /// Truncates the backing file and forgets every entry.
    pub fn clear(&self) -> Result<(), MemoryError> {
        let _guard = self.writer.lock().expect("memory writer poisoned");
        if self.persist {
            File::create(&self.path).map_err(|source| MemoryError::Persistence {
                path: self.path.clone(),
                source,
            })?;
        }
        self.entries.write().expect("memory lock poisoned").clear();
        Ok(())
    }
}

fn read_entries(path: &Path) -> Result<Vec<MemoryEntry>, MemoryError> {
    let file = fs::File::open(path).map_err(|source| MemoryError::Persistence {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: Vec<MemoryEntry> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MemoryError::Persistence {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |detail: String| MemoryError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let entry: MemoryEntry = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if out.last().is_some_and(|p| p.seq >= entry.seq) {
            return Err(corrupt(format!("seq {} is not increasing", entry.seq)));
        }
        out.push(entry);
    }
    Ok(out)
}

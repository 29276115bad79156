//! File formats: `schema.json`, `casebase.json` (snapshot) and `audit.log`.
//!
//! Snapshot and schema files are canonical JSON: UTF-8, object keys sorted,
//! two-space indentation, integral numbers written without a fractional part,
//! cases ordered by id, and a trailing newline. The audit log holds one
//! compact canonical JSON object per line.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use thiserror::Error;

use crate::learning::{AuditEvent, CaseBase, KnowledgeBase, LearningError};
use crate::model::{Case, CaseId, Schema, Violation};

pub const FORMAT_VERSION: u64 = 1;

pub const SCHEMA_FILE: &str = "schema.json";
pub const SNAPSHOT_FILE: &str = "casebase.json";
pub const AUDIT_FILE: &str = "audit.log";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: {message}")]
    Field {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("invalid case base: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("audit log corrupt at line {line}: expected sequence {expected}, found {found}")]
    Corruption {
        line: usize,
        expected: u64,
        found: u64,
    },
    #[error("audit log line {line}: {source}")]
    Replay {
        line: usize,
        #[source]
        source: LearningError,
    },
    #[error("{0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_owned(),
        source,
    }
}

fn json_err(e: serde_json::Error) -> StorageError {
    let (line, column, message) = (e.line(), e.column(), e.to_string());
    if e.is_data() {
        StorageError::Field {
            line,
            column,
            message,
        }
    } else {
        StorageError::Syntax {
            line,
            column,
            message,
        }
    }
}

/// Rewrites integral floats as integers; object keys are already sorted by
/// `serde_json::Map`.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() && f.fract() == 0.0 && f.abs() < 9_007_199_254_740_992.0 => {
                Value::Number(Number::from(f as i64))
            }
            _ => Value::Number(n),
        },
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| (k, canonicalize(v)))
                .collect(),
        ),
        other => other,
    }
}

pub fn to_canonical_value<T: Serialize>(value: &T) -> Value {
    canonicalize(serde_json::to_value(value).expect("in-memory values serialize"))
}

/// Pretty canonical JSON with a trailing newline.
pub fn to_canonical_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&to_canonical_value(value))
        .expect("in-memory values serialize");
    s.push('\n');
    s
}

/// Single-line canonical JSON, no trailing newline.
pub fn to_canonical_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(&to_canonical_value(value)).expect("in-memory values serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub format_version: u64,
    pub schema: Schema,
    pub cases: Vec<Case>,
    pub next_id: CaseId,
}

impl SnapshotFile {
    pub fn of(cb: &CaseBase) -> Self {
        SnapshotFile {
            format_version: FORMAT_VERSION,
            schema: cb.schema().clone(),
            cases: cb.cases().to_vec(),
            next_id: cb.next_id(),
        }
    }
}

pub fn snapshot_to_string(cb: &CaseBase) -> String {
    to_canonical_string(&SnapshotFile::of(cb))
}

pub fn parse_snapshot(text: &str) -> Result<CaseBase, StorageError> {
    let raw: Value = serde_json::from_str(text).map_err(json_err)?;
    match raw.get("format_version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(StorageError::UnsupportedVersion(other)),
        None => {
            return Err(StorageError::Field {
                line: 1,
                column: 1,
                message: "format_version missing or not an integer".into(),
            })
        }
    }
    let file: SnapshotFile = serde_json::from_str(text).map_err(json_err)?;
    CaseBase::from_parts(file.schema, file.cases, file.next_id).map_err(StorageError::Validation)
}

/// Writes `contents` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StorageError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StorageError::Io {
        path: path.to_owned(),
        source: e.error,
    })?;
    Ok(())
}

pub fn save_snapshot(cb: &CaseBase, path: &Path) -> Result<(), StorageError> {
    write_atomic(path, snapshot_to_string(cb).as_bytes())
}

pub fn load_snapshot(path: &Path) -> Result<CaseBase, StorageError> {
    parse_snapshot(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn save_schema(schema: &Schema, path: &Path) -> Result<(), StorageError> {
    write_atomic(path, to_canonical_string(schema).as_bytes())
}

pub fn load_schema(path: &Path) -> Result<Schema, StorageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let schema: Schema = serde_json::from_str(&text).map_err(json_err)?;
    crate::model::validate_schema(&schema).map_err(StorageError::Validation)?;
    Ok(schema)
}

/// Appender that refuses anything but the next sequence number.
pub struct AuditWriter {
    path: PathBuf,
    file: File,
    last_sequence: u64,
}

impl AuditWriter {
    pub fn open(path: &Path) -> Result<Self, StorageError> {
        let last_sequence = if path.exists() {
            read_audit(path)?.last().map_or(0, |e| e.sequence)
        } else {
            0
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(AuditWriter {
            path: path.to_owned(),
            file,
            last_sequence,
        })
    }

    pub fn last_sequence(&self) -> u64 {
        self.last_sequence
    }

    pub fn append(&mut self, event: &AuditEvent) -> Result<(), StorageError> {
        let expected = self.last_sequence + 1;
        if event.sequence != expected {
            return Err(StorageError::Corruption {
                line: expected as usize,
                expected,
                found: event.sequence,
            });
        }
        let mut line = to_canonical_line(event);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(io_err(&self.path))?;
        self.last_sequence = event.sequence;
        Ok(())
    }
}

pub fn append_audit(event: &AuditEvent, path: &Path) -> Result<(), StorageError> {
    AuditWriter::open(path)?.append(event)
}

pub fn audit_to_string(events: &[AuditEvent]) -> String {
    events
        .iter()
        .map(|e| to_canonical_line(e) + "\n")
        .collect()
}

/// Parses a JSON-lines journal; sequence numbers must run 1, 2, 3, ...
pub fn parse_audit(reader: impl BufRead) -> Result<Vec<AuditEvent>, StorageError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| StorageError::Io {
            path: PathBuf::from(AUDIT_FILE),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let event: AuditEvent = serde_json::from_str(&line).map_err(|e| {
            let located = json_err(e);
            match located {
                StorageError::Syntax { column, message, .. } => StorageError::Syntax {
                    line: line_no,
                    column,
                    message,
                },
                StorageError::Field { column, message, .. } => StorageError::Field {
                    line: line_no,
                    column,
                    message,
                },
                other => other,
            }
        })?;
        let expected = events.last().map_or(1, |e: &AuditEvent| e.sequence + 1);
        if event.sequence != expected {
            return Err(StorageError::Corruption {
                line: line_no,
                expected,
                found: event.sequence,
            });
        }
        events.push(event);
    }
    Ok(events)
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditEvent>, StorageError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_audit(BufReader::new(file))
}

pub fn replay_events(schema: Schema, events: Vec<AuditEvent>) -> Result<KnowledgeBase, StorageError> {
    let mut kb = KnowledgeBase::empty(schema).map_err(StorageError::Validation)?;
    for (i, event) in events.into_iter().enumerate() {
        kb.apply(event).map_err(|source| StorageError::Replay {
            line: i + 1,
            source,
        })?;
    }
    Ok(kb)
}

/// Rebuilds a knowledge base from an audit log, starting from an empty base.
pub fn replay_audit(schema: Schema, path: &Path) -> Result<KnowledgeBase, StorageError> {
    replay_events(schema, read_audit(path)?)
}

/// Directory holding `schema.json`, `casebase.json` and `audit.log`.
#[derive(Debug, Clone)]
pub struct BaseDir {
    root: PathBuf,
}

impl BaseDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        BaseDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn schema_path(&self) -> PathBuf {
        self.root.join(SCHEMA_FILE)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.root.join(SNAPSHOT_FILE)
    }

    pub fn audit_path(&self) -> PathBuf {
        self.root.join(AUDIT_FILE)
    }

    /// Writes all three files from scratch.
    pub fn create(&self, kb: &KnowledgeBase) -> Result<(), StorageError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        save_schema(kb.schema(), &self.schema_path())?;
        write_atomic(&self.audit_path(), audit_to_string(kb.events()).as_bytes())?;
        save_snapshot(kb.base(), &self.snapshot_path())
    }

    /// Loads the snapshot and checks it against the schema file and the journal.
    pub fn load(&self) -> Result<KnowledgeBase, StorageError> {
        let base = load_snapshot(&self.snapshot_path())?;
        let schema_path = self.schema_path();
        if schema_path.exists() && load_schema(&schema_path)? != *base.schema() {
            return Err(StorageError::Mismatch(format!(
                "{} differs from the snapshot schema",
                schema_path.display()
            )));
        }
        let events = if self.audit_path().exists() {
            read_audit(&self.audit_path())?
        } else {
            Vec::new()
        };
        let replayed = replay_events(base.schema().clone(), events)?;
        if replayed.base() != &base {
            return Err(StorageError::Mismatch(
                "audit log replay does not reproduce the snapshot".into(),
            ));
        }
        Ok(replayed)
    }

    /// Appends the journal entries after `since` and republishes the snapshot.
    pub fn persist(&self, kb: &KnowledgeBase, since: u64) -> Result<(), StorageError> {
        let mut writer = AuditWriter::open(&self.audit_path())?;
        for event in kb.events_since(since) {
            writer.append(event)?;
        }
        save_snapshot(kb.base(), &self.snapshot_path())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Schema;

    #[test]
    fn canonical_keys_sorted_and_integers_plain() {
        let v = serde_json::json!({"b": 1.0, "a": [2.5, 3.0], "c": {"z": 0, "y": -4.0}});
        assert_eq!(
            to_canonical_line(&v),
            r#"{"a":[2.5,3],"b":1,"c":{"y":-4,"z":0}}"#
        );
        assert!(to_canonical_string(&v).ends_with("}\n"));
    }

    #[test]
    fn empty_base_snapshot() {
        let cb = CaseBase::new(Schema::default_rail()).unwrap();
        let text = snapshot_to_string(&cb);
        let back = parse_snapshot(&text).unwrap();
        assert_eq!(back, cb);
        assert!(back.is_empty());
        assert_eq!(snapshot_to_string(&back), text);
    }

    #[test]
    fn unknown_version_rejected() {
        let cb = CaseBase::new(Schema::default_rail()).unwrap();
        let text = snapshot_to_string(&cb).replace("\"format_version\": 1", "\"format_version\": 999");
        assert!(matches!(parse_snapshot(&text), Err(StorageError::UnsupportedVersion(999))));
    }

    #[test]
    fn syntax_error_has_location() {
        match parse_snapshot("{\n  \"format_version\": 1,\n  oops\n}") {
            Err(StorageError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_log_replays_to_empty_base() {
        let events = parse_audit("".as_bytes()).unwrap();
        let kb = replay_events(Schema::default_rail(), events).unwrap();
        assert!(kb.base().is_empty());
    }
}

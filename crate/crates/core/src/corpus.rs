//! Cluster datasets: JSONL ingestion, sentence splitting and stable
//! sentence identities.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Tokens ending in `.` that never close a sentence.
const ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "U.S.", "e.g.", "i.e.", "etc.", "vs.", "No.", "Fig.", "Eq.",
];

const TERMINATORS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Global position within the cluster: document order, then reading order.
    pub index: usize,
    pub doc_id: String,
    pub text: String,
    pub content_hash: String,
}

/// One multi-document summarization instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub id: String,
    pub documents: Vec<Document>,
    pub reference_summary: Option<String>,
    pub sentences: Vec<Sentence>,
}

impl ClusterRecord {
    /// Builds a record and splits its documents into indexed sentences.
    pub fn new(
        id: impl Into<String>,
        documents: Vec<Document>,
        reference_summary: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidCluster("id must be nonempty".into()));
        }
        if !documents.iter().any(|d| !d.text.trim().is_empty()) {
            return Err(Error::InvalidCluster(format!(
                "cluster {id} has no document with nonempty text"
            )));
        }
        let mut sentences = Vec::new();
        for doc in &documents {
            for text in split_sentences(&doc.text) {
                sentences.push(Sentence {
                    index: sentences.len(),
                    doc_id: doc.doc_id.clone(),
                    content_hash: content_hash(&text),
                    text,
                });
            }
        }
        Ok(ClusterRecord {
            id,
            documents,
            reference_summary,
            sentences,
        })
    }

    pub fn sentence_texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.text.clone()).collect()
    }

    /// Reference summary split into sentences; empty when absent.
    pub fn reference_sentences(&self) -> Vec<String> {
        self.reference_summary
            .as_deref()
            .map(split_sentences)
            .unwrap_or_default()
    }

    /// Serializes back to one dataset line.
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::json!({
            "id": self.id,
            "documents": self.documents,
        });
        if let Some(summary) = &self.reference_summary {
            obj["summary"] = Value::String(summary.clone());
        }
        obj.to_string()
    }
}

/// Trim and collapse internal whitespace runs to a single space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// SHA-256 of the normalized text, lowercase hex.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(normalize_text(text).as_bytes()))
}

/// Rule-based sentence splitter.
///
/// A sentence ends after `.`, `!` or `?` (plus any trailing terminators and
/// closing quotes/brackets) when followed by whitespace and then an
/// uppercase letter, digit or opening quote. A `.` that ends a known
/// abbreviation never splits.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;

    let push = |from: usize, to: usize, out: &mut Vec<String>| {
        let piece: String = chars[from..to].iter().collect();
        let piece = piece.trim();
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
    };

    while i < n {
        let c = chars[i];
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < n && TERMINATORS.contains(&chars[end]) {
            end += 1;
        }
        while end < n && CLOSERS.contains(&chars[end]) {
            end += 1;
        }
        if end < n && chars[end].is_whitespace() {
            let mut next = end;
            while next < n && chars[next].is_whitespace() {
                next += 1;
            }
            let opens = next < n
                && (chars[next].is_uppercase()
                    || chars[next].is_ascii_digit()
                    || OPENERS.contains(&chars[next]));
            if opens && !(c == '.' && end == i + 1 && ends_with_abbreviation(&chars, i)) {
                push(start, end, &mut out);
                start = next;
                i = next;
                continue;
            }
        }
        i = end;
    }
    if start < n {
        push(start, n, &mut out);
    }
    out
}

/// Whether the whitespace-delimited token ending at `dot` is an abbreviation.
fn ends_with_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut from = dot;
    while from > 0 && !chars[from - 1].is_whitespace() {
        from -= 1;
    }
    let token: String = chars[from..=dot].iter().collect();
    let token = token.trim_start_matches(OPENERS);
    ABBREVIATIONS.contains(&token)
}

fn required<'a>(obj: &'a serde_json::Map<String, Value>, field: &'static str, line: usize) -> Result<&'a Value> {
    obj.get(field).ok_or(Error::MissingField { field, line })
}

fn string_field(value: &Value, field: &str, line: usize) -> Result<String> {
    value.as_str().map(str::to_string).ok_or_else(|| Error::InvalidRecord {
        line,
        message: format!("field {field} must be a string"),
    })
}

/// Parses one dataset line (1-based `line` for error messages).
pub fn parse_cluster_line(raw: &str, line: usize) -> Result<ClusterRecord> {
    let value: Value = serde_json::from_str(raw).map_err(|e| Error::MalformedLine {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::MalformedLine {
        line,
        message: "expected a JSON object".into(),
    })?;

    let id = string_field(required(obj, "id", line)?, "id", line)?;
    let docs = required(obj, "documents", line)?
        .as_array()
        .ok_or_else(|| Error::InvalidRecord {
            line,
            message: "field documents must be an array".into(),
        })?;
    let mut documents = Vec::with_capacity(docs.len());
    for doc in docs {
        let doc = doc.as_object().ok_or_else(|| Error::InvalidRecord {
            line,
            message: "each document must be an object".into(),
        })?;
        documents.push(Document {
            doc_id: string_field(required(doc, "doc_id", line)?, "doc_id", line)?,
            text: string_field(required(doc, "text", line)?, "text", line)?,
        });
    }
    let summary = match obj.get("summary") {
        None | Some(Value::Null) => None,
        Some(v) => Some(string_field(v, "summary", line)?),
    };

    ClusterRecord::new(id, documents, summary).map_err(|e| Error::InvalidRecord {
        line,
        message: e.to_string(),
    })
}

/// Loads a JSONL cluster dataset, one record per nonblank line, in file order.
pub fn load_cluster_dataset(path: impl AsRef<Path>) -> Result<Vec<ClusterRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let record = parse_cluster_line(raw, i + 1)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::InvalidRecord {
                line: i + 1,
                message: format!("duplicate id {}", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    #[test]
    fn splits_basic_cases() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
        assert_eq!(
            split_sentences("It rained. Roads flooded."),
            vec!["It rained.", "Roads flooded."]
        );
        assert_eq!(
            split_sentences("Dr. Smith arrived. He spoke."),
            vec!["Dr. Smith arrived.", "He spoke."]
        );
    }

    #[test]
    fn respects_abbreviations_and_lowercase_continuations() {
        assert_eq!(
            split_sentences("The U.S. Army left. Then what?"),
            vec!["The U.S. Army left.", "Then what?"]
        );
        assert_eq!(split_sentences("See e.g. this one."), vec!["See e.g. this one."]);
        assert_eq!(split_sentences("It was 3 p.m. and late."), vec!["It was 3 p.m. and late."]);
        assert_eq!(
            split_sentences("Wow! \"Really?\" 12 people came."),
            vec!["Wow!", "\"Really?\"", "12 people came."]
        );
        assert_eq!(split_sentences("No terminator here"), vec!["No terminator here"]);
    }

    #[test]
    fn hash_is_normalized() {
        let a = content_hash("  Roads   flooded.\n");
        assert_eq!(a, content_hash("Roads flooded."));
        assert_eq!(a.len(), 64);
        assert_ne!(a, content_hash("roads flooded."));
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_empty_file() {
        let f = write_tmp("");
        assert!(load_cluster_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn loads_and_indexes() {
        let f = write_tmp(
            r#"{"id":"c1","documents":[{"doc_id":"a","text":"One here. Two here."},{"doc_id":"b","text":"Three here. Four here."}],"summary":"One."}"#,
        );
        let recs = load_cluster_dataset(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        let idx: Vec<usize> = recs[0].sentences.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(recs[0].sentences[2].doc_id, "b");
        assert_eq!(recs[0].reference_summary.as_deref(), Some("One."));
    }

    #[test]
    fn missing_documents_names_field_and_line() {
        let f = write_tmp(r#"{"id":"c1"}"#);
        let err = load_cluster_dataset(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing field documents at line 1");
    }

    #[test]
    fn malformed_line_names_line() {
        let f = write_tmp("{\"id\":\"a\",\"documents\":[{\"doc_id\":\"d\",\"text\":\"A.\"}]}\n{oops\n");
        let err = load_cluster_dataset(f.path()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_and_empty_docs() {
        let line = r#"{"id":"a","documents":[{"doc_id":"d","text":"A."}]}"#;
        let f = write_tmp(&format!("{line}\n{line}\n"));
        assert!(load_cluster_dataset(f.path()).is_err());
        let f = write_tmp(r#"{"id":"a","documents":[{"doc_id":"d","text":"  "}]}"#);
        assert!(load_cluster_dataset(f.path()).is_err());
    }

    #[test]
    fn round_trips_through_json_line() {
        let rec = ClusterRecord::new(
            "x",
            vec![Document { doc_id: "d".into(), text: "A b. C d.".into() }],
            Some("A b.".into()),
        )
        .unwrap();
        assert_eq!(parse_cluster_line(&rec.to_json_line(), 1).unwrap(), rec);
    }

    proptest! {
        #[test]
        fn splitting_preserves_non_whitespace(text in "[A-Za-z0-9 .!?\"']{0,80}") {
            let parts = split_sentences(&text);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            let joined: String = parts.concat().chars().filter(|c| !c.is_whitespace()).collect();
            let original: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, original);
        }

        #[test]
        fn splitting_is_idempotent(text in "[A-Za-z ]{1,30}[.!?]") {
            for part in split_sentences(&text) {
                prop_assert_eq!(split_sentences(&part), vec![part.clone()]);
            }
        }
    }
}

//! Annotation JSONL: one `{"id", "labels", "ref_labels"?}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{CoreError, Result};
use crate::label::BoundaryLabel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub labels: Vec<BoundaryLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_labels: Option<Vec<BoundaryLabel>>,
}

pub fn write_annotations(records: &[AnnotationRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(|e| CoreError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: index + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

/// Reads `(id, labels)` pairs from either an annotation file or a corpus file.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<BoundaryLabel>)>> {
    let path = path.as_ref();
    let first = {
        let mut reader = BufReader::new(File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        line
    };
    let is_corpus = serde_json::from_str::<serde_json::Value>(&first)
        .map(|v| v.get("vocab_size").is_some())
        .unwrap_or(false);
    if is_corpus {
        let corpus = Corpus::read(path)?;
        Ok(corpus.utterances.into_iter().map(|u| (u.id, u.labels)).collect())
    } else {
        Ok(read_annotations(path)?
            .into_iter()
            .map(|r| (r.id, r.labels))
            .collect())
    }
}

/// Pairs two label files by position, requiring identical ids and lengths.
pub fn align(
    reference: &[(String, Vec<BoundaryLabel>)],
    hypothesis: &[(String, Vec<BoundaryLabel>)],
) -> Result<()> {
    if reference.len() != hypothesis.len() {
        return Err(CoreError::Misaligned(format!(
            "{} vs {} utterances",
            reference.len(),
            hypothesis.len()
        )));
    }
    for ((rid, r), (hid, h)) in reference.iter().zip(hypothesis) {
        if rid != hid {
            return Err(CoreError::Misaligned(format!("utterance `{rid}` paired with `{hid}`")));
        }
        if r.len() != h.len() {
            return Err(CoreError::Misaligned(format!(
                "utterance `{rid}`: {} vs {} labels",
                r.len(),
                h.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::BoundaryLabel::*;

    #[test]
    fn ref_labels_are_optional() {
        let record = AnnotationRecord {
            id: "x".into(),
            labels: vec![Iph],
            ref_labels: None,
        };
        let json = serde_json::to_string(&record).unwrap();
        assert_eq!(json, r#"{"id":"x","labels":[4]}"#);
        let back: AnnotationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn alignment_checks_ids_and_lengths() {
        let a = vec![("u".to_string(), vec![Lw, Iph])];
        let b = vec![("v".to_string(), vec![Lw, Iph])];
        let c = vec![("u".to_string(), vec![Iph])];
        assert!(align(&a, &a).is_ok());
        assert!(align(&a, &b).is_err());
        assert!(align(&a, &c).is_err());
        assert!(align(&a, &[]).is_err());
    }
}

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sentence of a corpus: original tokens, an optional sanitized copy, and
/// the mask of positions under attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct SentenceRecord {
    pub id: u64,
    pub tokens: Vec<String>,
    pub sensitive: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sanitized: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: u64,
    tokens: Vec<String>,
    #[serde(default)]
    sensitive: Option<Vec<bool>>,
    #[serde(default)]
    sanitized: Option<Vec<String>>,
}

impl TryFrom<RawRecord> for SentenceRecord {
    type Error = String;

    fn try_from(raw: RawRecord) -> std::result::Result<Self, Self::Error> {
        let sensitive = raw.sensitive.unwrap_or_else(|| vec![true; raw.tokens.len()]);
        let record = SentenceRecord { id: raw.id, tokens: raw.tokens, sensitive, sanitized: raw.sanitized };
        record.validate().map_err(|e| e.to_string())?;
        Ok(record)
    }
}

impl SentenceRecord {
    /// A record whose every position is sensitive.
    pub fn new(id: u64, tokens: Vec<String>) -> Self {
        let sensitive = vec![true; tokens.len()];
        SentenceRecord { id, tokens, sensitive, sanitized: None }
    }

    pub fn with_mask(id: u64, tokens: Vec<String>, sensitive: Vec<bool>) -> Result<Self> {
        let record = SentenceRecord { id, tokens, sensitive, sanitized: None };
        record.validate()?;
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sensitive_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.sensitive.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i)
    }

    /// Checks the length and mask invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::InvalidRecord { id: self.id, message });
        if self.sensitive.len() != self.tokens.len() {
            return bad(format!("sensitive has {} entries for {} tokens", self.sensitive.len(), self.tokens.len()));
        }
        if let Some(sanitized) = &self.sanitized {
            if sanitized.len() != self.tokens.len() {
                return bad(format!("sanitized has {} entries for {} tokens", sanitized.len(), self.tokens.len()));
            }
            for (i, ((orig, san), sens)) in self.tokens.iter().zip(sanitized).zip(&self.sensitive).enumerate() {
                if !sens && orig != san {
                    return bad(format!("non-sensitive position {i} was altered"));
                }
            }
        }
        Ok(())
    }
}

/// Reads a JSON-lines corpus, one record per non-blank line.
pub fn read_corpus<R: BufRead>(source: R) -> Result<Vec<SentenceRecord>> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord =
            serde_json::from_str(&line).map_err(|e| Error::CorpusParse { line: i + 1, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_corpus<W: Write>(mut sink: W, records: &[SentenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitive_defaults_to_all_true() {
        let rs = read_corpus(r#"{"id": 3, "tokens": ["a", "b"]}"#.as_bytes()).unwrap();
        assert_eq!(rs[0].sensitive, vec![true, true]);
        assert!(rs[0].sanitized.is_none());
    }

    #[test]
    fn rejects_misaligned_fields() {
        let err = read_corpus(r#"{"id": 1, "tokens": ["a"], "sensitive": [true, false]}"#.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::CorpusParse { line: 1, .. }), "{err}");
        let err = read_corpus(
            "\n{\"id\": 1, \"tokens\": [\"a\", \"b\"], \"sensitive\": [true, false], \"sanitized\": [\"a\", \"c\"]}"
                .as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CorpusParse { line: 2, .. }), "{err}");
    }

    #[test]
    fn round_trip() {
        let mut r = SentenceRecord::with_mask(9, vec!["x".into(), "y".into()], vec![true, false]).unwrap();
        r.sanitized = Some(vec!["z".into(), "y".into()]);
        let mut buf = Vec::new();
        write_corpus(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"id\":9,\"tokens\":[\"x\",\"y\"],\"sensitive\":[true,false],\"sanitized\":[\"z\",\"y\"]}\n"
        );
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), vec![r]);
    }
}

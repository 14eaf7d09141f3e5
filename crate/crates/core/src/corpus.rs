//! JSONL corpus files: one header object, then one utterance object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::utterance::Utterance;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub vocab_size: u32,
    /// Number of non-silence phones; phone ids run over `0..=phone_count` with 0 as silence.
    pub phone_count: u32,
    pub feature_dim: u32,
    pub format_version: u32,
}

impl CorpusHeader {
    pub fn new(vocab_size: u32, phone_count: u32, feature_dim: u32) -> Self {
        Self {
            vocab_size,
            phone_count,
            feature_dim,
            format_version: FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(header: CorpusHeader, utterances: Vec<Utterance>) -> Self {
        Self { header, utterances }
    }

    pub fn empty() -> Self {
        Self::new(CorpusHeader::new(0, 0, 0), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.header.vocab_size as usize
    }

    pub fn phone_count(&self) -> usize {
        self.header.phone_count as usize
    }

    pub fn feature_dim(&self) -> usize {
        self.header.feature_dim as usize
    }

    /// Phone produced by `token` under the corpus's many-to-one character → phone map.
    pub fn phone_of(&self, token: u32) -> u32 {
        1 + token % self.header.phone_count.max(1)
    }

    pub fn validate_utterance(&self, utt: &Utterance) -> Result<()> {
        utt.validate(self.feature_dim())?;
        let v = self.header.vocab_size;
        if let Some(&bad) = utt.tokens.iter().find(|&&t| t >= v) {
            return Err(CoreError::Validation {
                id: utt.id.clone(),
                message: format!("token {bad} >= vocab_size {v}"),
            });
        }
        if let Some(&bad) = utt.frame_phones.iter().find(|&&p| p > self.header.phone_count) {
            return Err(CoreError::Validation {
                id: utt.id.clone(),
                message: format!("phone {bad} > phone_count {}", self.header.phone_count),
            });
        }
        utt.validate_phones(|t| self.phone_of(t))
    }

    pub fn validate(&self) -> Result<()> {
        if self.header.format_version != FORMAT_VERSION {
            return Err(CoreError::Parse {
                line: 1,
                message: format!("unsupported format_version {}", self.header.format_version),
            });
        }
        self.utterances.iter().try_for_each(|u| self.validate_utterance(u))
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let reader = BufReader::new(reader);
        let mut header: Option<CorpusHeader> = None;
        let mut utterances = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line_no = index + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| CoreError::Parse {
                line: line_no,
                message: e.to_string(),
            };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(parse_err)?);
            } else {
                utterances.push(serde_json::from_str::<Utterance>(&line).map_err(parse_err)?);
            }
        }
        let corpus = match header {
            Some(header) => Corpus::new(header, utterances),
            None => Corpus::empty(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(File::open(path)?)
    }

    /// Canonical serialization: fixed key order, shortest round-trip float text.
    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut writer = BufWriter::new(writer);
        let to_io = |e: serde_json::Error| CoreError::Io(e.into());
        serde_json::to_writer(&mut writer, &self.header).map_err(to_io)?;
        writer.write_all(b"\n")?;
        for utt in &self.utterances {
            serde_json::to_writer(&mut writer, utt).map_err(to_io)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(File::create(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.to_writer(&mut out).expect("writing to memory cannot fail");
        out
    }
}

/// Reads a corpus file.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::read(path)
}

/// Writes a corpus file in canonical form.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    corpus.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::BoundaryLabel::*;
    use crate::utterance::TokenSpan;

    fn utt(id: &str, tokens: Vec<u32>) -> Utterance {
        let n = tokens.len() as u32;
        let mut labels = vec![Lw; tokens.len()];
        *labels.last_mut().unwrap() = Iph;
        Utterance {
            id: id.into(),
            frame_phones: tokens.iter().map(|t| 1 + t % 4).collect(),
            token_spans: (0..n).map(|i| TokenSpan(i, i + 1)).collect(),
            frames: (0..n).map(|i| vec![i as f32 * 0.1, -1.0 / 3.0, 1e-7]).collect(),
            labels,
            tokens,
        }
    }

    fn sample() -> Corpus {
        Corpus::new(
            CorpusHeader::new(10, 4, 3),
            vec![utt("a", vec![1, 2]), utt("b", vec![9]), utt("c", vec![0, 5, 7])],
        )
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let corpus = Corpus::from_reader(&b""[..]).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn round_trip_is_identity_and_byte_stable() {
        let corpus = sample();
        let bytes = corpus.to_bytes();
        let back = Corpus::from_reader(&bytes[..]).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_line_format() {
        let bytes = sample().to_bytes();
        let first = bytes.split(|&b| b == b'\n').next().unwrap();
        assert_eq!(
            std::str::from_utf8(first).unwrap(),
            r#"{"vocab_size":10,"phone_count":4,"feature_dim":3,"format_version":1}"#
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut text = String::from_utf8(sample().to_bytes()).unwrap();
        text.push_str("{not json\n");
        match Corpus::from_reader(text.as_bytes()) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_length_mismatch_names_utterance() {
        let mut corpus = sample();
        corpus.utterances[2].labels.remove(0);
        let bytes = corpus.to_bytes();
        match Corpus::from_reader(&bytes[..]) {
            Err(CoreError::Validation { id, .. }) => assert_eq!(id, "c"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn token_out_of_vocab() {
        let mut corpus = sample();
        corpus.header.vocab_size = 5;
        assert!(corpus.validate().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&sample(), &path).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), sample());
    }
}

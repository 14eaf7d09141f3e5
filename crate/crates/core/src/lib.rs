//! Data model for prosodic boundary annotation.
//!
//! Five nested boundary levels (character, lexicon word, prosodic word,
//! prosodic phrase, intonational phrase) are attached one per text token.
//! This crate holds the label/tree types, the `{speech, text, prosody}`
//! utterance triplets and their JSONL corpus format, a synthetic corpus
//! generator whose acoustic cues encode the true boundaries, and the
//! evaluation metrics (per-level precision/recall/F1, kappa agreement).

pub mod annotation;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod label;
pub mod synth;
pub mod tree;
pub mod utterance;

pub use annotation::AnnotationRecord;
pub use corpus::{Corpus, CorpusHeader};
pub use error::{CoreError, Result};
pub use label::{BoundaryLabel, NUM_LABELS};
pub use tree::ProsodyTree;
pub use utterance::{TokenSpan, Utterance};

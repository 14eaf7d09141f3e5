//! Hierarchical IPH → PPH → PW → LW → character representation of an utterance's prosody.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::label::{check_terminal, BoundaryLabel};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LexiconWord {
    pub chars: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProsodicWord {
    pub words: Vec<LexiconWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProsodicPhrase {
    pub words: Vec<ProsodicWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntonationalPhrase {
    pub phrases: Vec<ProsodicPhrase>,
}

/// Five-level prosody tree. Leaves are token ids and sit at uniform depth by construction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProsodyTree {
    pub phrases: Vec<IntonationalPhrase>,
}

impl LexiconWord {
    pub fn new(chars: impl Into<Vec<u32>>) -> Self {
        Self { chars: chars.into() }
    }
}

impl ProsodicWord {
    pub fn new(words: Vec<LexiconWord>) -> Self {
        Self { words }
    }
}

impl ProsodicPhrase {
    pub fn new(words: Vec<ProsodicWord>) -> Self {
        Self { words }
    }
}

impl IntonationalPhrase {
    pub fn new(phrases: Vec<ProsodicPhrase>) -> Self {
        Self { phrases }
    }
}

impl ProsodyTree {
    pub fn new(phrases: Vec<IntonationalPhrase>) -> Self {
        Self { phrases }
    }

    /// Rejects any empty node.
    pub fn validate(&self) -> Result<()> {
        fn empty(what: &str, path: &[usize]) -> CoreError {
            CoreError::MalformedTree(format!("empty {what} at path {path:?}"))
        }
        if self.phrases.is_empty() {
            return Err(empty("root", &[]));
        }
        for (a, iph) in self.phrases.iter().enumerate() {
            if iph.phrases.is_empty() {
                return Err(empty("IPH", &[a]));
            }
            for (b, pph) in iph.phrases.iter().enumerate() {
                if pph.words.is_empty() {
                    return Err(empty("PPH", &[a, b]));
                }
                for (c, pw) in pph.words.iter().enumerate() {
                    if pw.words.is_empty() {
                        return Err(empty("PW", &[a, b, c]));
                    }
                    for (d, lw) in pw.words.iter().enumerate() {
                        if lw.chars.is_empty() {
                            return Err(empty("LW", &[a, b, c, d]));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Leaves in left-to-right order.
    pub fn tokens(&self) -> Vec<u32> {
        self.phrases
            .iter()
            .flat_map(|iph| &iph.phrases)
            .flat_map(|pph| &pph.words)
            .flat_map(|pw| &pw.words)
            .flat_map(|lw| lw.chars.iter().copied())
            .collect()
    }

    /// Flattens to one label per leaf: the level of the highest constituent that
    /// closes immediately after that leaf.
    pub fn to_labels(&self) -> Result<Vec<BoundaryLabel>> {
        self.validate()?;
        let mut labels = Vec::new();
        for iph in &self.phrases {
            for (b, pph) in iph.phrases.iter().enumerate() {
                let last_pph = b + 1 == iph.phrases.len();
                for (c, pw) in pph.words.iter().enumerate() {
                    let last_pw = c + 1 == pph.words.len();
                    for (d, lw) in pw.words.iter().enumerate() {
                        let last_lw = d + 1 == pw.words.len();
                        for e in 0..lw.chars.len() {
                            let label = if e + 1 < lw.chars.len() {
                                BoundaryLabel::Cc
                            } else if !last_lw {
                                BoundaryLabel::Lw
                            } else if !last_pw {
                                BoundaryLabel::Pw
                            } else if !last_pph {
                                BoundaryLabel::Pph
                            } else {
                                BoundaryLabel::Iph
                            };
                            labels.push(label);
                        }
                    }
                }
            }
        }
        Ok(labels)
    }

    /// Rebuilds the unique tree whose flattening is `labels`.
    pub fn from_labels(tokens: &[u32], labels: &[BoundaryLabel]) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(CoreError::LengthMismatch(format!(
                "{} tokens vs {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        check_terminal(labels)?;

        let mut tree = ProsodyTree::default();
        let mut iph = IntonationalPhrase::default();
        let mut pph = ProsodicPhrase::default();
        let mut pw = ProsodicWord::default();
        let mut lw = LexiconWord::default();
        for (&token, &label) in tokens.iter().zip(labels) {
            lw.chars.push(token);
            if label >= BoundaryLabel::Lw {
                pw.words.push(std::mem::take(&mut lw));
            }
            if label >= BoundaryLabel::Pw {
                pph.words.push(std::mem::take(&mut pw));
            }
            if label >= BoundaryLabel::Pph {
                iph.phrases.push(std::mem::take(&mut pph));
            }
            if label >= BoundaryLabel::Iph {
                tree.phrases.push(std::mem::take(&mut iph));
            }
        }
        Ok(tree)
    }
}

/// Flattens a tree into its per-token label sequence.
pub fn tree_to_labels(tree: &ProsodyTree) -> Result<Vec<BoundaryLabel>> {
    tree.to_labels()
}

/// Inverse of [`tree_to_labels`].
pub fn labels_to_tree(tokens: &[u32], labels: &[BoundaryLabel]) -> Result<ProsodyTree> {
    ProsodyTree::from_labels(tokens, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::BoundaryLabel::*;
    use proptest::prelude::*;

    fn example_tree() -> ProsodyTree {
        ProsodyTree::new(vec![IntonationalPhrase::new(vec![ProsodicPhrase::new(vec![
            ProsodicWord::new(vec![LexiconWord::new([1, 2]), LexiconWord::new([3])]),
            ProsodicWord::new(vec![LexiconWord::new([4])]),
        ])])])
    }

    #[test]
    fn deepest_closing_constituent() {
        assert_eq!(example_tree().to_labels().unwrap(), vec![Cc, Lw, Pw, Iph]);
    }

    #[test]
    fn single_leaf() {
        let tree = ProsodyTree::new(vec![IntonationalPhrase::new(vec![ProsodicPhrase::new(vec![
            ProsodicWord::new(vec![LexiconWord::new([1])]),
        ])])]);
        assert_eq!(tree.to_labels().unwrap(), vec![Iph]);
        assert_eq!(ProsodyTree::from_labels(&[1], &[Iph]).unwrap(), tree);
    }

    #[test]
    fn two_phrases_in_one_iph() {
        let leaf = |t| ProsodicPhrase::new(vec![ProsodicWord::new(vec![LexiconWord::new([t])])]);
        let tree = ProsodyTree::new(vec![IntonationalPhrase::new(vec![leaf(1), leaf(2)])]);
        assert_eq!(tree.to_labels().unwrap(), vec![Pph, Iph]);
    }

    #[test]
    fn inverse_of_example() {
        let rebuilt = ProsodyTree::from_labels(&[1, 2, 3, 4], &[Cc, Lw, Pw, Iph]).unwrap();
        assert_eq!(rebuilt, example_tree());
        assert_eq!(rebuilt.tokens(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn missing_terminal_iph_is_rejected() {
        let err = ProsodyTree::from_labels(&[1, 2], &[Cc, Lw]).unwrap_err();
        assert!(matches!(err, CoreError::InvalidLabelSequence(_)));
    }

    #[test]
    fn empty_node_is_rejected() {
        let mut tree = example_tree();
        tree.phrases[0].phrases[0].words[1].words.clear();
        assert!(matches!(tree.to_labels(), Err(CoreError::MalformedTree(_))));
        assert!(ProsodyTree::default().to_labels().is_err());
    }

    fn label_seq() -> impl Strategy<Value = Vec<BoundaryLabel>> {
        prop::collection::vec(0usize..5, 0..40).prop_map(|mut raw| {
            raw.push(4);
            raw.into_iter().map(|i| BoundaryLabel::from_index(i).unwrap()).collect()
        })
    }

    proptest! {
        #[test]
        fn labels_round_trip(labels in label_seq()) {
            let tokens: Vec<u32> = (0..labels.len() as u32).collect();
            let tree = ProsodyTree::from_labels(&tokens, &labels).unwrap();
            prop_assert!(tree.validate().is_ok());
            prop_assert_eq!(tree.tokens(), tokens);
            prop_assert_eq!(tree.to_labels().unwrap(), labels);
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::annotation::align;
use crate::error::{CoreError, Result};
use crate::label::BoundaryLabel;

/// How a five-level label is reduced to a yes/no judgement for one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarization {
    /// `label == level`
    #[default]
    Exact,
    /// `label >= level`
    AtLeast,
}

pub fn binarize(labels: &[BoundaryLabel], level: BoundaryLabel, mode: Binarization) -> Vec<bool> {
    labels
        .iter()
        .map(|&l| match mode {
            Binarization::Exact => l == level,
            Binarization::AtLeast => l >= level,
        })
        .collect()
}

/// Cohen's kappa of two binary raters with marginal-product chance agreement.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::LengthMismatch(format!("{} vs {} items", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(CoreError::UndefinedKappa("no items".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let observed = agree / n;
    let chance = pa * pb + (1.0 - pa) * (1.0 - pb);
    if chance >= 1.0 {
        return Err(CoreError::UndefinedKappa(
            "chance agreement is 1 (both raters use a single category)".into(),
        ));
    }
    Ok((observed - chance) / (1.0 - chance))
}

/// Fleiss' kappa from an item × category count table with a constant number of raters per item.
pub fn fleiss_kappa(counts: &[Vec<u32>]) -> Result<f64> {
    let items = counts.len();
    if items == 0 {
        return Err(CoreError::UndefinedKappa("no items".into()));
    }
    let categories = counts[0].len();
    let raters: u32 = counts[0].iter().sum();
    if raters < 2 {
        return Err(CoreError::UndefinedKappa("need at least two raters".into()));
    }
    if counts.iter().any(|row| row.len() != categories || row.iter().sum::<u32>() != raters) {
        return Err(CoreError::LengthMismatch("every item needs the same raters and categories".into()));
    }
    let n = raters as f64;
    let mut category_totals = vec![0.0f64; categories];
    let mut mean_agreement = 0.0;
    for row in counts {
        let squares: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
        mean_agreement += (squares - n) / (n * (n - 1.0));
        for (total, &c) in category_totals.iter_mut().zip(row) {
            *total += c as f64;
        }
    }
    mean_agreement /= items as f64;
    let chance: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t / (items as f64 * n);
            p * p
        })
        .sum();
    if chance >= 1.0 {
        return Err(CoreError::UndefinedKappa("all ratings fall in one category".into()));
    }
    Ok((mean_agreement - chance) / (1.0 - chance))
}

/// Fleiss' kappa over binary judgements, `ratings[rater][item]`.
pub fn fleiss_kappa_binary(ratings: &[Vec<bool>]) -> Result<f64> {
    if ratings.len() < 2 {
        return Err(CoreError::UndefinedKappa("need at least two raters".into()));
    }
    let items = ratings[0].len();
    if ratings.iter().any(|r| r.len() != items) {
        return Err(CoreError::LengthMismatch("raters cover different item counts".into()));
    }
    let table: Vec<Vec<u32>> = (0..items)
        .map(|i| {
            let yes = ratings.iter().filter(|r| r[i]).count() as u32;
            vec![yes, ratings.len() as u32 - yes]
        })
        .collect();
    fleiss_kappa(&table)
}

/// Label sequences from several annotators over the same utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    annotators: Vec<(String, Vec<(String, Vec<BoundaryLabel>)>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEntry {
    pub level: BoundaryLabel,
    pub annotator_a: String,
    pub annotator_b: String,
    pub kappa: Option<f64>,
}

impl AnnotationSet {
    pub fn new(annotators: Vec<(String, Vec<(String, Vec<BoundaryLabel>)>)>) -> Result<Self> {
        if let Some((_, first)) = annotators.first() {
            for (name, other) in &annotators[1..] {
                align(first, other).map_err(|e| CoreError::Misaligned(format!("annotator `{name}`: {e}")))?;
            }
        }
        Ok(Self { annotators })
    }

    pub fn names(&self) -> Vec<&str> {
        self.annotators.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// One binary judgement per token position per annotator.
    fn ratings(&self, level: BoundaryLabel, mode: Binarization) -> Vec<Vec<bool>> {
        self.annotators
            .iter()
            .map(|(_, utts)| {
                utts.iter()
                    .flat_map(|(_, labels)| binarize(labels, level, mode))
                    .collect()
            })
            .collect()
    }

    pub fn fleiss(&self, level: BoundaryLabel, mode: Binarization) -> Result<f64> {
        fleiss_kappa_binary(&self.ratings(level, mode))
    }

    /// Pairwise Cohen kappa for every annotator pair (a < b); undefined pairs hold `None`.
    pub fn cohen_pairs(&self, level: BoundaryLabel, mode: Binarization) -> Vec<KappaEntry> {
        let ratings = self.ratings(level, mode);
        cohen_matrix(&ratings)
            .into_iter()
            .map(|(a, b, kappa)| KappaEntry {
                level,
                annotator_a: self.annotators[a].0.clone(),
                annotator_b: self.annotators[b].0.clone(),
                kappa,
            })
            .collect()
    }
}

/// Cohen kappa for every rater pair `(a, b)` with `a < b`.
pub fn cohen_matrix(ratings: &[Vec<bool>]) -> Vec<(usize, usize, Option<f64>)> {
    let mut out = Vec::new();
    for a in 0..ratings.len() {
        for b in a + 1..ratings.len() {
            out.push((a, b, cohen_kappa(&ratings[a], &ratings[b]).ok()));
        }
    }
    out
}

//! The boundary-label head: row-wise softmax probabilities, summed cross
//! entropy and argmax decoding.

use prosody_core::{BoundaryLabel, NUM_LABELS};

use crate::error::{ModelError, Result};

/// Row-wise softmax of `rows × classes` logits.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// `softmax(h·W + b)` per row, for `h` of shape `n × d`, `W` of shape `d × |L|`.
pub fn predict(h: &[f64], d: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = h.len() / d;
    let mut logits = vec![0.0; n * NUM_LABELS];
    for r in 0..n {
        for k in 0..NUM_LABELS {
            logits[r * NUM_LABELS + k] = b[k] + (0..d).map(|j| h[r * d + j] * w[j * NUM_LABELS + k]).sum::<f64>();
        }
    }
    softmax_rows(&logits, NUM_LABELS)
}

/// Summed `-ln p[k, label_k]` over positions where `mask` is true (all when `None`).
pub fn ce_loss(probs: &[f64], labels: &[usize], mask: Option<&[bool]>) -> Result<f64> {
    let n = probs.len() / NUM_LABELS;
    if labels.len() != n {
        return Err(ModelError::Config(format!("{} labels for {n} prediction rows", labels.len())));
    }
    let mut total = 0.0;
    for (k, &label) in labels.iter().enumerate() {
        if label >= NUM_LABELS {
            return Err(ModelError::LabelOutOfRange {
                label,
                classes: NUM_LABELS,
            });
        }
        if mask.map_or(true, |m| m[k]) {
            total -= probs[k * NUM_LABELS + label].ln();
        }
    }
    Ok(total)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn decode_labels(probs: &[f64]) -> Vec<BoundaryLabel> {
    probs
        .chunks(NUM_LABELS)
        .map(|row| BoundaryLabel::ALL[argmax_lowest(row)])
        .collect()
}

//! Connectionist temporal classification in log space.
//!
//! Class 0 is the blank; target symbols lie in `1..classes`.

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    /// `-ln P(target | logits)`.
    pub loss: f64,
    /// Gradient of `loss` with respect to the `frames × classes` logits.
    pub grad: Vec<f64>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frames needed to emit `target`: one per symbol plus a blank between repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|x| *x -= lse);
    }
    out
}

/// Loss and logit gradient for one sequence of `frames × classes` logits.
pub fn ctc_loss(logits: &[f64], frames: usize, classes: usize, target: &[usize]) -> Result<CtcOutput> {
    if frames == 0 || logits.len() != frames * classes {
        return Err(ModelError::Config(format!(
            "{} logits do not form {frames} frames of {classes} classes",
            logits.len()
        )));
    }
    if let Some(&symbol) = target.iter().find(|&&s| s == 0 || s >= classes) {
        return Err(ModelError::InvalidTarget { symbol, classes });
    }
    let required = min_frames(target);
    if required > frames {
        return Err(ModelError::InfeasibleTarget {
            target_len: target.len(),
            required,
            frames,
        });
    }

    let lp = log_softmax(logits, classes);
    let ext: Vec<usize> = std::iter::once(0)
        .chain(target.iter().flat_map(|&s| [s, 0]))
        .collect();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    // May state s be reached by skipping the blank at s-1?
    let can_skip = |s: usize| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp[0];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = acc + lp[t * classes + ext[s]];
        }
    }
    let last = &alpha[(frames - 1) * s_len..];
    let log_p = if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };

    // beta[t][s]: log-probability of the remaining frames after t, given state s at t.
    let mut beta = vec![ninf; frames * s_len];
    beta[(frames - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(frames - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp[(t + 1) * classes + ext[s2]];
            let mut acc = next(s);
            if s + 1 < s_len {
                acc = log_add(acc, next(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next(s + 2));
            }
            beta[t * s_len + s] = acc;
        }
    }

    let mut grad = vec![0.0; frames * classes];
    let mut occupancy = vec![ninf; classes];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let k = ext[s];
            occupancy[k] = log_add(occupancy[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for k in 0..classes {
            grad[t * classes + k] = lp[t * classes + k].exp() - (occupancy[k] - log_p).exp();
        }
    }
    Ok(CtcOutput { loss: -log_p, grad })
}

/// Best path per frame with repeats merged and blanks removed.
pub fn greedy_decode(logits: &[f64], classes: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = 0;
    for row in logits.chunks(classes) {
        let best = crate::output::argmax_lowest(row);
        if best != 0 && best != prev {
            out.push(best);
        }
        prev = best;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(p: &[f64]) -> Vec<f64> {
        p.iter().map(|x| x.ln()).collect()
    }

    #[test]
    fn single_frame_single_symbol() {
        let p = [0.2, 0.5, 0.3];
        let out = ctc_loss(&ln(&p), 1, 3, &[1]).unwrap();
        assert!((out.loss + 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_paths() {
        let p = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3];
        let out = ctc_loss(&ln(&p), 2, 3, &[1]).unwrap();
        let (a1, b1, a2, b2) = (p[1], p[0], p[4], p[3]);
        let want = -(a1 * a2 + a1 * b2 + b1 * a2).ln();
        assert!((out.loss - want).abs() < 1e-9);
    }

    #[test]
    fn repeat_needs_a_separating_blank() {
        let p = [0.2, 0.5, 0.3];
        assert!(matches!(
            ctc_loss(&ln(&p), 1, 3, &[1, 1]),
            Err(ModelError::InfeasibleTarget { required: 3, frames: 1, .. })
        ));
        assert_eq!(min_frames(&[1, 1, 2, 2, 2]), 8);
    }

    #[test]
    fn blank_is_not_a_target() {
        assert!(matches!(
            ctc_loss(&[0.0; 3], 1, 3, &[0]),
            Err(ModelError::InvalidTarget { symbol: 0, .. })
        ));
    }

    #[test]
    fn empty_target_is_all_blanks() {
        let p = [0.5, 0.5, 0.25, 0.75];
        let out = ctc_loss(&ln(&p), 2, 2, &[]).unwrap();
        assert!((out.loss + (0.5f64 * 0.25).ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_collapses_repeats_and_blanks() {
        #[rustfmt::skip]
        let logits = [
            0.0, 5.0, 0.0,
            0.0, 5.0, 0.0,
            5.0, 0.0, 0.0,
            0.0, 5.0, 0.0,
            0.0, 0.0, 5.0,
        ];
        assert_eq!(greedy_decode(&logits, 3), vec![1, 1, 2]);
    }
}

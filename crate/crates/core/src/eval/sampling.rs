use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotation::align;
use crate::error::Result;
use crate::label::BoundaryLabel;

/// Uniformly samples up to `n` utterance ids whose hypothesis differs from the
/// reference somewhere, without replacement. Ids come back in file order.
pub fn sample_disagreements(
    reference: &[(String, Vec<BoundaryLabel>)],
    hypothesis: &[(String, Vec<BoundaryLabel>)],
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    align(reference, hypothesis)?;
    let disagreeing: Vec<&str> = reference
        .iter()
        .zip(hypothesis)
        .filter(|((_, r), (_, h))| r != h)
        .map(|((id, _), _)| id.as_str())
        .collect();
    let take = n.min(disagreeing.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, disagreeing.len(), take).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| disagreeing[i].to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::BoundaryLabel::*;

    fn files() -> (Vec<(String, Vec<BoundaryLabel>)>, Vec<(String, Vec<BoundaryLabel>)>) {
        let reference: Vec<_> = (0..20).map(|i| (format!("u{i}"), vec![Lw, Iph])).collect();
        let hypothesis = reference
            .iter()
            .enumerate()
            .map(|(i, (id, l))| (id.clone(), if i % 3 == 0 { vec![Pw, Iph] } else { l.clone() }))
            .collect();
        (reference, hypothesis)
    }

    #[test]
    fn identical_files_yield_nothing() {
        let (r, _) = files();
        assert!(sample_disagreements(&r, &r, 300, 1).unwrap().is_empty());
    }

    #[test]
    fn oversized_request_returns_all() {
        let (r, h) = files();
        let ids = sample_disagreements(&r, &h, 300, 1).unwrap();
        let expected: Vec<String> = (0..20).filter(|i| i % 3 == 0).map(|i| format!("u{i}")).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn seeded_and_sized() {
        let (r, h) = files();
        let a = sample_disagreements(&r, &h, 3, 42).unwrap();
        assert_eq!(a, sample_disagreements(&r, &h, 3, 42).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|id| id[1..].parse::<usize>().unwrap() % 3 == 0));
    }

    #[test]
    fn misaligned_files() {
        let (r, h) = files();
        assert!(sample_disagreements(&r, &h[1..], 3, 0).is_err());
    }
}

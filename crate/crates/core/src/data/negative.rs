use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{CoreError, Result};

/// Uniformly sample items the user has not interacted with.
///
/// Draws are without replacement within one call (and capped at the number of
/// available items); separate calls are independent.
pub fn sample_negatives(
    positives: &BTreeSet<usize>,
    item_count: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(CoreError::Data("negative sample count must be >= 1".into()));
    }
    let available = item_count - positives.len();
    if available == 0 {
        return Err(CoreError::Data(
            "user has interacted with every item; no negatives exist".into(),
        ));
    }
    let want = count.min(available);

    // Rejection sampling is cheap while draws are sparse in the complement;
    // fall back to an explicit complement shuffle once they are not.
    if want * 3 <= available {
        let mut drawn = BTreeSet::new();
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let candidate = rng.random_range(0..item_count);
            if positives.contains(&candidate) || !drawn.insert(candidate) {
                continue;
            }
            out.push(candidate);
        }
        Ok(out)
    } else {
        let mut complement: Vec<usize> =
            (0..item_count).filter(|i| !positives.contains(i)).collect();
        for i in 0..want {
            let j = rng.random_range(i..complement.len());
            complement.swap(i, j);
        }
        complement.truncate(want);
        Ok(complement)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefmatch_tensor::StreamRng;

    #[test]
    fn only_possibility_is_returned() {
        let positives: BTreeSet<usize> = [0].into();
        let mut rng = StreamRng::new(1).stream("negatives");
        let mut got = sample_negatives(&positives, 3, 2, &mut rng).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn exhausted_items_error() {
        let positives: BTreeSet<usize> = [0, 1, 2].into();
        let mut rng = StreamRng::new(1).stream("negatives");
        assert!(sample_negatives(&positives, 3, 1, &mut rng).is_err());
    }

    #[test]
    fn never_returns_a_positive() {
        let streams = StreamRng::new(7);
        for trial in 0..200u64 {
            let mut rng = streams.stream_at("negatives", trial);
            let positives: BTreeSet<usize> =
                (0..30).filter(|i| (i * 7 + trial as usize) % 3 == 0).collect();
            let got = sample_negatives(&positives, 30, 5, &mut rng).unwrap();
            assert!(got.iter().all(|i| !positives.contains(i)));
            let unique: BTreeSet<_> = got.iter().collect();
            assert_eq!(unique.len(), got.len(), "duplicates within one call");
        }
    }

    #[test]
    fn draws_are_uniform_by_chi_square() {
        // 10^5 single draws over 40 candidate items; chi-square statistic
        // against the uniform should land within 3 sigma of its mean.
        let streams = StreamRng::new(13);
        let positives: BTreeSet<usize> = (40..50).collect();
        let trials = 100_000usize;
        let mut counts = vec![0usize; 40];
        for trial in 0..trials {
            let mut rng = streams.stream_at("negatives", trial as u64);
            let got = sample_negatives(&positives, 50, 1, &mut rng).unwrap();
            counts[got[0]] += 1;
        }
        let expected = trials as f64 / 40.0;
        let statistic: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dof = 39.0f64;
        let sigma = (2.0 * dof).sqrt();
        assert!(
            (statistic - dof).abs() <= 3.0 * sigma,
            "chi-square statistic {statistic} vs dof {dof}"
        );
    }
}

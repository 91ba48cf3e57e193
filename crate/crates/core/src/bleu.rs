//! BLEU with clipped n-gram counts, brevity penalty, and declared add-one
//! smoothing on higher-order precisions.

use std::collections::HashMap;

use crate::tensor::Real;

/// Sentence-level BLEU in `[0, 100]` with uniform weights over n-gram orders
/// `1..=max_n`. Precisions for `n >= 2` are smoothed by adding 1 to both
/// numerator and denominator so short sentences score reproducibly. An empty
/// candidate scores 0 by definition.
pub fn bleu(candidate: &[u32], references: &[&[u32]], max_n: usize) -> Real {
    assert!((1..=4).contains(&max_n), "max_n must lie in 1..=4");
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let c = candidate.len();
    let r = closest_ref_len(c, references);

    let mut log_precision_sum = 0.0;
    for n in 1..=max_n {
        let (matched, total) = clipped_matches(candidate, references, n);
        let (num, den) = if n >= 2 {
            (matched as Real + 1.0, total as Real + 1.0)
        } else {
            (matched as Real, total as Real)
        };
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_precision_sum += (num / den).ln();
    }
    let bp = brevity_penalty(c, r);
    100.0 * bp * (log_precision_sum / max_n as Real).exp()
}

/// Corpus-level BLEU: n-gram statistics and lengths pooled over all pairs
/// before computing precisions (no smoothing).
pub fn corpus_bleu(pairs: &[(&[u32], &[u32])], max_n: usize) -> Real {
    assert!((1..=4).contains(&max_n), "max_n must lie in 1..=4");
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut c_sum = 0usize;
    let mut r_sum = 0usize;
    for (cand, reference) in pairs {
        if cand.is_empty() {
            r_sum += reference.len();
            continue;
        }
        c_sum += cand.len();
        r_sum += reference.len();
        for n in 1..=max_n {
            let (m, t) = clipped_matches(cand, &[*reference], n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if c_sum == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        if matched[n - 1] == 0 || total[n - 1] == 0 {
            return 0.0;
        }
        log_sum += (matched[n - 1] as Real / total[n - 1] as Real).ln();
    }
    100.0 * brevity_penalty(c_sum, r_sum) * (log_sum / max_n as Real).exp()
}

fn brevity_penalty(c: usize, r: usize) -> Real {
    if c >= r {
        1.0
    } else {
        (1.0 - r as Real / c as Real).exp()
    }
}

/// Reference length closest to the candidate length (shorter wins ties).
fn closest_ref_len(c: usize, references: &[&[u32]]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap_or(0)
}

/// Candidate n-gram matches clipped by the maximum count over references,
/// plus the total candidate n-gram count.
fn clipped_matches(candidate: &[u32], references: &[&[u32]], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let mut cand_counts: HashMap<&[u32], usize> = HashMap::new();
    for gram in candidate.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let mut max_ref: HashMap<&[u32], usize> = HashMap::new();
    for reference in references {
        if reference.len() < n {
            continue;
        }
        let mut counts: HashMap<&[u32], usize> = HashMap::new();
        for gram in reference.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
        for (gram, count) in counts {
            let slot = max_ref.entry(gram).or_insert(0);
            *slot = (*slot).max(count);
        }
    }
    let matched: usize = cand_counts
        .iter()
        .map(|(gram, &count)| count.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len() - n + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent reference calculation, written over string-joined grams
    /// with explicit loops, mirroring the declared smoothing.
    fn reference_bleu(candidate: &[u32], reference: &[u32], max_n: usize) -> Real {
        if candidate.is_empty() {
            return 0.0;
        }
        let gram_key = |toks: &[u32]| -> String {
            toks.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("_")
        };
        let mut logs = 0.0;
        for n in 1..=max_n {
            let mut cand: std::collections::BTreeMap<String, usize> = Default::default();
            if candidate.len() >= n {
                for i in 0..=candidate.len() - n {
                    *cand.entry(gram_key(&candidate[i..i + n])).or_default() += 1;
                }
            }
            let mut refs: std::collections::BTreeMap<String, usize> = Default::default();
            if reference.len() >= n {
                for i in 0..=reference.len() - n {
                    *refs.entry(gram_key(&reference[i..i + n])).or_default() += 1;
                }
            }
            let mut hit = 0usize;
            for (g, c) in &cand {
                hit += (*c).min(refs.get(g).copied().unwrap_or(0));
            }
            let tot = if candidate.len() >= n { candidate.len() - n + 1 } else { 0 };
            let (num, den) = if n >= 2 {
                (hit as Real + 1.0, tot as Real + 1.0)
            } else {
                (hit as Real, tot as Real)
            };
            if num == 0.0 || den == 0.0 {
                return 0.0;
            }
            logs += (num / den).ln() / max_n as Real;
        }
        let bp = if candidate.len() >= reference.len() {
            1.0
        } else {
            (1.0 - reference.len() as Real / candidate.len() as Real).exp()
        };
        100.0 * bp * logs.exp()
    }

    #[test]
    fn identity_scores_100() {
        let s = [4u32, 5, 6, 7, 8];
        assert_eq!(bleu(&s, &[&s], 4), 100.0);
        assert_eq!(bleu(&s, &[&s], 1), 100.0);
    }

    #[test]
    fn disjoint_unigrams_score_zero() {
        let a = [4u32, 5, 6];
        let b = [7u32, 8, 9];
        assert_eq!(bleu(&a, &[&b], 1), 0.0);
        assert_eq!(bleu(&[], &[&b[..]], 4), 0.0);
    }

    #[test]
    fn repeated_token_case_matches_reference_oracle() {
        // candidate "the the the" vs reference "the cat": clipped unigram
        // precision 1/3, candidate longer than reference so BP = 1.
        let the = 4u32;
        let cat = 5u32;
        let cand = [the, the, the];
        let reference = [the, cat];
        let got = bleu(&cand, &[&reference[..]], 1);
        let oracle = reference_bleu(&cand, &reference, 1);
        assert!((got - oracle).abs() < 1e-9);
        assert!((got - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn matches_independent_reference_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..50 {
            let clen = rng.gen_range(1..=12);
            let rlen = rng.gen_range(1..=12);
            let vocab = rng.gen_range(3..=9);
            let cand: Vec<u32> = (0..clen).map(|_| rng.gen_range(4..4 + vocab)).collect();
            let reference: Vec<u32> = (0..rlen).map(|_| rng.gen_range(4..4 + vocab)).collect();
            for max_n in 1..=4 {
                let got = bleu(&cand, &[&reference[..]], max_n);
                let want = reference_bleu(&cand, &reference, max_n);
                assert!(
                    (got - want).abs() < 1e-6,
                    "case {case} max_n {max_n}: {got} vs {want} (cand {cand:?}, ref {reference:?})"
                );
            }
        }
    }

    #[test]
    fn corpus_variant_pools_statistics() {
        let a = [4u32, 5, 6];
        let b = [4u32, 5, 7];
        let pairs: Vec<(&[u32], &[u32])> = vec![(&a, &a), (&b, &a)];
        let pooled = corpus_bleu(&pairs, 1);
        // 3/3 and 2/3 matched pool to 5/6.
        assert!((pooled - 100.0 * 5.0 / 6.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn bleu_stays_in_range_and_identity_dominates(
            cand in proptest::collection::vec(4u32..12, 1..10),
            reference in proptest::collection::vec(4u32..12, 1..10),
            max_n in 1usize..=4,
        ) {
            let s = bleu(&cand, &[&reference[..]], max_n);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
            let ident = bleu(&reference, &[&reference[..]], max_n);
            prop_assert!((ident - 100.0).abs() < 1e-9);
            prop_assert!(s <= ident + 1e-9);
        }
    }
}

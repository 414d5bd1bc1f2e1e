use std::collections::HashMap;

use crate::error::{Error, Result};

/// Stand-in for a zero clipped n-gram count so the log stays finite.
pub const ZERO_COUNT_EPSILON: f64 = 1e-9;

/// Clipped and total n-gram counts for one order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NgramCounts {
    pub clipped: usize,
    pub total: usize,
}

impl NgramCounts {
    pub fn precision(&self) -> Option<f64> {
        (self.total > 0).then(|| self.clipped as f64 / self.total as f64)
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Modified (clipped) n-gram counts of `candidate` against `reference`.
pub fn modified_counts(candidate: &[String], reference: &[String], n: usize) -> NgramCounts {
    let cand = ngrams(candidate, n);
    let refs = ngrams(reference, n);
    let clipped = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    NgramCounts {
        clipped,
        total: candidate.len().saturating_sub(n - 1),
    }
}

/// Sufficient statistics for corpus BLEU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BleuStats {
    pub counts: Vec<NgramCounts>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        BleuStats {
            counts: vec![NgramCounts::default(); max_n],
            candidate_len: 0,
            reference_len: 0,
        }
    }

    pub fn of_pair(candidate: &[String], reference: &[String], max_n: usize) -> Self {
        BleuStats {
            counts: (1..=max_n).map(|n| modified_counts(candidate, reference, n)).collect(),
            candidate_len: candidate.len(),
            reference_len: reference.len(),
        }
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.clipped += b.clipped;
            a.total += b.total;
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// Geometric mean of the precisions times the brevity penalty, in [0, 100].
    /// Orders with no candidate n-grams anywhere in the corpus are left out
    /// of the mean; a zero clipped count is replaced by [`ZERO_COUNT_EPSILON`].
    pub fn score(&self) -> f64 {
        let used: Vec<&NgramCounts> = self.counts.iter().filter(|c| c.total > 0).collect();
        if used.is_empty() {
            return 0.0;
        }
        let log_p: f64 = used
            .iter()
            .map(|c| {
                let num = if c.clipped == 0 { ZERO_COUNT_EPSILON } else { c.clipped as f64 };
                (num / c.total as f64).ln()
            })
            .sum::<f64>()
            / used.len() as f64;
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * log_p.exp()
    }
}

/// Corpus BLEU with one reference per candidate.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::contract("BLEU over an empty corpus"));
    }
    if max_n == 0 {
        return Err(Error::contract("max_n must be >= 1"));
    }
    let mut total = BleuStats::new(max_n);
    for (c, r) in candidates.iter().zip(references) {
        total.add(&BleuStats::of_pair(c, r, max_n));
    }
    Ok(total.score())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(pairs: &[(&str, &str)]) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
        pairs.iter().map(|(c, r)| (t(c), t(r))).unzip()
    }

    #[test]
    fn perfect_match_is_100() {
        let (c, r) = corpus(&[("what is the capital of france ?", "what is the capital of france ?"), ("who ?", "who ?")]);
        assert_eq!(bleu(&c, &r, 4).unwrap(), 100.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let u = modified_counts(&t("the the the the"), &t("the cat sat down"), 1);
        assert_eq!(u, NgramCounts { clipped: 1, total: 4 });
        assert_eq!(u.precision(), Some(0.25));
    }

    // Frozen from an independent Python implementation of the same definition.
    #[test]
    fn fixture_suite() {
        let cases: [(&[(&str, &str)], f64); 6] = [
            (&[("the the the the", "the cat sat down")], 8.034284189446515e-06),
            (
                &[("what city is the eiffel tower in ?", "which city is the eiffel tower located in ?")],
                52.47357977607321,
            ),
            (&[("who wrote hamlet ?", "who is the author of hamlet ?")], 0.0008881915596542074),
            (
                &[
                    ("what country is paris in ?", "what country is paris located in ?"),
                    ("who directed the film ?", "who was the director of the film ?"),
                ],
                33.18692779157115,
            ),
            (
                &[
                    ("where was obama born ?", "where was barack obama born ?"),
                    ("what genre is this album ?", "what is the genre of this album ?"),
                    ("which forest is fires creek in ?", "which forest is fires creek in ?"),
                ],
                55.8954570712654,
            ),
            (&[("a b c d e", "a b c d")], 66.8740304976422),
        ];
        for (pairs, expected) in cases {
            let (c, r) = corpus(pairs);
            let got = bleu(&c, &r, 4).unwrap();
            assert!((got - expected).abs() <= 1e-9 * expected.max(1.0), "{pairs:?}: {got} vs {expected}");
        }
    }

    #[test]
    fn contract_errors() {
        assert!(bleu(&[], &[], 4).is_err());
        assert!(bleu(&[t("a")], &[], 4).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sentence() -> impl Strategy<Value = Vec<String>> {
            prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..8)
                .prop_map(|v| v.into_iter().map(String::from).collect())
        }

        proptest! {
            #[test]
            fn order_invariant_and_bounded(
                pairs in prop::collection::vec((sentence(), sentence()), 1..6),
                rot in 0usize..6,
            ) {
                let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
                let a = bleu(&c, &r, 4).unwrap();
                let mut shifted = pairs.clone();
                let k = rot % shifted.len();
                shifted.rotate_left(k);
                let (c2, r2): (Vec<_>, Vec<_>) = shifted.into_iter().unzip();
                prop_assert_eq!(a, bleu(&c2, &r2, 4).unwrap());
                prop_assert!((0.0..=100.0).contains(&a));
            }

            #[test]
            fn renaming_invariant(pairs in prop::collection::vec((sentence(), sentence()), 1..5)) {
                let rename = |s: &Vec<String>| -> Vec<String> {
                    s.iter().map(|w| format!("x{w}")).collect()
                };
                let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
                let c2: Vec<_> = c.iter().map(rename).collect();
                let r2: Vec<_> = r.iter().map(rename).collect();
                prop_assert_eq!(bleu(&c, &r, 4).unwrap(), bleu(&c2, &r2, 4).unwrap());
            }
        }
    }
}

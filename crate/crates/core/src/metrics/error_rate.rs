use crate::asr_model::TokenSequence;
use crate::error::{Error, Result};

/// Edit operations of a minimal alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`. Among
/// minimal alignments the backtrace prefers matches/substitutions, then
/// deletions, then insertions.
pub fn levenshtein<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            if reference[i - 1] != hyp[j - 1] {
                c.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// Token error rate `(S + D + I)/N` over content tokens (`<eos>` excluded).
pub fn error_rate(reference: &TokenSequence, hyp: &TokenSequence) -> Result<(f64, EditCounts)> {
    let r = reference.content();
    if r.is_empty() {
        return Err(Error::Domain("error rate needs a non-empty reference".into()));
    }
    let c = levenshtein(r, hyp.content());
    Ok((c.total() as f64 / r.len() as f64, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr_model::Vocabulary;
    use proptest::prelude::*;

    fn seq(v: &Vocabulary, s: &str) -> TokenSequence {
        v.encode(s)
    }

    #[test]
    fn hand_cases() {
        let v = Vocabulary::digits();
        let (r, c) = error_rate(&seq(&v, "one two three"), &seq(&v, "one two three")).unwrap();
        assert_eq!((r, c.total()), (0.0, 0));
        let (r, c) = error_rate(&seq(&v, "one two three"), &seq(&v, "one five three")).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c, EditCounts { substitutions: 1, deletions: 0, insertions: 0 });
        let (r, c) = error_rate(&seq(&v, "one two"), &seq(&v, "one two three four")).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(c, EditCounts { substitutions: 0, deletions: 0, insertions: 2 });
        let (_, c) = error_rate(&seq(&v, "one two three"), &seq(&v, "")).unwrap();
        assert_eq!(c.deletions, 3);
        assert!(error_rate(&seq(&v, ""), &seq(&v, "one")).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_bounded(a in prop::collection::vec(0u8..4, 0..8), b in prop::collection::vec(0u8..4, 0..8)) {
            let ab = levenshtein(&a, &b);
            let ba = levenshtein(&b, &a);
            prop_assert_eq!(ab.total(), ba.total());
            prop_assert!(ab.total() <= a.len().max(b.len()));
            prop_assert!(ab.total() >= a.len().abs_diff(b.len()));
            prop_assert_eq!(a.len() - ab.deletions + ab.insertions, b.len());
        }
    }
}

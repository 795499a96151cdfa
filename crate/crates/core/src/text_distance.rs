//! Optimal String Alignment distance (restricted Damerau-Levenshtein).
//!
//! Edits are counted over Unicode scalar values. The four admissible edits
//! are insertion, deletion, substitution and transposition of two adjacent
//! characters, with the restriction that no substring is edited more than
//! once. The restriction means OSA is *not* a metric: `("CA", "ABC")` costs 3
//! under OSA while the unrestricted distance is 2, and the triangle
//! inequality can fail.

use std::cmp::min;
use std::fmt;

/// Number of edits separating two strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EditDistance(pub usize);

impl EditDistance {
    pub fn value(self) -> usize {
        self.0
    }
}

impl fmt::Display for EditDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// OSA distance between `a` and `b`.
///
/// Runs the standard dynamic program keeping only the three most recent rows,
/// which is all the transposition term needs.
pub fn osa_distance(a: &str, b: &str) -> EditDistance {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    EditDistance(osa_chars(&a, &b))
}

pub(crate) fn osa_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }

    let width = b.len() + 1;
    let mut before_prev = vec![0usize; width];
    let mut prev: Vec<usize> = (0..width).collect();
    let mut cur = vec![0usize; width];

    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut best = min(min(prev[j] + 1, cur[j - 1] + 1), prev[j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                best = min(best, before_prev[j - 2] + 1);
            }
            cur[j] = best;
        }
        std::mem::swap(&mut before_prev, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized similarity `1 - d / max(|a|, |b|)`, in `[0, 1]`.
///
/// Two empty strings are identical and score 1.0.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_chars(&a, &b)
}

pub(crate) fn similarity_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - osa_chars(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_empty() {
        assert_eq!(osa_distance("abc", "abc").value(), 0);
        assert_eq!(osa_distance("abc", "").value(), 3);
        assert_eq!(osa_distance("", "abc").value(), 3);
        assert_eq!(osa_distance("", "").value(), 0);
    }

    #[test]
    fn restricted_transposition() {
        // Unrestricted Damerau-Levenshtein gives 2 here.
        assert_eq!(osa_distance("CA", "ABC").value(), 3);
        assert_eq!(osa_distance("ab", "ba").value(), 1);
        assert_eq!(osa_distance("abcd", "acbd").value(), 1);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity("abc", "abc"), 1.0);
        assert_eq!(similarity("abc", ""), 0.0);
        assert_eq!(similarity("", ""), 1.0);
        assert!((similarity("abcd", "abcx") - 0.75).abs() < 1e-15);
    }

    #[test]
    fn counts_scalar_values_not_bytes() {
        assert_eq!(osa_distance("café", "cafe").value(), 1);
        assert_eq!(osa_distance("日本", "本日").value(), 1);
    }

    proptest! {
        #[test]
        fn symmetric(a in "[a-d]{0,8}", b in "[a-d]{0,8}") {
            prop_assert_eq!(osa_distance(&a, &b), osa_distance(&b, &a));
        }

        #[test]
        fn bounded(a in "\\PC{0,10}", b in "\\PC{0,10}") {
            let la = a.chars().count();
            let lb = b.chars().count();
            let d = osa_distance(&a, &b).value();
            prop_assert!(la.abs_diff(lb) <= d);
            prop_assert!(d <= la.max(lb));
            let s = similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn zero_iff_equal(a in "[ab]{0,6}", b in "[ab]{0,6}") {
            prop_assert_eq!(osa_distance(&a, &b).value() == 0, a == b);
        }
    }
}

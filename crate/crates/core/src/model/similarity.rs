use std::collections::BTreeSet;

use crate::text::tokens;

/// Pairwise text similarity in `[0, 1]`, symmetric, with `score(x, x) == 1`.
pub trait Similarity: Send + Sync {
    fn score(&self, a: &str, b: &str) -> f64;
}

/// Jaccard index over lowercased alphanumeric tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJaccard;

impl Similarity for TokenJaccard {
    fn score(&self, a: &str, b: &str) -> f64 {
        let a: BTreeSet<String> = tokens(a).into_iter().collect();
        let b: BTreeSet<String> = tokens(b).into_iter().collect();
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        let inter = a.intersection(&b).count();
        let union = a.len() + b.len() - inter;
        inter as f64 / union as f64
    }
}

pub fn similarity(a: &str, b: &str) -> f64 {
    TokenJaccard.score(a, b)
}

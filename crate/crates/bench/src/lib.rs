//! Shared inputs for the criterion benches.

use surveyforge::servers::FixtureIndex;

/// Title plus body of every fixture document.
pub fn corpus_texts() -> Vec<String> {
    FixtureIndex::embedded().entries().iter().map(|e| format!("{} {}", e.title, e.body)).collect()
}

/// `n` texts built by cycling the fixture corpus with a numeric suffix so
/// that larger inputs are not exact duplicates.
pub fn scaled_texts(n: usize) -> Vec<String> {
    let base = corpus_texts();
    (0..n).map(|i| format!("{} variant{}", base[i % base.len()], i / base.len())).collect()
}

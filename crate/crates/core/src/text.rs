//! Small text helpers shared across modules: tokenization, hashing, truncation.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Lowercased alphanumeric tokens, in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Collapses runs of whitespace and lowercases; used for duplicate detection.
pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

/// Collapses whitespace without changing case.
pub fn squash_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes a JSON value with object keys sorted recursively.
pub fn canonical_json(value: &Value) -> String {
    fn sort(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sort(&map[k]));
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(value).to_string()
}

pub fn hash_json(value: &Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

/// Keeps at most `max_words` whitespace-separated words.
pub fn truncate_words(text: &str, max_words: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_words {
        words.join(" ")
    } else {
        let mut out = words[..max_words].join(" ");
        out.push_str(" ...");
        out
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "across", "after", "all", "also", "an", "and", "are", "as", "at", "be", "been", "between", "both",
    "but", "by", "can", "do", "does", "each", "for", "from", "has", "have", "how", "in", "into", "is", "it", "its",
    "more", "most", "new", "not", "of", "on", "one", "or", "our", "over", "such", "than", "that", "the", "their",
    "them", "these", "they", "this", "those", "through", "to", "two", "under", "using", "via", "was", "we", "were",
    "what", "when", "which", "while", "with", "without",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens minus stopwords and very short tokens.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| t.len() > 2 && !is_stopword(t)).collect()
}

/// Uppercases the first letter of each word.
pub fn title_case(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// First `n` sentences of `text`, split on terminal punctuation.
pub fn first_sentences(text: &str, n: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    for ch in text.chars() {
        out.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            count += 1;
            if count == n {
                break;
            }
        }
    }
    squash_whitespace(&out)
}

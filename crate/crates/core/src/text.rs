//! Shared tokenization helpers.

use std::sync::OnceLock;

use regex::Regex;

fn word_punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{Nd}\p{Mn}]+(?:['’-][\p{Alphabetic}\p{Nd}\p{Mn}]+)*|[^\s\p{Alphabetic}\p{Nd}\p{Mn}]").unwrap())
}

fn alnum_word() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{Nd}]+").unwrap())
}

/// Whitespace + punctuation split. Every punctuation character becomes its own
/// token; case is preserved.
pub fn word_tokens(text: &str) -> Vec<String> {
    word_punct()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Lowercased Unicode-alphanumeric terms, as used by the lexical index.
pub fn index_terms(text: &str) -> Vec<String> {
    alnum_word()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

pub fn is_punct(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric())
}

/// Joins word tokens back into readable text: no space before closing
/// punctuation.
pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        let attach = matches!(tok, "." | "," | ";" | ":" | "!" | "?" | ")" | "%");
        if !out.is_empty() && !attach && !out.ends_with('(') {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "and", "or", "as", "by", "with", "from",
    "is", "was", "were", "are", "be", "been", "his", "her", "its", "their", "he", "she", "it",
    "they", "that", "this", "which", "who", "so", "much", "before", "after", "between", "over",
    "within", "during", "around", "into", "than", "has", "had", "have",
];

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.contains(&term)
}

/// Lowercased content words: index terms minus stopwords and pure numbers.
pub fn content_words(text: &str) -> Vec<String> {
    index_terms(text)
        .into_iter()
        .filter(|t| !is_stopword(t) && !t.chars().all(|c| c.is_ascii_digit()))
        .collect()
}

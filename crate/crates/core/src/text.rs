//! Tokenization shared by speech-rate computation, the hash embedder and the
//! overlap NLI scorer.

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Case folding used by every exact-match comparison.
pub fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

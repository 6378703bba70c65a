//! Tokenization shared by the sparse index, BM25 scoring and the
//! feature-hashing embedder.

use std::collections::BTreeMap;

/// Lowercases, splits on any non-alphanumeric character and drops tokens
/// shorter than two characters. No stemming, no stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

/// Term frequencies of `tokenize(text)`.
pub fn term_frequencies(text: &str) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for token in tokenize(text) {
        *tf.entry(token).or_insert(0) += 1;
    }
    tf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(
            tokenize("User's dog Bobo is a Corgi!"),
            vec!["user", "dog", "bobo", "is", "corgi"]
        );
    }

    #[test]
    fn keeps_dates_and_unicode() {
        assert_eq!(tokenize("7 May 2023"), vec!["may", "2023"]);
        assert_eq!(tokenize("Ünïcode Straße"), vec!["ünïcode", "straße"]);
    }

    #[test]
    fn counts_terms() {
        let tf = term_frequencies("blue toy, blue ball");
        assert_eq!(tf["blue"], 2);
        assert_eq!(tf["toy"], 1);
        assert_eq!(tf.len(), 3);
    }
}

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

pub const DEFAULT_MAX_LEN: usize = 64;

fn token_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"\[(?:SEP|CLS|PAD|UNK)\]|\w+|[^\w\s]").expect("valid regex"))
}

/// Lowercased word-level tokens; bracketed special tokens are kept verbatim.
pub fn split_words(text: &str) -> Vec<String> {
    token_pattern()
        .find_iter(text)
        .map(|m| {
            let t = m.as_str();
            if t.starts_with('[') && t.ends_with(']') && t.len() > 2 {
                t.to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect()
}

/// Word-level vocabulary with reserved PAD/UNK/CLS/SEP entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    pub max_len: usize,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>, max_len: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index, max_len }
    }

    /// Builds the vocabulary from training texts. Tokens are ordered by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, max_len: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in split_words(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let specials = [PAD, UNK, CLS, SEP];
        let mut words: Vec<(String, usize)> =
            counts.into_iter().filter(|(t, _)| !specials.contains(&t.as_str())).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = specials
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens, max_len)
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Token ids without the classification token, truncated to `max_len`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text).iter().take(self.max_len).map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(
            split_words("The [SEP] Adjudication [SEP] was swift!"),
            vec!["the", "[SEP]", "adjudication", "[SEP]", "was", "swift", "!"]
        );
    }

    #[test]
    fn build_reserves_specials_and_maps_unknown() {
        let v = Vocab::build(["b a a", "c b a"], 4);
        assert_eq!(&v.tokens()[..4], &[PAD, UNK, CLS, SEP]);
        assert_eq!(v.tokens()[4], "a");
        assert_eq!(v.id("[SEP]"), SEP_ID);
        assert_eq!(v.encode("a zzz b c a a"), vec![4, UNK_ID, 5, 6]);
    }

    #[test]
    fn serde_roundtrip_restores_index() {
        let v = Vocab::build(["hello world"], 8);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str::<Vocab>(&json).unwrap().reindex();
        assert_eq!(back, v);
        assert_eq!(back.id("world"), v.id("world"));
    }
}

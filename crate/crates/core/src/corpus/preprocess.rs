use std::sync::OnceLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use super::CorpusError;

/// Marker inserted around target phrases for complex-word tasks.
pub const TARGET_MARKER: &str = "[SEP]";

/// Prompts are cut to this many whitespace-separated tokens.
pub const PROMPT_TOKEN_BUDGET: usize = 256;

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

/// Collapses runs of whitespace into single spaces and trims the ends.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// Replaces every `<...>` tag with a space, then normalizes whitespace.
/// Nested brackets such as `<<b>>` are peeled until no tag remains, which
/// keeps the function idempotent.
pub fn strip_html(text: &str) -> String {
    static TAG: OnceLock<Regex> = OnceLock::new();
    let tag = regex(&TAG, r"<[^<>]*>");
    let mut out = text.to_string();
    while tag.is_match(&out) {
        out = tag.replace_all(&out, " ").into_owned();
    }
    normalize_ws(&out)
}

/// Removes the leading `Key: value` header block (terminated by a blank line)
/// and every inline e-mail address, then normalizes whitespace.
pub fn clean_newsgroup(document: &str) -> String {
    static HEADER: OnceLock<Regex> = OnceLock::new();
    static EMAIL: OnceLock<Regex> = OnceLock::new();
    let header = regex(&HEADER, r"^[A-Za-z][A-Za-z0-9-]*:(\s|$)");
    let email = regex(&EMAIL, r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)+");

    let lines: Vec<&str> = document.lines().collect();
    let is_continuation = |l: &str| l.starts_with([' ', '\t']) && !l.trim().is_empty();
    let mut i = 0;
    while i < lines.len() && (header.is_match(lines[i]) || (i > 0 && is_continuation(lines[i]))) {
        i += 1;
    }
    let body_start = if i > 0 && i < lines.len() && lines[i].trim().is_empty() { i + 1 } else { 0 };
    let body = lines[body_start..].join("\n");
    normalize_ws(&email.replace_all(&body, " "))
}

fn char_to_byte(text: &str, char_index: usize) -> Option<usize> {
    if char_index == text.chars().count() {
        return Some(text.len());
    }
    text.char_indices().nth(char_index).map(|(b, _)| b)
}

/// Slices `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Result<&str, CorpusError> {
    let len = text.chars().count();
    if start >= end || end > len {
        return Err(CorpusError::InvalidSpan { start, end, len });
    }
    let (Some(b0), Some(b1)) = (char_to_byte(text, start), char_to_byte(text, end)) else {
        return Err(CorpusError::InvalidSpan { start, end, len });
    };
    Ok(&text[b0..b1])
}

/// Surrounds the character span `[start, end)` with space-delimited markers.
pub fn mark_target(sentence: &str, span: (usize, usize), marker: &str) -> Result<String, CorpusError> {
    let (start, end) = span;
    let target = char_slice(sentence, start, end)?;
    let b0 = char_to_byte(sentence, start).expect("validated");
    let b1 = char_to_byte(sentence, end).expect("validated");
    Ok(normalize_ws(&format!(
        "{} {marker} {target} {marker} {}",
        &sentence[..b0],
        &sentence[b1..]
    )))
}

/// Inverse of [`mark_target`] up to whitespace normalization.
pub fn unmark(text: &str, marker: &str) -> String {
    normalize_ws(&text.split_whitespace().filter(|t| *t != marker).collect::<Vec<_>>().join(" "))
}

/// Keeps at most `budget` whitespace tokens; reports whether anything was cut.
pub fn truncate_tokens(text: &str, budget: usize) -> (String, bool) {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= budget {
        (tokens.join(" "), false)
    } else {
        (tokens[..budget].join(" "), true)
    }
}

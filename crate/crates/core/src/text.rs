//! Text normalization shared by every stage: word tokenization and rule-based
//! sentence segmentation.
//!
//! Token counts used by the corpus length filter, BM25 postings and the stub
//! models all come from [`tokenize`], so the filter and the index can never
//! disagree about what a token is.

use std::collections::HashSet;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// Lowercased Unicode words (UAX #29); punctuation-only segments are dropped.
///
/// Numbered references such as `9.2.7` stay a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

/// Optional token post-processing for the lexical index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    #[serde(default)]
    pub stem: bool,
    #[serde(default)]
    pub drop_stopwords: bool,
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = tokenize(text);
        if self.drop_stopwords {
            let stop = stopwords();
            tokens.retain(|t| !stop.contains(t.as_str()));
        }
        if self.stem {
            let stemmer = Stemmer::create(Algorithm::English);
            for t in tokens.iter_mut() {
                *t = stemmer.stem(t).into_owned();
            }
        }
        tokens
    }
}

fn stopwords() -> &'static HashSet<&'static str> {
    static STOP: OnceLock<HashSet<&'static str>> = OnceLock::new();
    STOP.get_or_init(|| {
        [
            "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "for", "from", "has", "have", "in", "into",
            "is", "it", "its", "of", "on", "or", "that", "the", "their", "there", "these", "this", "those", "to",
            "was", "were", "which", "with",
        ]
        .into_iter()
        .collect()
    })
}

/// A swappable sentence segmentation strategy.
pub trait SentenceSplitter: Send + Sync {
    fn split(&self, text: &str) -> Vec<String>;
}

/// Words that end in a period without ending a sentence when the next word
/// starts with a lowercase letter or a digit. Compared case-insensitively
/// against the word immediately before the terminator.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "etc", "cf", "vs", "viz", "al", "approx", "art", "arts", "ch", "co", "corp", "fig", "inc", "ltd",
    "no", "nos", "para", "paras", "pp", "reg", "sec",
];

/// Titles never end a sentence, whatever follows.
pub const TITLES: &[&str] = &["dr", "jr", "mr", "mrs", "ms", "prof", "sr", "st"];

/// Splits on runs of `.`, `!` or `?` (optionally followed by closing quotes
/// or brackets) that are followed by whitespace or end of text.
///
/// A period is not a boundary when it is directly followed by a digit, when
/// the word before it is a title, or when that word is a listed abbreviation
/// and the next word starts lowercase or with a digit.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSplitter;

impl SentenceSplitter for RuleSplitter {
    fn split(&self, text: &str) -> Vec<String> {
        split_rule_based(text)
    }
}

pub fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Sentences of `text` using [`RuleSplitter`].
pub fn split_sentences(text: &str) -> Vec<String> {
    split_rule_based(text)
}

fn split_rule_based(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let run_start = i;
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let at_end = j == chars.len();
        let before_space = !at_end && chars[j].1.is_whitespace();
        if (at_end || before_space) && !is_protected(&chars, run_start) {
            let end = if at_end { text.len() } else { chars[j].0 };
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
        i = j.max(i + 1);
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Whether the terminator run starting at `idx` must not end a sentence.
fn is_protected(chars: &[(usize, char)], idx: usize) -> bool {
    if chars[idx].1 != '.' {
        return false;
    }
    // A single period directly followed by a digit is part of a number.
    if idx + 1 < chars.len() && chars[idx + 1].1.is_ascii_digit() {
        return true;
    }
    // Only a lone period can belong to an abbreviation ("etc." but not "etc...").
    if idx + 1 < chars.len() && is_terminator(chars[idx + 1].1) {
        return false;
    }
    let mut k = idx;
    while k > 0 && !chars[k - 1].1.is_whitespace() && chars[k - 1].1 != '(' {
        k -= 1;
    }
    if k == idx {
        return false;
    }
    let word: String = chars[k..idx].iter().map(|(_, c)| c.to_ascii_lowercase()).collect();
    if TITLES.contains(&word.as_str()) {
        return true;
    }
    let next = chars[idx + 1..].iter().map(|(_, c)| *c).find(|c| !c.is_whitespace());
    ABBREVIATIONS.contains(&word.as_str()) && next.is_some_and(|c| c.is_lowercase() || c.is_ascii_digit())
}

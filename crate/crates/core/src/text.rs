//! Normalization, sentence segmentation and tokenization of report text.
//!
//! All spans are byte offsets into the original report text. Normalization
//! only ever applies to the per-token `normalized` field, so highlights can be
//! rendered against the untouched input.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Abbreviations shipped with the default lexicon. A period that closes one
/// of these never ends a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &["bds.", "z.B.", "i.S.", "re.", "li.", "V.a."];

/// NFC composition followed by lowercasing. Umlauts and `ß` are kept as they
/// are, and runs of whitespace collapse to a single space.
pub fn normalize(text: &str) -> String {
    let composed: String = text.nfc().collect();
    let lowered = composed.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn normalize_token(surface: &str) -> String {
    surface.nfc().collect::<String>().to_lowercase()
}

/// Case-insensitive set of abbreviations that protect a trailing period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abbreviations {
    entries: HashSet<String>,
}

impl Abbreviations {
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = items
            .into_iter()
            .map(|s| normalize(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        Self { entries }
    }

    pub fn empty() -> Self {
        Self {
            entries: HashSet::new(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains(&normalize(word))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted view, mostly for diagnostics and tests.
    pub fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.entries.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

impl Default for Abbreviations {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS)
    }
}

/// Splits `text` into trimmed, non-empty sentence spans.
///
/// `!`, `?`, `;` and newlines always split. A period splits only when it is
/// followed by end of text, or by whitespace and then an uppercase letter,
/// and the word it closes is not a known abbreviation.
pub fn segment_sentences(text: &str, abbreviations: &Abbreviations) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();

    for (i, &(pos, c)) in chars.iter().enumerate() {
        let end = pos + c.len_utf8();
        let split = match c {
            '!' | '?' | ';' | '\n' => true,
            '.' => period_ends_sentence(text, &chars, i, abbreviations),
            _ => false,
        };
        if split {
            push_trimmed(text, start..end, &mut spans);
            start = end;
        }
    }
    push_trimmed(text, start..text.len(), &mut spans);
    spans
}

fn period_ends_sentence(
    text: &str,
    chars: &[(usize, char)],
    i: usize,
    abbreviations: &Abbreviations,
) -> bool {
    let rest = &chars[i + 1..];
    let boundary = match rest.first() {
        None => true,
        Some((_, next)) if next.is_whitespace() => rest
            .iter()
            .map(|(_, c)| *c)
            .find(|c| !c.is_whitespace())
            .is_none_or(char::is_uppercase),
        Some(_) => false,
    };
    if !boundary {
        return false;
    }

    // The word closed by this period, e.g. "bds." or "V.a.".
    let end = chars[i].0 + 1;
    let word_start = chars[..i]
        .iter()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(p, c)| p + c.len_utf8())
        .unwrap_or(0);
    let word = text[word_start..end].trim_start_matches(|c: char| !c.is_alphanumeric());
    word.len() <= 1 || !abbreviations.contains(word)
}

fn push_trimmed(text: &str, span: Range<usize>, out: &mut Vec<Range<usize>>) {
    let slice = &text[span.clone()];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        out.push(span.start + lead..span.end - trail);
    }
}

/// One word of a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub char_span: (usize, usize),
    pub sentence_index: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-'
}

/// Tokenizes the slice `text[span]`. Punctuation is dropped; hyphens inside a
/// word keep it whole ("CT-Thorax"), leading and trailing hyphens are
/// stripped.
pub fn tokenize(text: &str, span: Range<usize>, sentence_index: usize) -> Vec<Token> {
    let slice = &text[span.clone()];
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;

    let flush = |from: usize, to: usize, tokens: &mut Vec<Token>| {
        let raw = &slice[from..to];
        let trimmed_front = raw.trim_start_matches('-');
        let lead = raw.len() - trimmed_front.len();
        let word = trimmed_front.trim_end_matches('-');
        if word.is_empty() {
            return;
        }
        let start = span.start + from + lead;
        tokens.push(Token {
            surface: word.to_string(),
            normalized: normalize_token(word),
            char_span: (start, start + word.len()),
            sentence_index,
        });
    };

    for (pos, c) in slice.char_indices() {
        match (word_start, is_word_char(c)) {
            (None, true) => word_start = Some(pos),
            (Some(from), false) => {
                flush(from, pos, &mut tokens);
                word_start = None;
            }
            _ => {}
        }
    }
    if let Some(from) = word_start {
        flush(from, slice.len(), &mut tokens);
    }
    tokens
}

/// Normalized token sequence of a free-standing phrase, as used by lexicon
/// entries. Sentence punctuation is treated like any other punctuation.
pub fn phrase_tokens(text: &str) -> Vec<String> {
    tokenize(text, 0..text.len(), 0)
        .into_iter()
        .map(|t| t.normalized)
        .collect()
}

/// A report broken into sentences and tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedReport {
    pub report_id: String,
    pub original_text: String,
    pub tokens: Vec<Token>,
    /// Token-index range of every sentence, in order. Sentences without any
    /// token are not recorded.
    pub sentence_boundaries: Vec<Range<usize>>,
}

impl TokenizedReport {
    pub fn new(report_id: impl Into<String>, text: &str, abbreviations: &Abbreviations) -> Self {
        let mut tokens = Vec::new();
        let mut sentence_boundaries = Vec::new();
        for span in segment_sentences(text, abbreviations) {
            let first = tokens.len();
            let sentence_tokens = tokenize(text, span, sentence_boundaries.len());
            if sentence_tokens.is_empty() {
                continue;
            }
            tokens.extend(sentence_tokens);
            sentence_boundaries.push(first..tokens.len());
        }
        Self {
            report_id: report_id.into(),
            original_text: text.to_string(),
            tokens,
            sentence_boundaries,
        }
    }

    pub fn sentence_tokens(&self, sentence: usize) -> &[Token] {
        &self.tokens[self.sentence_boundaries[sentence].clone()]
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_boundaries.len()
    }
}

//! Whitespace tokenizer that peels leading and trailing punctuation into
//! separate tokens and records byte offsets into the source text.

use serde::{Deserialize, Serialize};

/// Bumped whenever tokenization output could change; part of the dataset
/// cache key.
pub const TOKENIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Byte range in the source text.
    pub start: usize,
    pub end: usize,
}

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '‘' | '’'
                | '“'
                | '”'
                | '–'
                | '—'
                | '…'
                | '«'
                | '»'
                | '¿'
                | '¡'
                | '·'
                | '„'
                | '′'
                | '″'
        )
}

fn push(tokens: &mut Vec<Token>, text: &str, base: usize, start: usize, end: usize) {
    tokens.push(Token {
        text: text[start..end].to_string(),
        start: base + start,
        end: base + end,
    });
}

fn split_chunk(tokens: &mut Vec<Token>, chunk: &str, base: usize) {
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut lo = 0;
    while lo < chars.len() && is_punct(chars[lo].1) {
        lo += 1;
    }
    if lo == chars.len() {
        for &(b, c) in &chars {
            push(tokens, chunk, base, b, b + c.len_utf8());
        }
        return;
    }
    let mut hi = chars.len();
    while hi > lo && is_punct(chars[hi - 1].1) {
        hi -= 1;
    }
    for &(b, c) in &chars[..lo] {
        push(tokens, chunk, base, b, b + c.len_utf8());
    }
    let word_end = chars.get(hi).map_or(chunk.len(), |&(b, _)| b);
    push(tokens, chunk, base, chars[lo].0, word_end);
    for &(b, c) in &chars[hi..] {
        push(tokens, chunk, base, b, b + c.len_utf8());
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                split_chunk(&mut tokens, &text[s..i], s);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        split_chunk(&mut tokens, &text[s..], s);
    }
    tokens
}

//! SQuAD v1.1 JSON. Each paragraph becomes a single document split into
//! sentences with a punctuation heuristic; sentence supervision is absent.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::example::{AnswerType, Document, Example, GoldAnswer, Sentence};
use super::tokenize::{tokenize, Token};
use super::LoadStats;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct SquadFile {
    data: Vec<Article>,
}

#[derive(Debug, Deserialize)]
struct Article {
    #[serde(default)]
    title: String,
    paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Debug, Deserialize)]
struct Qa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

pub fn load_squad(path: &Path) -> Result<(Vec<Example>, LoadStats)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_squad(&text, path)
}

pub fn parse_squad(text: &str, path: &Path) -> Result<(Vec<Example>, LoadStats)> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut stats = LoadStats::default();
    let mut out = Vec::new();
    for article in &file.data {
        for para in &article.paragraphs {
            let tokens = tokenize(&para.context);
            if tokens.is_empty() {
                continue;
            }
            let bounds = split_sentences(&tokens);
            for qa in &para.qas {
                stats.records += 1;
                out.push(build(article, para, qa, &tokens, &bounds, &mut stats));
            }
        }
    }
    Ok((out, stats))
}

/// Sentence ends after a `.`, `!` or `?` token that is followed by a token
/// starting with an uppercase letter, a digit or a quote.
pub fn split_sentences(tokens: &[Token]) -> Vec<usize> {
    let mut ends = Vec::new();
    for i in 0..tokens.len() {
        let t = tokens[i].text.as_str();
        let closes = matches!(t, "." | "!" | "?");
        let next_starts = tokens.get(i + 1).is_some_and(|n| {
            n.text
                .chars()
                .next()
                .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit() || c == '"')
        });
        if closes && next_starts {
            ends.push(i + 1);
        }
    }
    if ends.last() != Some(&tokens.len()) {
        ends.push(tokens.len());
    }
    ends
}

/// Byte offset of the `chars`-th code point (clamped to the end).
fn char_to_byte(text: &str, chars: usize) -> usize {
    text.char_indices()
        .nth(chars)
        .map_or(text.len(), |(b, _)| b)
}

/// Maps a byte range onto an inclusive token span. The second value reports
/// whether either side had to be snapped to a covering token.
pub fn byte_range_to_tokens(
    tokens: &[Token],
    lo: usize,
    hi: usize,
) -> Option<((usize, usize), bool)> {
    let start = tokens.iter().position(|t| t.end > lo)?;
    let end = tokens.iter().rposition(|t| t.start < hi)?;
    if end < start {
        return None;
    }
    let snapped = tokens[start].start != lo || tokens[end].end != hi;
    Some(((start, end), snapped))
}

fn build(
    article: &Article,
    para: &Paragraph,
    qa: &Qa,
    tokens: &[Token],
    bounds: &[usize],
    stats: &mut LoadStats,
) -> Example {
    let ctx = &para.context;
    let mut span = None;
    if let Some(a) = qa.answers.first() {
        let lo = char_to_byte(ctx, a.answer_start);
        let hi = char_to_byte(ctx, a.answer_start + a.text.chars().count());
        match byte_range_to_tokens(tokens, lo, hi) {
            Some((s, snapped)) => {
                if snapped {
                    stats.snapped_offsets += 1;
                }
                span = Some(s);
            }
            None => {
                stats.answer_not_found += 1;
                stats.warn(format!(
                    "{}: answer offset {} outside context",
                    qa.id, a.answer_start
                ));
            }
        }
    }

    // Merge sentences until the gold span sits inside one.
    let mut ends: Vec<usize> = bounds.to_vec();
    if let Some((s, e)) = span {
        ends.retain(|&b| b <= s || b > e);
    }

    let mut sentences = Vec::with_capacity(ends.len());
    let mut context_tokens = Vec::with_capacity(tokens.len());
    let mut first = 0;
    for (index, &end) in ends.iter().enumerate() {
        let base = tokens[first].start;
        let text = ctx[base..tokens[end - 1].end].to_string();
        context_tokens.extend(tokens[first..end].iter().map(|t| Token {
            text: t.text.clone(),
            start: t.start - base,
            end: t.end - base,
        }));
        sentences.push(Sentence {
            start: first,
            end,
            doc: 0,
            index,
            text,
        });
        first = end;
    }

    let answer = qa.answers.first().map(|a| GoldAnswer {
        text: a.text.clone(),
        kind: AnswerType::Span,
        span,
        aliases: qa.answers[1..].iter().map(|x| x.text.clone()).collect(),
    });
    Example {
        id: qa.id.clone(),
        question: qa.question.clone(),
        question_tokens: tokenize(&qa.question),
        documents: vec![Document {
            title: article.title.clone(),
            sentences: 0..sentences.len(),
        }],
        sup_labels: vec![false; sentences.len()],
        sentences,
        context_tokens,
        answer,
        has_sup: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(context: &str, answers: &[(&str, usize)]) -> String {
        let answers: Vec<_> = answers
            .iter()
            .map(|(t, s)| serde_json::json!({"text": t, "answer_start": s}))
            .collect();
        serde_json::json!({
            "version": "1.1",
            "data": [{"title": "T", "paragraphs": [{"context": context, "qas": [
                {"id": "q1", "question": "What?", "answers": answers}
            ]}]}]
        })
        .to_string()
    }

    fn load(context: &str, answers: &[(&str, usize)]) -> (Example, LoadStats) {
        let (mut ex, stats) = parse_squad(&file(context, answers), Path::new("s.json")).unwrap();
        (ex.remove(0), stats)
    }

    #[test]
    fn aligned_offset_gives_exact_span() {
        let ctx = "Khia sold 2 million records. She lives in Tampa.";
        let (ex, stats) = load(ctx, &[("2 million", 10)]);
        let (s, e) = ex.answer.as_ref().unwrap().span.unwrap();
        assert_eq!((s, e), (2, 3));
        assert_eq!(ex.span_text(s, e), "2 million");
        assert_eq!(stats.snapped_offsets, 0);
        assert_eq!(ex.sentences.len(), 2);
        assert!(!ex.has_sup);
        ex.validate().unwrap();
    }

    #[test]
    fn mid_token_offset_snaps_to_covering_token() {
        let ctx = "Khia sold 2 million records.";
        let (ex, stats) = load(ctx, &[("illion", 13)]);
        let (s, e) = ex.answer.as_ref().unwrap().span.unwrap();
        // Oracle: the token whose byte range contains offset 13.
        let oracle = ex
            .context_tokens
            .iter()
            .position(|t| t.start <= 13 && 13 < t.end)
            .unwrap();
        assert_eq!((s, e), (oracle, oracle));
        assert_eq!(stats.snapped_offsets, 1);
    }

    #[test]
    fn multibyte_chars_use_code_point_offsets() {
        let ctx = "Café Müller opened in 1920.";
        let (ex, _) = load(ctx, &[("1920", 22)]);
        let (s, e) = ex.answer.as_ref().unwrap().span.unwrap();
        assert_eq!(ex.span_text(s, e), "1920");
    }

    #[test]
    fn span_across_split_merges_sentences() {
        let ctx = "He moved to the U.S. In 1990 he won.";
        let (ex, _) = load(ctx, &[("U.S. In 1990", 16)]);
        let (s, e) = ex.answer.as_ref().unwrap().span.unwrap();
        assert_eq!(ex.sentence_of(s), ex.sentence_of(e));
        ex.validate().unwrap();
    }

    #[test]
    fn extra_answers_become_aliases() {
        let (ex, _) = load("Tampa is hot.", &[("Tampa", 0), ("tampa", 0)]);
        assert_eq!(ex.answer.unwrap().aliases, vec!["tampa".to_string()]);
    }
}

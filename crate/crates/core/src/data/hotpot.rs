//! HotpotQA distractor-setting JSON.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::example::{AnswerType, Document, Example, GoldAnswer, Sentence};
use super::tokenize::{tokenize, Token};
use super::LoadStats;
use crate::error::{Error, Result};

/// One record in the official file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotpotRecord {
    #[serde(rename = "_id")]
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// `[title, [sentence, ...]]` per paragraph.
    pub context: Vec<(String, Vec<String>)>,
    /// `[title, sentence index]` per supporting fact.
    #[serde(default)]
    pub supporting_facts: Vec<(String, usize)>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
}

pub fn load_hotpotqa(path: &Path) -> Result<(Vec<Example>, LoadStats)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&text, path)?;
    Ok(records_to_examples(&records))
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<HotpotRecord>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                detail: format!("record {i}: {e}"),
            })
        })
        .collect()
}

pub fn records_to_examples(records: &[HotpotRecord]) -> (Vec<Example>, LoadStats) {
    let mut stats = LoadStats::default();
    let examples = records
        .iter()
        .map(|r| build_example(r, &mut stats))
        .collect();
    stats.records = records.len();
    (examples, stats)
}

fn build_example(rec: &HotpotRecord, stats: &mut LoadStats) -> Example {
    let mut context_tokens: Vec<Token> = Vec::new();
    let mut documents = Vec::new();
    let mut sentences = Vec::new();
    let mut lookup: HashMap<(&str, usize), usize> = HashMap::new();

    for (title, sents) in &rec.context {
        let doc = documents.len();
        let first = sentences.len();
        for (index, text) in sents.iter().enumerate() {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                continue;
            }
            let start = context_tokens.len();
            context_tokens.extend(tokens);
            lookup
                .entry((title.as_str(), index))
                .or_insert(sentences.len());
            sentences.push(Sentence {
                start,
                end: context_tokens.len(),
                doc,
                index,
                text: text.clone(),
            });
        }
        if sentences.len() > first {
            documents.push(Document {
                title: title.clone(),
                sentences: first..sentences.len(),
            });
        }
    }

    let mut sup_labels = vec![false; sentences.len()];
    for (title, index) in &rec.supporting_facts {
        match lookup.get(&(title.as_str(), *index)) {
            Some(&s) => sup_labels[s] = true,
            None => {
                stats.dropped_facts += 1;
                stats.warn(format!(
                    "{}: supporting fact ({title}, {index}) not in context, dropped",
                    rec.id
                ));
            }
        }
    }

    let mut example = Example {
        id: rec.id.clone(),
        question: rec.question.clone(),
        question_tokens: tokenize(&rec.question),
        context_tokens,
        documents,
        sentences,
        answer: None,
        sup_labels,
        has_sup: true,
    };
    example.answer = rec.answer.as_ref().map(|a| {
        let kind = match a.trim().to_lowercase().as_str() {
            "yes" => AnswerType::Yes,
            "no" => AnswerType::No,
            _ => AnswerType::Span,
        };
        let span = if kind == AnswerType::Span {
            let found = locate_answer(&example, a);
            if found.is_none() {
                stats.answer_not_found += 1;
                stats.warn(format!("{}: answer {a:?} not found in context", rec.id));
            }
            found
        } else {
            None
        };
        GoldAnswer {
            text: a.clone(),
            kind,
            span,
            aliases: Vec::new(),
        }
    });
    example
}

/// Case-insensitive token match of `answer` inside a single sentence.
/// Gold supporting sentences are searched first, then every sentence in
/// order.
pub fn locate_answer(example: &Example, answer: &str) -> Option<(usize, usize)> {
    let needle: Vec<String> = tokenize(answer)
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect();
    if needle.is_empty() {
        return None;
    }
    let gold = (0..example.sentences.len())
        .filter(|&i| example.sup_labels.get(i).copied().unwrap_or(false));
    let order: Vec<usize> = gold.chain(0..example.sentences.len()).collect();
    for si in order {
        let s = &example.sentences[si];
        if s.len() < needle.len() {
            continue;
        }
        for start in s.start..=s.end - needle.len() {
            let hit = needle
                .iter()
                .enumerate()
                .all(|(k, w)| example.context_tokens[start + k].text.to_lowercase() == *w);
            if hit {
                return Some((start, start + needle.len() - 1));
            }
        }
    }
    None
}

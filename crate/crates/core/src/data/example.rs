use serde::{Deserialize, Serialize};

use super::tokenize::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Span,
    Yes,
    No,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::Span, AnswerType::Yes, AnswerType::No];

    pub fn index(self) -> usize {
        match self {
            AnswerType::Span => 0,
            AnswerType::Yes => 1,
            AnswerType::No => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// One sentence of the context. Token range is `start..end` (exclusive)
/// over the example's context tokens; `text` is the source sentence the
/// tokens' byte offsets point into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
    pub doc: usize,
    /// Sentence index within its document, as cited by supporting facts.
    pub index: usize,
    pub text: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    /// Range over the example's sentences.
    pub sentences: std::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub text: String,
    pub kind: AnswerType,
    /// Inclusive token span; `None` when the answer could not be located or
    /// was truncated away (span losses are then masked).
    pub span: Option<(usize, usize)>,
    /// Further accepted answer strings (SQuAD dev carries several).
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl GoldAnswer {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.text.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub question_tokens: Vec<Token>,
    /// Context tokens; offsets are relative to their sentence's `text`.
    pub context_tokens: Vec<Token>,
    pub documents: Vec<Document>,
    pub sentences: Vec<Sentence>,
    pub answer: Option<GoldAnswer>,
    /// One label per sentence.
    pub sup_labels: Vec<bool>,
    /// False when the dataset carries no supporting-fact supervision.
    pub has_sup: bool,
}

impl Example {
    pub fn context_len(&self) -> usize {
        self.context_tokens.len()
    }

    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        let i = self.sentences.partition_point(|s| s.end <= token);
        (i < self.sentences.len() && self.sentences[i].start <= token).then_some(i)
    }

    /// Source text covered by context tokens `start..=end`. Pieces from
    /// different sentences are joined with a space.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let mut pieces = Vec::new();
        let mut t = start;
        while t <= end && t < self.context_tokens.len() {
            let Some(si) = self.sentence_of(t) else { break };
            let sent = &self.sentences[si];
            let last = end.min(sent.end - 1);
            let (a, b) = (self.context_tokens[t].start, self.context_tokens[last].end);
            pieces.push(sent.text[a..b].to_string());
            t = last + 1;
        }
        pieces.join(" ")
    }

    /// `(title, sentence index)` pairs for the positive supporting labels.
    pub fn gold_facts(&self) -> Vec<(String, usize)> {
        self.sup_labels
            .iter()
            .zip(&self.sentences)
            .filter(|(&l, _)| l)
            .map(|(_, s)| (self.documents[s.doc].title.clone(), s.index))
            .collect()
    }

    /// Checks the structural invariants a loader must guarantee.
    pub fn validate(&self) -> Result<(), String> {
        if self.sup_labels.len() != self.sentences.len() {
            return Err(format!(
                "{}: {} labels for {} sentences",
                self.id,
                self.sup_labels.len(),
                self.sentences.len()
            ));
        }
        let mut expected = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            if s.start != expected || s.end <= s.start {
                return Err(format!(
                    "{}: sentence {i} does not tile the context",
                    self.id
                ));
            }
            if s.doc >= self.documents.len() || !self.documents[s.doc].sentences.contains(&i) {
                return Err(format!("{}: sentence {i} outside its document", self.id));
            }
            expected = s.end;
        }
        if expected != self.context_tokens.len() {
            return Err(format!(
                "{}: sentences cover {expected} of {} tokens",
                self.id,
                self.context_tokens.len()
            ));
        }
        if let Some((a, b)) = self.answer.as_ref().and_then(|g| g.span) {
            match (self.sentence_of(a), self.sentence_of(b)) {
                (Some(x), Some(y)) if x == y && a <= b => {}
                _ => {
                    return Err(format!(
                        "{}: answer span ({a}, {b}) crosses sentences",
                        self.id
                    ))
                }
            }
        }
        Ok(())
    }
}

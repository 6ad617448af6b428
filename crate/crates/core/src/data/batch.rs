//! Truncation, id encoding and padded minibatches.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::example::{AnswerType, Example};
use super::vocab::Vocab;
use crate::layers::PAD_ID;

pub const DEFAULT_MAX_CONTEXT: usize = 2550;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub max_context: usize,
    /// Characters kept per token; also the padded char width.
    pub max_word_len: usize,
    pub shuffle: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            batch_size: 32,
            max_context: DEFAULT_MAX_CONTEXT,
            max_word_len: 16,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchStats {
    pub examples: usize,
    /// Examples whose context exceeded the limit.
    pub truncated: usize,
    /// Examples whose gold span fell beyond the cut.
    pub span_truncated: usize,
    /// Examples whose first sentence alone exceeded the limit and was cut.
    pub sentence_cut: usize,
}

/// One example encoded to ids, after truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchExample {
    /// Position in the source example list.
    pub source: usize,
    pub id: String,
    pub question_ids: Vec<usize>,
    pub question_chars: Vec<Vec<usize>>,
    pub context_ids: Vec<usize>,
    pub context_chars: Vec<Vec<usize>>,
    /// `(start, end)` token ranges, end exclusive. A prefix of the source
    /// example's sentences.
    pub sentences: Vec<(usize, usize)>,
    pub sup_labels: Vec<bool>,
    pub has_sup: bool,
    pub answer_type: Option<usize>,
    pub span: Option<(usize, usize)>,
}

impl BatchExample {
    pub fn context_len(&self) -> usize {
        self.context_ids.len()
    }

    pub fn question_len(&self) -> usize {
        self.question_ids.len()
    }
}

/// Number of leading tokens and sentences kept under `max_context`. Whole
/// trailing sentences are dropped; a first sentence that is itself too long
/// is cut (reported by the third value).
pub fn truncation_point(ex: &Example, max_context: usize) -> (usize, usize, bool) {
    let total = ex.context_len();
    if total <= max_context {
        return (total, ex.sentences.len(), false);
    }
    let kept = ex.sentences.partition_point(|s| s.end <= max_context);
    if kept == 0 {
        return (max_context.min(total), 1.min(ex.sentences.len()), true);
    }
    (ex.sentences[kept - 1].end, kept, false)
}

fn chars(vocab: &Vocab, text: &str, width: usize) -> Vec<usize> {
    let mut ids = vocab.char_ids(text, width);
    ids.resize(width, PAD_ID);
    ids
}

pub fn encode(
    source: usize,
    ex: &Example,
    vocab: &Vocab,
    opts: &BatchOptions,
    stats: &mut BatchStats,
) -> BatchExample {
    let (tokens, n_sent, cut) = truncation_point(ex, opts.max_context);
    stats.examples += 1;
    if tokens < ex.context_len() {
        stats.truncated += 1;
    }
    if cut {
        stats.sentence_cut += 1;
    }
    let context = &ex.context_tokens[..tokens];
    let sentences: Vec<(usize, usize)> = ex.sentences[..n_sent]
        .iter()
        .map(|s| (s.start, s.end.min(tokens)))
        .collect();

    let answer_type = ex.answer.as_ref().map(|a| a.kind.index());
    let mut span = ex.answer.as_ref().and_then(|a| a.span);
    if let Some((_, e)) = span {
        if e >= tokens {
            stats.span_truncated += 1;
            span = None;
        }
    }
    if ex
        .answer
        .as_ref()
        .is_some_and(|a| a.kind != AnswerType::Span)
    {
        span = None;
    }

    let w = opts.max_word_len;
    BatchExample {
        source,
        id: ex.id.clone(),
        question_ids: ex
            .question_tokens
            .iter()
            .map(|t| vocab.word_id(&t.text))
            .collect(),
        question_chars: ex
            .question_tokens
            .iter()
            .map(|t| chars(vocab, &t.text, w))
            .collect(),
        context_ids: context.iter().map(|t| vocab.word_id(&t.text)).collect(),
        context_chars: context.iter().map(|t| chars(vocab, &t.text, w)).collect(),
        sup_labels: ex.sup_labels[..n_sent].to_vec(),
        sentences,
        has_sup: ex.has_sup,
        answer_type,
        span,
    }
}

pub fn encode_all(
    examples: &[Example],
    vocab: &Vocab,
    opts: &BatchOptions,
) -> (Vec<BatchExample>, BatchStats) {
    let mut stats = BatchStats::default();
    let encoded = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| encode(i, ex, vocab, opts, &mut stats))
        .collect();
    if stats.truncated > 0 {
        log::info!(
            "truncated {} contexts to {} tokens",
            stats.truncated,
            opts.max_context
        );
    }
    (encoded, stats)
}

/// A padded minibatch. Per-example arrays stay unpadded; the padded views
/// below extend them to the batch maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub examples: Vec<BatchExample>,
    pub max_context: usize,
    pub max_question: usize,
    pub max_sentences: usize,
    pub word_len: usize,
}

impl Batch {
    pub fn new(examples: Vec<BatchExample>) -> Self {
        let max_context = examples
            .iter()
            .map(BatchExample::context_len)
            .max()
            .unwrap_or(0);
        let max_question = examples
            .iter()
            .map(BatchExample::question_len)
            .max()
            .unwrap_or(0);
        let max_sentences = examples
            .iter()
            .map(|e| e.sentences.len())
            .max()
            .unwrap_or(0);
        let word_len = examples
            .iter()
            .flat_map(|e| e.context_chars.first().or(e.question_chars.first()))
            .map(Vec::len)
            .next()
            .unwrap_or(0);
        Batch {
            examples,
            max_context,
            max_question,
            max_sentences,
            word_len,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.id.as_str()).collect()
    }

    fn pad_ids(ids: &[usize], len: usize) -> Vec<usize> {
        let mut v = ids.to_vec();
        v.resize(len, PAD_ID);
        v
    }

    fn pad_chars(chars: &[Vec<usize>], len: usize, width: usize) -> Vec<Vec<usize>> {
        let mut v = chars.to_vec();
        v.resize(len, vec![PAD_ID; width]);
        v
    }

    fn mask(n: usize, len: usize) -> Vec<bool> {
        (0..len).map(|i| i < n).collect()
    }

    pub fn context_ids(&self, i: usize) -> Vec<usize> {
        Self::pad_ids(&self.examples[i].context_ids, self.max_context)
    }

    pub fn question_ids(&self, i: usize) -> Vec<usize> {
        Self::pad_ids(&self.examples[i].question_ids, self.max_question)
    }

    pub fn context_chars(&self, i: usize) -> Vec<Vec<usize>> {
        Self::pad_chars(
            &self.examples[i].context_chars,
            self.max_context,
            self.word_len,
        )
    }

    pub fn question_chars(&self, i: usize) -> Vec<Vec<usize>> {
        Self::pad_chars(
            &self.examples[i].question_chars,
            self.max_question,
            self.word_len,
        )
    }

    pub fn context_mask(&self, i: usize) -> Vec<bool> {
        Self::mask(self.examples[i].context_len(), self.max_context)
    }

    pub fn question_mask(&self, i: usize) -> Vec<bool> {
        Self::mask(self.examples[i].question_len(), self.max_question)
    }

    pub fn sentence_mask(&self, i: usize) -> Vec<bool> {
        Self::mask(self.examples[i].sentences.len(), self.max_sentences)
    }
}

/// Groups `0..n` into chunks of `batch_size`, shuffled when `rng` is given.
pub fn batch_order(n: usize, batch_size: usize, rng: Option<&mut impl Rng>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn collate(encoded: &[BatchExample], order: &[Vec<usize>]) -> Vec<Batch> {
    order
        .iter()
        .map(|idx| Batch::new(idx.iter().map(|&i| encoded[i].clone()).collect()))
        .collect()
}

/// Encodes, truncates and batches `examples`. With `opts.shuffle` the order
/// is drawn from `rng`; otherwise file order is kept.
pub fn make_batches(
    examples: &[Example],
    vocab: &Vocab,
    opts: &BatchOptions,
    rng: &mut impl Rng,
) -> (Vec<Batch>, BatchStats) {
    let (encoded, stats) = encode_all(examples, vocab, opts);
    let order = batch_order(encoded.len(), opts.batch_size, opts.shuffle.then_some(rng));
    (collate(&encoded, &order), stats)
}

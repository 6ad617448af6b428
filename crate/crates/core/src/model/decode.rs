use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelOutputs};
use crate::data::{AnswerType, Batch, Example};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub span: Option<(usize, usize)>,
    /// `(title, sentence index)` pairs.
    pub sp: Vec<(String, usize)>,
}

/// Predictions in the official HotpotQA layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionDump {
    pub answer: BTreeMap<String, String>,
    pub sp: BTreeMap<String, Vec<(String, usize)>>,
}

impl PredictionDump {
    pub fn from_predictions<'a>(preds: impl IntoIterator<Item = &'a Prediction>) -> Self {
        let mut dump = PredictionDump::default();
        for p in preds {
            dump.answer.insert(p.id.clone(), p.answer.clone());
            dump.sp.insert(p.id.clone(), p.sp.clone());
        }
        dump
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|v| v - lse).collect()
}

/// `(s, e)` maximizing `p_start(s)·p_end(e)` over `s ≤ e ≤ s + max_len`
/// within the first `len` positions. Ties keep the earliest pair.
#[allow(clippy::needless_range_loop)]
pub fn best_span(start: &[f64], end: &[f64], len: usize, max_len: usize) -> (usize, usize) {
    let ls = log_softmax(&start[..len]);
    let le = log_softmax(&end[..len]);
    let mut best = (0, 0);
    let mut score = f64::NEG_INFINITY;
    for s in 0..len {
        for e in s..len.min(s + max_len + 1) {
            let v = ls[s] + le[e];
            if v > score {
                score = v;
                best = (s, e);
            }
        }
    }
    best
}

fn row<F: Real>(t: &crate::tensor::Tensor<F>, i: usize) -> Vec<f64> {
    let w = t.dim(1);
    t.data()[i * w..(i + 1) * w]
        .iter()
        .map(|v| v.as_f64())
        .collect()
}

/// Decodes example `i` of `batch`; `example` is its untruncated source.
pub fn decode<F: Real>(
    out: &ModelOutputs<F>,
    batch: &Batch,
    i: usize,
    example: &Example,
    config: &ModelConfig,
) -> Prediction {
    let be = &batch.examples[i];
    let types = row(&out.type_logits, i);
    let kind = (0..3).fold(0, |b, k| if types[k] > types[b] { k } else { b });
    let answer_type = AnswerType::from_index(kind);
    let (answer, span) = match answer_type {
        AnswerType::Yes => ("yes".to_string(), None),
        AnswerType::No => ("no".to_string(), None),
        AnswerType::Span => {
            let (s, e) = best_span(
                &row(&out.start_logits, i),
                &row(&out.end_logits, i),
                be.context_len(),
                config.max_span_len,
            );
            (example.span_text(s, e), Some((s, e)))
        }
    };
    let sup = row(&out.sup_logits, i);
    let sp = (0..be.sentences.len())
        .filter(|&k| 1.0 / (1.0 + (-sup[k]).exp()) > config.sup_threshold)
        .map(|k| {
            let s = &example.sentences[k];
            (example.documents[s.doc].title.clone(), s.index)
        })
        .collect();
    Prediction {
        id: be.id.clone(),
        answer,
        answer_type,
        span,
        sp,
    }
}

/// `examples` is the source list the batch was encoded from.
pub fn decode_batch<F: Real>(
    out: &ModelOutputs<F>,
    batch: &Batch,
    examples: &[Example],
    config: &ModelConfig,
) -> Result<Vec<Prediction>> {
    batch
        .examples
        .iter()
        .enumerate()
        .map(|(i, be)| {
            let ex = examples
                .get(be.source)
                .filter(|e| e.id == be.id)
                .ok_or_else(|| Error::Usage(format!("{}: source example missing", be.id)))?;
            Ok(decode(out, batch, i, ex, config))
        })
        .collect()
}

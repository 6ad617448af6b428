//! Answer, supporting-fact and joint metrics, scored per example and
//! averaged, following the official HotpotQA evaluation script.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::data::Example;
use crate::model::PredictionDump;

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the and
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punc: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punc
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Exact match, F1, precision and recall of one prediction against one
/// gold string.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn answer_score(prediction: &str, gold: &str) -> Prf {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let em = if pred == gold { 1.0 } else { 0.0 };
    let special = |s: &str| matches!(s, "yes" | "no" | "noanswer");
    if (special(&pred) || special(&gold)) && pred != gold {
        return Prf {
            em,
            ..Default::default()
        };
    }
    let pt: Vec<&str> = pred.split_whitespace().collect();
    let gt: Vec<&str> = gold.split_whitespace().collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t).filter(|c| **c > 0) {
            *c -= 1;
            same += 1;
        }
    }
    if same == 0 {
        return Prf {
            em,
            ..Default::default()
        };
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    Prf {
        em,
        f1: f1_of(precision, recall),
        precision,
        recall,
    }
}

/// Best score over several accepted gold strings, ranked by F1 then EM.
pub fn best_answer_score<'a>(prediction: &str, golds: impl IntoIterator<Item = &'a str>) -> Prf {
    let mut best: Option<Prf> = None;
    for g in golds {
        let s = answer_score(prediction, g);
        if best.is_none_or(|b| (s.f1, s.em) > (b.f1, b.em)) {
            best = Some(s);
        }
    }
    best.unwrap_or_else(|| answer_score(prediction, ""))
}

pub fn sp_score(prediction: &[(String, usize)], gold: &[(String, usize)]) -> Prf {
    let pred: BTreeSet<&(String, usize)> = prediction.iter().collect();
    let gold: BTreeSet<&(String, usize)> = gold.iter().collect();
    let tp = pred.intersection(&gold).count() as f64;
    let fp = pred.len() as f64 - tp;
    let fn_ = gold.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    Prf {
        em: if fp + fn_ == 0.0 { 1.0 } else { 0.0 },
        f1: f1_of(precision, recall),
        precision,
        recall,
    }
}

pub fn joint_score(answer: &Prf, sp: &Prf) -> Prf {
    let precision = answer.precision * sp.precision;
    let recall = answer.recall * sp.recall;
    Prf {
        em: answer.em * sp.em,
        f1: f1_of(precision, recall),
        precision,
        recall,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleScores {
    pub id: String,
    pub answer: Prf,
    pub sp: Prf,
    pub joint: Prf,
    /// False when the dump had no answer for this example.
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricReport {
    pub answer_em: f64,
    pub answer_f1: f64,
    pub sp_em: f64,
    pub sp_f1: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
    /// False when no gold example carries supporting-fact labels; the sp
    /// and joint columns are then zero.
    pub has_sup: bool,
    pub missing: usize,
    pub per_example: Vec<ExampleScores>,
}

impl MetricReport {
    /// The six headline numbers: answer EM/F1, sup EM/F1, joint EM/F1.
    pub fn columns(&self) -> [f64; 6] {
        [
            self.answer_em,
            self.answer_f1,
            self.sp_em,
            self.sp_f1,
            self.joint_em,
            self.joint_f1,
        ]
    }

    /// Joint F1 with sentence supervision, answer F1 without.
    pub fn selection_score(&self) -> f64 {
        if self.has_sup {
            self.joint_f1
        } else {
            self.answer_f1
        }
    }
}

/// Scores `dump` against every example in `gold`. An example with no
/// prediction scores zero and is reported with a warning.
pub fn evaluate_predictions(dump: &PredictionDump, gold: &[Example]) -> MetricReport {
    let has_sup = gold.iter().any(|e| e.has_sup);
    let mut report = MetricReport {
        has_sup,
        ..Default::default()
    };
    for ex in gold {
        let zero = Prf::default();
        let answer = match (dump.answer.get(&ex.id), &ex.answer) {
            (Some(p), Some(g)) => Some(best_answer_score(p, g.texts())),
            (Some(p), None) => Some(answer_score(p, "")),
            (None, _) => None,
        };
        let sp = match dump.sp.get(&ex.id) {
            Some(p) if ex.has_sup => Some(sp_score(p, &ex.gold_facts())),
            _ => None,
        };
        if answer.is_none() {
            report.missing += 1;
            log::warn!("{}: no prediction, scored as zero", ex.id);
        }
        let joint = match (&answer, &sp) {
            (Some(a), Some(s)) => joint_score(a, s),
            _ => zero,
        };
        report.per_example.push(ExampleScores {
            id: ex.id.clone(),
            answer: answer.unwrap_or(zero),
            sp: sp.unwrap_or(zero),
            joint,
            predicted: answer.is_some(),
        });
    }
    let n = report.per_example.len().max(1) as f64;
    let mean =
        |f: &dyn Fn(&ExampleScores) -> f64| report.per_example.iter().map(f).sum::<f64>() / n;
    let cols = [
        mean(&|e| e.answer.em),
        mean(&|e| e.answer.f1),
        mean(&|e| e.sp.em),
        mean(&|e| e.sp.f1),
        mean(&|e| e.joint.em),
        mean(&|e| e.joint.f1),
    ];
    [
        report.answer_em,
        report.answer_f1,
        report.sp_em,
        report.sp_f1,
        report.joint_em,
        report.joint_f1,
    ] = cols;
    report
}

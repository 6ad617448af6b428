use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::example::Example;
use crate::layers::{PAD_ID, UNK_ID};

/// Word ids are over lowercased forms; char ids keep case. Both reserve
/// 0 for padding and 1 for unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: Vec<String>,
    pub chars: Vec<char>,
    /// Parallel to `words`; the two reserved entries count 0.
    pub word_freq: Vec<usize>,
    #[serde(skip)]
    word_ids: HashMap<String, usize>,
    #[serde(skip)]
    char_ids: HashMap<char, usize>,
}

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

fn ordered<K: Ord + Clone>(counts: BTreeMap<K, usize>, min_freq: usize) -> Vec<(K, usize)> {
    let mut v: Vec<(K, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    // Frequency descending, ties alphabetical.
    v.sort_by_key(|e| std::cmp::Reverse(e.1));
    v
}

impl Vocab {
    pub fn build(examples: &[Example], min_freq: usize) -> Self {
        let mut words = BTreeMap::new();
        let mut chars = BTreeMap::new();
        for ex in examples {
            for t in ex.question_tokens.iter().chain(&ex.context_tokens) {
                *words.entry(t.text.to_lowercase()).or_insert(0) += 1;
                for c in t.text.chars() {
                    *chars.entry(c).or_insert(0) += 1;
                }
            }
        }
        let words = ordered(words, min_freq);
        let chars = ordered(chars, 1);
        Self::from_parts(
            [PAD.to_string(), UNK.to_string()]
                .into_iter()
                .chain(words.iter().map(|(w, _)| w.clone()))
                .collect(),
            ['\0', '\u{1}']
                .into_iter()
                .chain(chars.iter().map(|&(c, _)| c))
                .collect(),
            [0, 0]
                .into_iter()
                .chain(words.iter().map(|&(_, n)| n))
                .collect(),
        )
    }

    pub fn from_parts(words: Vec<String>, chars: Vec<char>, word_freq: Vec<usize>) -> Self {
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let char_ids = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self {
            words,
            chars,
            word_freq,
            word_ids,
            char_ids,
        }
    }

    /// Rebuilds the lookup maps after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_parts(self.words, self.chars, self.word_freq)
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, token: &str) -> usize {
        self.word_ids
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn char_ids(&self, token: &str, max_len: usize) -> Vec<usize> {
        token
            .chars()
            .take(max_len)
            .map(|c| self.char_ids.get(&c).copied().unwrap_or(UNK_ID))
            .collect()
    }

    pub fn is_special(id: usize) -> bool {
        id == PAD_ID || id == UNK_ID
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize::tokenize;

    fn corpus(texts: &[&str]) -> Vec<Example> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Example {
                id: i.to_string(),
                question: String::new(),
                question_tokens: Vec::new(),
                context_tokens: tokenize(t),
                documents: Vec::new(),
                sentences: Vec::new(),
                answer: None,
                sup_labels: Vec::new(),
                has_sup: false,
            })
            .collect()
    }

    #[test]
    fn empty_corpus_has_only_reserved_entries() {
        let v = Vocab::build(&[], 1);
        assert_eq!(v.words, vec![PAD, UNK]);
        assert_eq!(v.n_chars(), 2);
        assert_eq!(v.word_id("anything"), UNK_ID);
    }

    #[test]
    fn ordering_is_freq_desc_then_word_asc() {
        let v = Vocab::build(&corpus(&["b a c b", "A c d"]), 1);
        assert_eq!(&v.words[2..], ["a", "b", "c", "d"].map(String::from));
        assert_eq!(v.word_id("B"), 3);
        assert_eq!(v.word_freq[2..], [2, 2, 2, 1]);
        let again = Vocab::build(&corpus(&["b a c b", "A c d"]), 1);
        assert_eq!(v, again);
    }

    #[test]
    fn min_freq_drops_hapax_to_unk() {
        let texts = ["x y y z z z", "w"];
        let v = Vocab::build(&corpus(&texts), 2);
        // Counting oracle.
        let mut counts = HashMap::new();
        for t in texts.iter().flat_map(|t| t.split_whitespace()) {
            *counts.entry(t).or_insert(0) += 1;
        }
        for (w, c) in counts {
            assert_eq!(v.word_id(w) == UNK_ID, c < 2, "{w}");
        }
    }

    #[test]
    fn chars_keep_case_and_truncate() {
        let v = Vocab::build(&corpus(&["Aa"]), 1);
        let ids = v.char_ids("Aab", 2);
        assert_eq!(ids.len(), 2);
        assert_ne!(ids[0], ids[1]);
        assert_eq!(v.char_ids("b", 4), vec![UNK_ID]);
    }

    #[test]
    fn serde_round_trip_needs_reindex() {
        let v = Vocab::build(&corpus(&["hello world"]), 1);
        let back: Vocab = serde_json::from_str::<Vocab>(&serde_json::to_string(&v).unwrap())
            .unwrap()
            .reindex();
        assert_eq!(back.word_id("world"), v.word_id("world"));
    }
}

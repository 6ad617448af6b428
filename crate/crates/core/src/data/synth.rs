//! Templated two-hop bridge questions in the HotpotQA record layout.
//!
//! Each instance links an album `A` to its artist `B` in the first sentence
//! of A's document; B's document states a property of B that answers the
//! question. Two distractor documents with fresh entities are mixed in.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::example::Example;
use super::hotpot::{records_to_examples, HotpotRecord};

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr", "br",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "m", "x"];
const ROLES: &[&str] = &["rapper", "singer", "guitarist", "drummer", "pianist"];
const NATIONS: &[&str] = &[
    "American",
    "Canadian",
    "British",
    "Irish",
    "Australian",
    "French",
];
const FILLER: &[&str] = &[
    "The album was recorded over two years .",
    "It received mixed reviews from critics .",
    "Several singles were released from it .",
    "The cover art was widely discussed .",
];

/// Fraction of generated questions with a yes/no answer.
pub const YES_NO_RATE: f64 = 0.2;

struct Names {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Names {
    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(VOWELS.choose(&mut self.rng).unwrap());
                w.push_str(CODAS.choose(&mut self.rng).unwrap());
            }
            let mut c = w.chars();
            let cap: String = c.next().unwrap().to_uppercase().chain(c).collect();
            if self.used.insert(cap.clone()) {
                return cap;
            }
        }
    }
}

struct Artist {
    album: String,
    name: String,
    role: &'static str,
    nation: &'static str,
    city: String,
    sales: String,
}

fn artist(names: &mut Names) -> Artist {
    let n = names.rng.gen_range(2..10);
    let unit = if names.rng.gen_bool(0.5) {
        "million"
    } else {
        "thousand"
    };
    Artist {
        album: format!("{} {}", names.word(2), names.word(2)),
        name: names.word(3),
        role: ROLES.choose(&mut names.rng).unwrap(),
        nation: NATIONS.choose(&mut names.rng).unwrap(),
        city: names.word(2),
        sales: format!("{n} {unit}"),
    }
}

enum Ask {
    City,
    Sales,
    Nation(bool),
}

/// Documents for one artist, plus the index of the answering sentence in
/// the artist document.
fn documents(a: &Artist, rng: &mut ChaCha8Rng) -> [(String, Vec<String>); 2] {
    let filler = FILLER.choose(rng).unwrap().to_string();
    let album = (
        a.album.clone(),
        vec![
            format!(
                "{} is the debut album by {} {} {} .",
                a.album, a.nation, a.role, a.name
            ),
            filler,
        ],
    );
    let artist = (
        a.name.clone(),
        vec![
            format!("{} is a {} {} .", a.name, a.nation, a.role),
            format!("{} was born in {} .", a.name, a.city),
            format!("{} has sold over {} records worldwide .", a.name, a.sales),
        ],
    );
    [album, artist]
}

pub fn synth_records(n: usize, seed: u64) -> Vec<HotpotRecord> {
    let mut names = Names {
        rng: ChaCha8Rng::seed_from_u64(seed),
        used: HashSet::new(),
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let gold = artist(&mut names);
        let distract: Vec<Artist> = (0..2).map(|_| artist(&mut names)).collect();
        let rng = &mut names.rng;
        let ask = if rng.gen_bool(YES_NO_RATE) {
            Ask::Nation(rng.gen_bool(0.5))
        } else if rng.gen_bool(0.5) {
            Ask::City
        } else {
            Ask::Sales
        };

        let [album_doc, artist_doc] = documents(&gold, rng);
        let mut docs = vec![album_doc, artist_doc];
        let [d_album, _] = documents(&distract[0], rng);
        let [_, d_artist] = documents(&distract[1], rng);
        docs.push(d_album);
        docs.push(d_artist);
        docs.shuffle(rng);

        let (question, answer, fact) = match ask {
            Ask::City => (
                format!("Where was the {} whose debut album was titled {} born ?", gold.role, gold.album),
                gold.city.clone(),
                1,
            ),
            Ask::Sales => (
                format!("The {} whose debut album was titled {} has sold over how many records worldwide ?", gold.role, gold.album),
                gold.sales.clone(),
                2,
            ),
            Ask::Nation(truth) => {
                let nation = if truth {
                    gold.nation
                } else {
                    *NATIONS.iter().filter(|&&x| x != gold.nation).collect::<Vec<_>>().choose(rng).unwrap()
                };
                (
                    format!("Is the {} whose debut album was titled {} {} ?", gold.role, gold.album, nation),
                    if truth { "yes" } else { "no" }.to_string(),
                    0,
                )
            }
        };
        let kind = if matches!(ask, Ask::Nation(_)) {
            "comparison"
        } else {
            "bridge"
        };
        out.push(HotpotRecord {
            id: format!("synth-{seed}-{i}"),
            question,
            answer: Some(answer),
            context: docs,
            supporting_facts: vec![(gold.album.clone(), 0), (gold.name.clone(), fact)],
            kind: Some(kind.into()),
            level: Some("easy".into()),
        });
    }
    out
}

pub fn synth_two_hop(n: usize, seed: u64) -> Vec<Example> {
    records_to_examples(&synth_records(n, seed)).0
}

/// One example whose context is `tokens` long, split into sentences of 30
/// tokens, with a span answer in the last sentence.
pub fn synth_long_record(tokens: usize, seed: u64) -> HotpotRecord {
    let mut names = Names {
        rng: ChaCha8Rng::seed_from_u64(seed),
        used: HashSet::new(),
    };
    let answer = names.word(3);
    let per = 30;
    let mut sentences = Vec::new();
    let mut left = tokens;
    while left > 0 {
        let n = left.min(per);
        let mut words: Vec<String> = (0..n)
            .map(|k| {
                if k % 2 == 0 {
                    "filler".into()
                } else {
                    "text".into()
                }
            })
            .collect();
        if left == n {
            words[n - 1] = answer.clone();
        }
        sentences.push(words.join(" "));
        left -= n;
    }
    let last = sentences.len() - 1;
    HotpotRecord {
        id: format!("long-{seed}"),
        question: "Which word closes the document ?".into(),
        answer: Some(answer),
        context: vec![("Long".into(), sentences)],
        supporting_facts: vec![("Long".into(), 0), ("Long".into(), last)],
        kind: Some("bridge".into()),
        level: None,
    }
}

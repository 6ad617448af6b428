//! On-disk cache of encoded examples: a JSON manifest with per-example
//! structure plus a little-endian `u32` blob holding the id arrays.
//!
//! Entries are keyed by a SHA-256 over the input bytes, the tokenizer
//! version and the encoding options, so any change produces a miss.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::batch::{BatchExample, BatchOptions};
use super::tokenize::TOKENIZER_VERSION;
use crate::error::{Error, Result};

pub const CACHE_FORMAT: &str = "hopqa-dataset-cache";
pub const CACHE_VERSION: u32 = 1;
pub const CACHE_DIR_ENV: &str = "HOPQA_CACHE_DIR";

pub fn cache_key(inputs: &[&[u8]], opts: &BatchOptions, min_freq: usize) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_FORMAT.as_bytes());
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(TOKENIZER_VERSION.to_le_bytes());
    for bytes in inputs {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    for v in [opts.max_context, opts.max_word_len, min_freq] {
        h.update((v as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tokenizer_version: u32,
    key: String,
    word_len: usize,
    examples: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    source: usize,
    id: String,
    question_len: usize,
    context_len: usize,
    sentences: Vec<(usize, usize)>,
    sup_labels: Vec<bool>,
    has_sup: bool,
    answer_type: Option<usize>,
    span: Option<(usize, usize)>,
}

pub struct DatasetCache {
    dir: PathBuf,
}

impl DatasetCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DatasetCache { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_DIR_ENV).map(Self::new)
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{key}.json")),
            self.dir.join(format!("{key}.bin")),
        )
    }

    pub fn store(&self, key: &str, examples: &[BatchExample]) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let word_len = examples
            .iter()
            .flat_map(|e| e.context_chars.first().or(e.question_chars.first()))
            .map(Vec::len)
            .next()
            .unwrap_or(0);
        let mut blob = Vec::new();
        let mut put = |ids: &[usize]| {
            for &i in ids {
                blob.extend_from_slice(&(i as u32).to_le_bytes());
            }
        };
        for e in examples {
            put(&e.question_ids);
            put(&e.context_ids);
            for w in e.question_chars.iter().chain(&e.context_chars) {
                put(w);
            }
        }
        let manifest = Manifest {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            tokenizer_version: TOKENIZER_VERSION,
            key: key.into(),
            word_len,
            examples: examples
                .iter()
                .map(|e| Entry {
                    source: e.source,
                    id: e.id.clone(),
                    question_len: e.question_len(),
                    context_len: e.context_len(),
                    sentences: e.sentences.clone(),
                    sup_labels: e.sup_labels.clone(),
                    has_sup: e.has_sup,
                    answer_type: e.answer_type,
                    span: e.span,
                })
                .collect(),
        };
        let (mpath, bpath) = self.paths(key);
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
        let text = serde_json::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
    }

    /// `Ok(None)` on a miss or on any stale entry.
    pub fn load(&self, key: &str) -> Result<Option<Vec<BatchExample>>> {
        let (mpath, bpath) = self.paths(key);
        let Ok(text) = fs::read_to_string(&mpath) else {
            return Ok(None);
        };
        let manifest: Manifest = match serde_json::from_str(&text) {
            Ok(m) => m,
            Err(_) => return Ok(None),
        };
        if manifest.format != CACHE_FORMAT
            || manifest.version != CACHE_VERSION
            || manifest.tokenizer_version != TOKENIZER_VERSION
            || manifest.key != key
        {
            return Ok(None);
        }
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let ids: Vec<usize> = blob
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let w = manifest.word_len;
        let needed: usize = manifest
            .examples
            .iter()
            .map(|e| (e.question_len + e.context_len) * (1 + w))
            .sum();
        if blob.len() % 4 != 0 || ids.len() != needed {
            return Err(Error::Parse {
                path: bpath,
                detail: format!("expected {needed} ids, found {}", ids.len()),
            });
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = ids[at..at + n].to_vec();
            at += n;
            s
        };
        let mut out = Vec::with_capacity(manifest.examples.len());
        for e in manifest.examples {
            let question_ids = take(e.question_len);
            let context_ids = take(e.context_len);
            let question_chars = (0..e.question_len).map(|_| take(w)).collect();
            let context_chars = (0..e.context_len).map(|_| take(w)).collect();
            out.push(BatchExample {
                source: e.source,
                id: e.id,
                question_ids,
                question_chars,
                context_ids,
                context_chars,
                sentences: e.sentences,
                sup_labels: e.sup_labels,
                has_sup: e.has_sup,
                answer_type: e.answer_type,
                span: e.span,
            });
        }
        Ok(Some(out))
    }
}

pub fn cache_paths(dir: &Path, key: &str) -> (PathBuf, PathBuf) {
    DatasetCache::new(dir).paths(key)
}

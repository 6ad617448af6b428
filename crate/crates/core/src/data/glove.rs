//! GloVe text vectors aligned to a vocabulary.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::layers::PAD_ID;

pub const GLOVE_DIM: usize = 300;

/// Row-major `n_words × dim` table; row 0 (padding) is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveTable {
    pub dim: usize,
    pub data: Vec<f32>,
    /// Vocabulary words that received a pretrained vector.
    pub found: usize,
    /// Lines skipped because their vector length was wrong or unparsable.
    pub skipped: usize,
}

impl GloveTable {
    /// Uniform(−0.1, 0.1) rows for every word; used for words absent from
    /// the pretrained file and when no file is given.
    pub fn random(n_words: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut data: Vec<f32> = (0..n_words * dim)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        data[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        GloveTable {
            dim,
            data,
            found: 0,
            skipped: 0,
        }
    }

    pub fn n_words(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    /// Fills rows from GloVe-format lines. The first vector seen for a
    /// lowercased word wins.
    pub fn fill_from(&mut self, reader: impl BufRead, vocab: &Vocab) -> Result<()> {
        let mut seen = vec![false; self.n_words()];
        for line in reader.lines() {
            let line = line.map_err(|e| Error::Data(format!("reading vectors: {e}")))?;
            let mut parts = line.split(' ');
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f32>, _> =
                parts.filter(|p| !p.is_empty()).map(str::parse).collect();
            let values = match values {
                Ok(v) if v.len() == self.dim => v,
                _ => {
                    self.skipped += 1;
                    continue;
                }
            };
            let id = vocab.word_id(word);
            if Vocab::is_special(id) || seen[id] {
                continue;
            }
            seen[id] = true;
            self.found += 1;
            self.data[id * self.dim..(id + 1) * self.dim].copy_from_slice(&values);
        }
        if self.skipped > 0 {
            log::warn!(
                "skipped {} vector lines with length != {}",
                self.skipped,
                self.dim
            );
        }
        Ok(())
    }
}

pub fn load_glove(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<GloveTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = GloveTable::random(vocab.n_words(), dim, rng);
    table.fill_from(BufReader::new(file), vocab)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::from_parts(
            vec![
                "<pad>".into(),
                "<unk>".into(),
                "khia".into(),
                "album".into(),
            ],
            vec!['\0', '\u{1}'],
            vec![0, 0, 1, 1],
        )
    }

    #[test]
    fn wrong_length_lines_are_skipped_and_counted() {
        let v = vocab();
        let mut t = GloveTable::random(v.n_words(), 3, &mut ChaCha8Rng::seed_from_u64(0));
        let text = "khia 1 2 3\nalbum 1 2\nother 4 5 6\nalbum x y z\nKhia 9 9 9\n";
        t.fill_from(text.as_bytes(), &v).unwrap();
        assert_eq!(t.skipped, 2);
        assert_eq!(t.found, 1);
        assert_eq!(t.row(2), [1.0, 2.0, 3.0]);
        assert!(t.row(0).iter().all(|&x| x == 0.0));
        assert!(t.row(3).iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_glove(
            Path::new("/nonexistent/glove.txt"),
            &vocab(),
            GLOVE_DIM,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}

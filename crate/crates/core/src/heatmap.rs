//! Attention matrices of one example as CSV, binary PGM and a token-label
//! sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionTrace;
use crate::data::batch::BatchExample;
use crate::data::{Batch, Example};
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl Heatmap {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

fn crop<F: Real>(t: &Tensor<F>, rows: usize, cols: usize) -> Vec<f64> {
    let w = t.dim(1);
    let d = t.data();
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| d[r * w + c].as_f64())
        .collect()
}

/// The captured matrices cropped to the real tokens: `s`, `s_bar`,
/// `row_attention` and, when their layers are enabled, `query_attention`
/// (question × context) and `column_attention`.
pub fn heatmaps<F: Real>(
    trace: &AttentionTrace<F>,
    example: &Example,
    encoded: &BatchExample,
) -> Vec<Heatmap> {
    let t = encoded.context_len();
    let j = encoded.question_len();
    let ctx: Vec<String> = example.context_tokens[..t]
        .iter()
        .map(|k| k.text.clone())
        .collect();
    let q: Vec<String> = example.question_tokens[..j]
        .iter()
        .map(|k| k.text.clone())
        .collect();
    let tj = |name, m: &Tensor<F>| Heatmap {
        name,
        rows: t,
        cols: j,
        data: crop(m, t, j),
        row_labels: ctx.clone(),
        col_labels: q.clone(),
    };
    let mut out = vec![tj("s", &trace.s), tj("s_bar", &trace.s_bar)];
    if let Some(a) = &trace.query_attention {
        out.push(Heatmap {
            name: "query_attention",
            rows: j,
            cols: t,
            data: crop(a, j, t),
            row_labels: q.clone(),
            col_labels: ctx.clone(),
        });
    }
    if let Some(a) = &trace.column_attention {
        out.push(tj("column_attention", a));
    }
    out.push(tj("row_attention", &trace.row_attention));
    out
}

/// Runs `model` on the example alone in eval mode and returns its
/// heatmaps.
pub fn capture<F: Real>(
    model: &Model<F>,
    example: &Example,
    encoded: &BatchExample,
) -> Result<Vec<Heatmap>> {
    let batch = Batch::new(vec![encoded.clone()]);
    let out = model.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), true)?;
    let trace = out
        .traces
        .first()
        .ok_or_else(|| Error::Data("forward captured no attention".into()))?;
    Ok(heatmaps(trace, example, encoded))
}

pub fn write_csv(path: &Path, h: &Heatmap) -> Result<()> {
    let mut text = String::new();
    for r in 0..h.rows {
        let row: Vec<String> = (0..h.cols).map(|c| format!("{:?}", h.at(r, c))).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        let vals = vals.map_err(|e| Error::Parse {
            path: path.into(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        if *cols.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::Parse {
                path: path.into(),
                detail: format!("line {} has {} values", i + 1, vals.len()),
            });
        }
        data.extend(vals);
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), data))
}

/// 8-bit grayscale, min-max scaled; a constant matrix maps to black.
pub fn write_pgm(path: &Path, h: &Heatmap) -> Result<()> {
    let lo = h.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = h.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut bytes = format!("P5\n{} {}\n255\n", h.cols, h.rows).into_bytes();
    bytes.extend(h.data.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Two tab-separated lines: `rows` then `cols`, each followed by the
/// token labels.
pub fn write_labels(path: &Path, h: &Heatmap) -> Result<()> {
    let text = format!(
        "rows\t{}\ncols\t{}\n",
        h.row_labels.join("\t"),
        h.col_labels.join("\t")
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<name>.csv`, `<name>.pgm` and `<name>.labels.txt` per heatmap;
/// returns the CSV paths.
pub fn export(dir: &Path, maps: &[Heatmap]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for h in maps {
        let csv = dir.join(format!("{}.csv", h.name));
        write_csv(&csv, h)?;
        write_pgm(&dir.join(format!("{}.pgm", h.name)), h)?;
        write_labels(&dir.join(format!("{}.labels.txt", h.name)), h)?;
        written.push(csv);
    }
    Ok(written)
}

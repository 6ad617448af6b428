//! Embedding, character CNN, highway, linear and bidirectional GRU layers.
//!
//! Layers are plain parameter bundles; `forward` builds graph nodes that read
//! from the shared parameter leaves.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Named tensors of a layer, in a stable order.
pub type NamedTensors<F> = Vec<(String, Tensor<F>)>;

pub trait Module<F: Real> {
    /// Appends every tensor the layer owns (trainable or frozen) under
    /// `prefix`.
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform Glorot initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<F: Real>(
    rng: &mut impl Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<F: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::lit(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::param(data, shape).expect("valid shape")
}

fn zeros_param<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::param(vec![F::zero(); shape.iter().product()], shape).expect("valid shape")
}

/// Affine map on the last axis: `x·W + b`.
#[derive(Clone)]
pub struct Linear<F: Real> {
    pub w: Tensor<F>,
    pub b: Option<Tensor<F>>,
}

impl<F: Real> Linear<F> {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize, bias: bool) -> Self {
        Linear {
            w: glorot(rng, &[input, output], input, output),
            b: bias.then(|| zeros_param(&[1, output])),
        }
    }

    pub fn from_parts(w: Tensor<F>, b: Option<Tensor<F>>) -> Result<Self> {
        if w.rank() != 2 {
            return Err(Error::shape("linear", w.shape(), &[2]));
        }
        if let Some(b) = &b {
            if b.shape() != [1, w.dim(1)] {
                return Err(Error::shape("linear", w.shape(), b.shape()));
            }
        }
        Ok(Linear { w, b })
    }

    pub fn in_dim(&self) -> usize {
        self.w.dim(0)
    }

    pub fn out_dim(&self) -> usize {
        self.w.dim(1)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let last = *x.shape().last().expect("rank >= 1");
        if last != self.in_dim() {
            return Err(Error::shape("linear", x.shape(), self.w.shape()));
        }
        let flat = if x.rank() == 2 {
            x.clone()
        } else {
            x.reshape(&[x.numel() / last, last])?
        };
        let mut y = flat.matmul(&self.w)?;
        if let Some(b) = &self.b {
            y = y.add(b)?;
        }
        if x.rank() == 2 {
            Ok(y)
        } else {
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = self.out_dim();
            y.reshape(&shape)
        }
    }
}

impl<F: Real> Module<F> for Linear<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        out.push((join(prefix, "w"), self.w.clone()));
        if let Some(b) = &self.b {
            out.push((join(prefix, "b"), b.clone()));
        }
    }
}

/// Lookup table; row 0 is padding and always reads as zeros.
#[derive(Clone)]
pub struct EmbeddingTable<F: Real> {
    pub weights: Tensor<F>,
}

impl<F: Real> EmbeddingTable<F> {
    pub fn new(weights: Tensor<F>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::shape("embedding", weights.shape(), &[2]));
        }
        Ok(EmbeddingTable { weights })
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn dim(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn trainable(&self) -> bool {
        self.weights.requires_grad()
    }

    pub fn embed(&self, ids: &[usize]) -> Result<Tensor<F>> {
        let rows: Vec<Option<usize>> = ids.iter().map(|&i| (i != 0).then_some(i)).collect();
        self.weights.gather_rows(&rows)
    }
}

/// Reserved word ids.
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Frozen pretrained word vectors plus one trainable vector for unknown
/// words.
#[derive(Clone)]
pub struct WordEmbedding<F: Real> {
    pub table: EmbeddingTable<F>,
    pub unk: Tensor<F>,
}

impl<F: Real> WordEmbedding<F> {
    pub fn new(rng: &mut impl Rng, frozen: Tensor<F>) -> Result<Self> {
        if frozen.requires_grad() {
            return Err(Error::Usage("word table must be frozen".into()));
        }
        let dim = frozen.dim(1);
        Ok(WordEmbedding {
            table: EmbeddingTable::new(frozen)?,
            unk: uniform(rng, &[1, dim], 0.1),
        })
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    /// `T×dim` word vectors. Padding rows are zero, UNK rows come from the
    /// trainable vector.
    pub fn embed_words(&self, ids: &[usize]) -> Result<Tensor<F>> {
        let known = self.table.embed(ids)?;
        let unk_rows: Vec<Option<usize>> =
            ids.iter().map(|&i| (i == UNK_ID).then_some(0)).collect();
        if unk_rows.iter().all(Option::is_none) {
            return Ok(known);
        }
        known.add(&self.unk.gather_rows(&unk_rows)?)
    }
}

impl<F: Real> Module<F> for WordEmbedding<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        out.push((join(prefix, "table"), self.table.weights.clone()));
        out.push((join(prefix, "unk"), self.unk.clone()));
    }
}

/// Character CNN: embed characters, convolve with a fixed kernel width over
/// the padded character sequence, ReLU, max-pool over positions.
#[derive(Clone)]
pub struct CharCnn<F: Real> {
    pub table: EmbeddingTable<F>,
    pub conv: Linear<F>,
    pub kernel: usize,
}

impl<F: Real> CharCnn<F> {
    pub fn new(
        rng: &mut impl Rng,
        chars: usize,
        char_dim: usize,
        filters: usize,
        kernel: usize,
    ) -> Self {
        let weights = glorot::<F>(rng, &[chars, char_dim], chars, char_dim);
        for v in weights.data_mut()[..char_dim].iter_mut() {
            *v = F::zero();
        }
        CharCnn {
            table: EmbeddingTable { weights },
            conv: Linear::new(rng, kernel * char_dim, filters, true),
            kernel,
        }
    }

    pub fn filters(&self) -> usize {
        self.conv.out_dim()
    }

    /// `char_ids` holds one row of `W` character ids per word; returns
    /// `T×filters`.
    pub fn forward(&self, char_ids: &[Vec<usize>]) -> Result<Tensor<F>> {
        let words = char_ids.len();
        let width = char_ids.first().map_or(0, Vec::len);
        if words == 0 || char_ids.iter().any(|w| w.len() != width) {
            return Err(Error::Data(
                "char ids must be a non-empty rectangular array".into(),
            ));
        }
        if width < self.kernel {
            return Err(Error::Data(format!(
                "word width {width} shorter than kernel {}",
                self.kernel
            )));
        }
        let positions = width - self.kernel + 1;
        let mut rows = Vec::with_capacity(words * positions * self.kernel);
        for word in char_ids {
            for p in 0..positions {
                rows.extend(
                    word[p..p + self.kernel]
                        .iter()
                        .map(|&c| (c != 0).then_some(c)),
                );
            }
        }
        let dim = self.table.dim();
        let windows = self
            .table
            .weights
            .gather_rows(&rows)?
            .reshape(&[words * positions, self.kernel * dim])?;
        let conv = self
            .conv
            .forward(&windows)?
            .reshape(&[words, positions, self.filters()])?;
        // Windows past the end of a word are masked out; the first window
        // is always kept.
        let mut bias = Vec::with_capacity(words * positions);
        let mut any_masked = false;
        for word in char_ids {
            let len = word.iter().take_while(|&&c| c != 0).count();
            for p in 0..positions {
                let valid = p == 0 || p + self.kernel <= len;
                any_masked |= !valid;
                bias.push(if valid {
                    F::zero()
                } else {
                    F::lit(crate::attention::MASK_VALUE)
                });
            }
        }
        let conv = if any_masked {
            conv.add(&Tensor::new(bias, &[words, positions, 1])?)?
        } else {
            conv
        };
        // max-pool, then relu
        conv.max_reduce(1)?
            .reshape(&[words, self.filters()])
            .map(|t| t.relu())
    }
}

impl<F: Real> Module<F> for CharCnn<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        out.push((join(prefix, "table"), self.table.weights.clone()));
        self.conv.collect(&join(prefix, "conv"), out);
    }
}

/// One highway layer: `t = σ(x·W_t + b_t)`, `y = t∘relu(x·W_h + b_h) + (1−t)∘x`.
#[derive(Clone)]
pub struct HighwayLayer<F: Real> {
    pub transform: Linear<F>,
    pub gate: Linear<F>,
}

#[derive(Clone)]
pub struct Highway<F: Real> {
    pub layers: Vec<HighwayLayer<F>>,
}

impl<F: Real> Highway<F> {
    pub fn new(rng: &mut impl Rng, width: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|_| HighwayLayer {
                transform: Linear::new(rng, width, width, true),
                gate: Linear::new(rng, width, width, true),
            })
            .collect();
        Highway { layers }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut y = x.clone();
        for layer in &self.layers {
            let t = layer.gate.forward(&y)?.sigmoid();
            let h = layer.transform.forward(&y)?.relu();
            // t∘h + (1−t)∘y  ==  y + t∘(h − y)
            y = y.add(&t.mul(&h.sub(&y)?)?)?;
        }
        Ok(y)
    }
}

impl<F: Real> Module<F> for Highway<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.transform
                .collect(&join(prefix, &format!("{i}.transform")), out);
            l.gate.collect(&join(prefix, &format!("{i}.gate")), out);
        }
    }
}

/// Parameters of one GRU direction. Gate blocks along the `3h` axis are
/// `[update | reset | candidate]`.
#[derive(Clone)]
pub struct GruParams<F: Real> {
    pub w_ih: Tensor<F>,
    pub w_hh: Tensor<F>,
    pub b: Tensor<F>,
}

impl<F: Real> GruParams<F> {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let blocks = |rng: &mut _, rows: usize| {
            let parts: Vec<Tensor<F>> = (0..3)
                .map(|_| glorot(rng, &[rows, hidden], rows, hidden))
                .collect();
            Tensor::concat(&parts, 1).expect("equal rows").detach()
        };
        let w_ih = blocks(rng, input);
        let w_hh = blocks(rng, hidden);
        GruParams {
            w_ih: Tensor::param(w_ih.to_vec(), w_ih.shape()).unwrap(),
            w_hh: Tensor::param(w_hh.to_vec(), w_hh.shape()).unwrap(),
            b: zeros_param(&[1, 3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.dim(0)
    }

    pub fn input(&self) -> usize {
        self.w_ih.dim(0)
    }

    pub fn run(&self, x: &Tensor<F>, mask: &[bool], reverse: bool) -> Result<Tensor<F>> {
        if x.rank() != 2 || x.dim(1) != self.input() {
            return Err(Error::shape("gru", x.shape(), self.w_ih.shape()));
        }
        let xw = x.matmul(&self.w_ih)?.add(&self.b)?;
        Tensor::gru_scan(&xw, &self.w_hh, mask, reverse)
    }
}

impl<F: Real> Module<F> for GruParams<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        out.push((join(prefix, "w_ih"), self.w_ih.clone()));
        out.push((join(prefix, "w_hh"), self.w_hh.clone()));
        out.push((join(prefix, "b"), self.b.clone()));
    }
}

/// Bidirectional GRU producing `[forward; backward]` states per position.
#[derive(Clone)]
pub struct BiGru<F: Real> {
    pub forward: GruParams<F>,
    pub backward: GruParams<F>,
}

impl<F: Real> BiGru<F> {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        BiGru {
            forward: GruParams::new(rng, input, hidden),
            backward: GruParams::new(rng, input, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden()
    }

    /// `x` is `T×in`; `mask[t]` is false for padding. Returns `T×2h`.
    pub fn run(&self, x: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        let f = self.forward.run(x, mask, false)?;
        let b = self.backward.run(x, mask, true)?;
        Tensor::concat(&[f, b], 1)
    }
}

impl<F: Real> Module<F> for BiGru<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        self.forward.collect(&join(prefix, "fwd"), out);
        self.backward.collect(&join(prefix, "bwd"), out);
    }
}

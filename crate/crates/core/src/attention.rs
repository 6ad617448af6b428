//! Context/query attention: trilinear similarity, coarse-grained query
//! decomposition, vanilla and fine-grained Query2Context, Context2Query and
//! the final fusion into `G`.
//!
//! Shapes use `T` context positions, `J` query positions and encoder width
//! `2d`. Padding is removed from every softmax by adding [`MASK_VALUE`] to
//! the masked rows and columns of the similarity matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{glorot, Module, NamedTensors};
use crate::tensor::{Real, Tensor};

/// Additive bias for padded similarity entries.
pub const MASK_VALUE: f64 = -1e30;

/// Linear terms of the similarity: `S = H·w_h + (U·w_u)ᵀ + H·Uᵀ`.
#[derive(Clone)]
pub struct SimilarityParams<F: Real> {
    pub w_h: Tensor<F>,
    pub w_u: Tensor<F>,
}

impl<F: Real> SimilarityParams<F> {
    pub fn new(rng: &mut impl Rng, width: usize) -> Self {
        SimilarityParams {
            w_h: glorot(rng, &[width, 1], width, 1),
            w_u: glorot(rng, &[width, 1], width, 1),
        }
    }

    pub fn width(&self) -> usize {
        self.w_h.dim(0)
    }
}

impl<F: Real> Module<F> for SimilarityParams<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        out.push((format!("{prefix}.w_h"), self.w_h.clone()));
        out.push((format!("{prefix}.w_u"), self.w_u.clone()));
    }
}

/// Projection of `[U; Q̃; U∘Q̃]` (`6d` wide) back to `2d` per query word.
#[derive(Clone)]
pub struct FusionParams<F: Real> {
    pub w_s: Tensor<F>,
}

impl<F: Real> FusionParams<F> {
    pub fn new(rng: &mut impl Rng, width: usize) -> Self {
        FusionParams {
            w_s: glorot(rng, &[3 * width, width], 3 * width, width),
        }
    }
}

impl<F: Real> Module<F> for FusionParams<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        out.push((format!("{prefix}.w_s"), self.w_s.clone()));
    }
}

/// `T×J` additive mask: zero where both positions are real.
pub fn mask_bias<F: Real>(ctx_mask: &[bool], q_mask: &[bool]) -> Option<Tensor<F>> {
    if ctx_mask.iter().chain(q_mask).all(|&m| m) {
        return None;
    }
    let masked = F::lit(MASK_VALUE);
    let data = ctx_mask
        .iter()
        .flat_map(|&c| {
            q_mask
                .iter()
                .map(move |&q| if c && q { F::zero() } else { masked })
        })
        .collect();
    Some(Tensor::new(data, &[ctx_mask.len(), q_mask.len()]).expect("mask shape"))
}

fn check_rows<F: Real>(op: &'static str, rows: &Tensor<F>, width: usize) -> Result<()> {
    if rows.rank() != 2 || rows.dim(1) != width {
        return Err(Error::shape(op, rows.shape(), &[width]));
    }
    Ok(())
}

/// Similarity matrix `S ∈ R^{T×J}` between context `H` and query `U`.
pub fn similarity<F: Real>(
    h: &Tensor<F>,
    u: &Tensor<F>,
    p: &SimilarityParams<F>,
    ctx_mask: &[bool],
    q_mask: &[bool],
) -> Result<Tensor<F>> {
    check_rows("similarity", h, p.width())?;
    check_rows("similarity", u, p.width())?;
    if ctx_mask.len() != h.dim(0) || q_mask.len() != u.dim(0) {
        return Err(Error::shape("similarity", h.shape(), u.shape()));
    }
    let h_term = h.matmul(&p.w_h)?;
    let u_term = u.matmul(&p.w_u)?.t()?;
    let bilinear = h.matmul(&u.t()?)?;
    let s = h_term.add(&u_term)?.add(&bilinear)?;
    match mask_bias(ctx_mask, q_mask) {
        Some(bias) => s.add(&bias),
        None => Ok(s),
    }
}

pub struct Decomposition<F: Real> {
    /// Fused query `Q̄` (`J×2d`).
    pub query: Tensor<F>,
    /// Per-query-word attention over the context (`J×T`, rows sum to 1).
    pub attention: Tensor<F>,
    /// Attended context vectors `Q̃` (`J×2d`).
    pub attended: Tensor<F>,
}

/// Coarse-grained decomposition: each query word attends over the context
/// and the attended vectors are fused back into the query.
pub fn cgde<F: Real>(
    h: &Tensor<F>,
    u: &Tensor<F>,
    s: &Tensor<F>,
    f: &FusionParams<F>,
) -> Result<Decomposition<F>> {
    if s.shape() != [h.dim(0), u.dim(0)] || h.dim(1) != u.dim(1) {
        return Err(Error::shape("cgde", s.shape(), &[h.dim(0), u.dim(0)]));
    }
    if f.w_s.shape() != [3 * u.dim(1), u.dim(1)] {
        return Err(Error::shape("cgde", f.w_s.shape(), u.shape()));
    }
    let attention = s.t()?.softmax(1)?;
    let attended = attention.matmul(h)?;
    let fused_in = Tensor::concat(&[u.clone(), attended.clone(), u.mul(&attended)?], 1)?;
    let query = fused_in.matmul(&f.w_s)?;
    Ok(Decomposition {
        query,
        attention,
        attended,
    })
}

/// Bi-DAF Query2Context: softmax over the row-wise similarity maxima, one
/// attended context vector, tiled `T` times.
pub fn vanilla_q2c<F: Real>(h: &Tensor<F>, s: &Tensor<F>) -> Result<Tensor<F>> {
    if s.rank() != 2 || s.dim(0) != h.dim(0) {
        return Err(Error::shape("vanilla_q2c", s.shape(), h.shape()));
    }
    let weights = s.max_reduce(1)?.softmax(0)?;
    let attended = weights.t()?.matmul(h)?;
    Tensor::ones(&[h.dim(0), 1]).matmul(&attended)
}

pub struct FineGrained<F: Real> {
    /// `Ū` (`T×2d`).
    pub output: Tensor<F>,
    /// Column-wise softmax of `S̄` (`T×J`, columns sum to 1).
    pub attention: Tensor<F>,
}

/// Fine-grained Query2Context: softmax down each column of `S̄`, weight
/// the context by every column and sum the `J` weighted copies.
pub fn fgin_q2c<F: Real>(
    h: &Tensor<F>,
    s_bar: &Tensor<F>,
    q_mask: &[bool],
) -> Result<FineGrained<F>> {
    if s_bar.rank() != 2 || s_bar.dim(0) != h.dim(0) || q_mask.len() != s_bar.dim(1) {
        return Err(Error::shape("fgin_q2c", s_bar.shape(), h.shape()));
    }
    let attention = s_bar.softmax(0)?;
    let live = if q_mask.iter().all(|&m| m) {
        attention.clone()
    } else {
        let keep: Vec<F> = q_mask
            .iter()
            .map(|&m| if m { F::one() } else { F::zero() })
            .collect();
        attention.mul(&Tensor::new(keep, &[1, q_mask.len()])?)?
    };
    // Σ_j ā_{:j} ∘ H  ==  (Σ_j ā_{:j}) ∘ H
    let output = live.sum_axis(1)?.mul(h)?;
    Ok(FineGrained { output, attention })
}

pub struct Attended<F: Real> {
    /// `Ũ` (`T×2d`).
    pub output: Tensor<F>,
    /// Row-wise softmax of `S̄` (`T×J`, rows sum to 1).
    pub attention: Tensor<F>,
}

/// Context2Query: each context word attends over the query rows.
pub fn context2query<F: Real>(query: &Tensor<F>, s_bar: &Tensor<F>) -> Result<Attended<F>> {
    if s_bar.rank() != 2 || s_bar.dim(1) != query.dim(0) {
        return Err(Error::shape("context2query", s_bar.shape(), query.shape()));
    }
    let attention = s_bar.softmax(1)?;
    let output = attention.matmul(query)?;
    Ok(Attended { output, attention })
}

/// Which four-block fusion builds `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    /// `[h; ũ; h∘ū; ū∘ũ]`: the last two blocks interact `ū` with both
    /// the context and the attended query.
    Interaction,
    /// `[h; ũ; h∘ũ; h∘ū]`
    Bidaf,
}

/// Per-position fusion of context, Context2Query and Query2Context
/// outputs into `G` (`T×8d`).
pub fn fuse_g<F: Real>(
    h: &Tensor<F>,
    c2q: &Tensor<F>,
    q2c: &Tensor<F>,
    variant: FusionVariant,
) -> Result<Tensor<F>> {
    if h.shape() != c2q.shape() || h.shape() != q2c.shape() {
        return Err(Error::shape(
            "fuse_g",
            h.shape(),
            if h.shape() != c2q.shape() {
                c2q.shape()
            } else {
                q2c.shape()
            },
        ));
    }
    let parts = match variant {
        FusionVariant::Interaction => [h.clone(), c2q.clone(), h.mul(q2c)?, q2c.mul(c2q)?],
        FusionVariant::Bidaf => [h.clone(), c2q.clone(), h.mul(c2q)?, h.mul(q2c)?],
    };
    Tensor::concat(&parts, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum C2qSource {
    /// Attend over the fused query `Q̄`, the rows `S̄` was computed against.
    Decomposed,
    /// Attend over the encoder output `U`.
    Original,
}

/// Matrices captured from one forward pass of [`AttentionFlow`].
#[derive(Clone)]
pub struct AttentionTrace<F: Real> {
    pub s: Tensor<F>,
    /// Query-direction attention over the context (`J×T`); absent without
    /// decomposition.
    pub query_attention: Option<Tensor<F>>,
    pub q_bar: Tensor<F>,
    pub s_bar: Tensor<F>,
    /// Column softmax of `S̄`; absent for the vanilla Query2Context.
    pub column_attention: Option<Tensor<F>>,
    pub row_attention: Tensor<F>,
    pub u_bar: Tensor<F>,
    pub u_tilde: Tensor<F>,
    pub g: Tensor<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowOptions {
    pub use_cgde: bool,
    pub use_fgin: bool,
    pub c2q_source: C2qSource,
    pub fusion: FusionVariant,
}

/// The full attention block from encoder outputs to `G`.
#[derive(Clone)]
pub struct AttentionFlow<F: Real> {
    pub sim: SimilarityParams<F>,
    /// Linear term for the fused query in the second similarity.
    pub w_qbar: Tensor<F>,
    pub fusion: FusionParams<F>,
}

pub struct FlowOutput<F: Real> {
    pub g: Tensor<F>,
    pub q_bar: Tensor<F>,
    pub trace: Option<AttentionTrace<F>>,
}

impl<F: Real> AttentionFlow<F> {
    pub fn new(rng: &mut impl Rng, width: usize) -> Self {
        AttentionFlow {
            sim: SimilarityParams::new(rng, width),
            w_qbar: glorot(rng, &[width, 1], width, 1),
            fusion: FusionParams::new(rng, width),
        }
    }

    pub fn forward(
        &self,
        h: &Tensor<F>,
        u: &Tensor<F>,
        ctx_mask: &[bool],
        q_mask: &[bool],
        opts: &FlowOptions,
        capture: bool,
    ) -> Result<FlowOutput<F>> {
        let s = similarity(h, u, &self.sim, ctx_mask, q_mask)?;
        let (q_bar, s_bar, query_attention) = if opts.use_cgde {
            let dec = cgde(h, u, &s, &self.fusion)?;
            let second = SimilarityParams {
                w_h: self.sim.w_h.clone(),
                w_u: self.w_qbar.clone(),
            };
            let s_bar = similarity(h, &dec.query, &second, ctx_mask, q_mask)?;
            (dec.query, s_bar, Some(dec.attention))
        } else {
            (u.clone(), s.clone(), None)
        };

        let (u_bar, column_attention) = if opts.use_fgin {
            let fg = fgin_q2c(h, &s_bar, q_mask)?;
            (fg.output, Some(fg.attention))
        } else {
            (vanilla_q2c(h, &s_bar)?, None)
        };
        let c2q_rows = match opts.c2q_source {
            C2qSource::Decomposed => &q_bar,
            C2qSource::Original => u,
        };
        let c2q = context2query(c2q_rows, &s_bar)?;
        let g = fuse_g(h, &c2q.output, &u_bar, opts.fusion)?;

        let trace = capture.then(|| AttentionTrace {
            s: s.detach(),
            query_attention: query_attention.as_ref().map(Tensor::detach),
            q_bar: q_bar.detach(),
            s_bar: s_bar.detach(),
            column_attention: column_attention.as_ref().map(Tensor::detach),
            row_attention: c2q.attention.detach(),
            u_bar: u_bar.detach(),
            u_tilde: c2q.output.detach(),
            g: g.detach(),
        });
        Ok(FlowOutput { g, q_bar, trace })
    }
}

impl<F: Real> Module<F> for AttentionFlow<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        self.sim.collect(&format!("{prefix}.sim"), out);
        out.push((format!("{prefix}.w_qbar"), self.w_qbar.clone()));
        self.fusion.collect(&format!("{prefix}.fusion"), out);
    }
}

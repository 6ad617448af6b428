use super::ModelOutputs;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Real, Reduction, Tensor};

/// The four loss components and their weighted total.
pub struct LossParts<F: Real> {
    pub answer_type: Tensor<F>,
    pub start: Tensor<F>,
    pub end: Tensor<F>,
    /// Absent when no example in the batch carries sentence supervision.
    pub sup: Option<Tensor<F>>,
    pub total: Tensor<F>,
}

/// `λa·(type + start + end) + λs·sup`.
pub fn combine_losses<F: Real>(
    answer_type: &Tensor<F>,
    start: &Tensor<F>,
    end: &Tensor<F>,
    sup: Option<&Tensor<F>>,
    lambda_a: f64,
    lambda_s: f64,
) -> Result<Tensor<F>> {
    let answer = answer_type.add(start)?.add(end)?.scale(F::lit(lambda_a));
    match sup {
        Some(s) => answer.add(&s.scale(F::lit(lambda_s))),
        None => Ok(answer),
    }
}

/// Sum-reduced cross-entropy for the type, start and end heads and
/// mean-reduced binary cross-entropy over the real sentences of examples
/// with sentence supervision. Span targets are masked for yes/no answers
/// and for spans that could not be located.
pub fn joint_loss<F: Real>(
    out: &ModelOutputs<F>,
    batch: &Batch,
    lambda_a: f64,
    lambda_s: f64,
) -> Result<LossParts<F>> {
    let n = batch.len();
    if out.type_logits.dim(0) != n || out.start_logits.dim(0) != n || out.sup_logits.dim(0) != n {
        return Err(Error::shape("joint_loss", out.type_logits.shape(), &[n]));
    }
    let mut types = Vec::with_capacity(n);
    let mut starts = Vec::with_capacity(n);
    let mut ends = Vec::with_capacity(n);
    let width = out.sup_logits.dim(1);
    let mut sup = vec![None; n * width];
    for (i, ex) in batch.examples.iter().enumerate() {
        let t = ex
            .answer_type
            .ok_or_else(|| Error::Usage(format!("{}: example has no answer label", ex.id)))?;
        types.push(Some(t));
        starts.push(ex.span.map(|s| s.0));
        ends.push(ex.span.map(|s| s.1));
        if ex.has_sup {
            for (k, &l) in ex.sup_labels.iter().enumerate() {
                sup[i * width + k] = Some(if l { F::one() } else { F::zero() });
            }
        }
    }
    let answer_type = out.type_logits.cross_entropy(&types, Reduction::Sum)?;
    let start = out.start_logits.cross_entropy(&starts, Reduction::Sum)?;
    let end = out.end_logits.cross_entropy(&ends, Reduction::Sum)?;
    let sup = if sup.iter().any(Option::is_some) {
        Some(out.sup_logits.binary_cross_entropy(&sup, Reduction::Mean)?)
    } else {
        None
    };
    let total = combine_losses(&answer_type, &start, &end, sup.as_ref(), lambda_a, lambda_s)?;
    Ok(LossParts {
        answer_type,
        start,
        end,
        sup,
        total,
    })
}

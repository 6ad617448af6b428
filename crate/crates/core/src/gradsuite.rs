//! Finite-difference checks of every primitive op and of the full joint
//! loss, in `f32` (against an `f64` reference) and in `f64`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::MASK_VALUE;
use crate::data::batch::{encode_all, BatchOptions};
use crate::data::hotpot::{records_to_examples, HotpotRecord};
use crate::data::vocab::{PAD, UNK};
use crate::data::{Batch, Vocab};
use crate::error::{Error, Result};
use crate::layers::uniform;
use crate::model::{joint_loss, Mode, Model, ModelConfig};
use crate::tensor::{
    grad_check, grad_check_against, GradCheckOptions, GradReport, Real, Reduction, Tensor,
};

pub const F32_TOLERANCE: f64 = 1e-3;
pub const F64_TOLERANCE: f64 = 1e-6;
/// Relative-error denominator floor for the `f32` runs.
pub const F32_FLOOR: f64 = 1e-4;
/// Upper bound on `context × question × d`.
pub const MAX_DIMS_PRODUCT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteDims {
    pub context: usize,
    pub question: usize,
    pub d: usize,
    pub sentences: usize,
    pub vocab: usize,
}

impl Default for SuiteDims {
    fn default() -> Self {
        SuiteDims {
            context: 7,
            question: 5,
            d: 4,
            sentences: 2,
            vocab: 20,
        }
    }
}

impl SuiteDims {
    pub fn validate(&self) -> Result<()> {
        let product = self.context * self.question * self.d;
        if product == 0 || self.sentences == 0 || self.sentences > self.context || self.vocab < 3 {
            return Err(Error::Usage(format!("invalid gradcheck dims {self:?}")));
        }
        if product > MAX_DIMS_PRODUCT {
            return Err(Error::Usage(format!(
                "gradcheck dims too large: context·question·d = {product} exceeds {MAX_DIMS_PRODUCT}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub f32_error: f64,
    pub f64_error: f64,
    /// Samples compared in the `f64` run.
    pub samples: usize,
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub dims: SuiteDims,
    pub rows: Vec<SuiteRow>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn worst_f32(&self) -> f64 {
        self.rows.iter().map(|r| r.f32_error).fold(0.0, f64::max)
    }

    pub fn worst_f64(&self) -> f64 {
        self.rows.iter().map(|r| r.f64_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.samples > 0)
            && self.worst_f32() < F32_TOLERANCE
            && self.worst_f64() < F64_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Matmul,
    Transpose,
    Add,
    AddBroadcast,
    Sub,
    Mul,
    Scale,
    Sigmoid,
    Tanh,
    Relu,
    SoftmaxRows,
    SoftmaxCols,
    MaskedSoftmax,
    MaxReduce,
    SumAxis,
    Sum,
    Mean,
    Concat,
    Narrow,
    Reshape,
    GatherRows,
    Dropout,
    CrossEntropy,
    BinaryCrossEntropy,
    GruForward,
    GruReverse,
}

const CASES: [Case; 26] = [
    Case::Matmul,
    Case::Transpose,
    Case::Add,
    Case::AddBroadcast,
    Case::Sub,
    Case::Mul,
    Case::Scale,
    Case::Sigmoid,
    Case::Tanh,
    Case::Relu,
    Case::SoftmaxRows,
    Case::SoftmaxCols,
    Case::MaskedSoftmax,
    Case::MaxReduce,
    Case::SumAxis,
    Case::Sum,
    Case::Mean,
    Case::Concat,
    Case::Narrow,
    Case::Reshape,
    Case::GatherRows,
    Case::Dropout,
    Case::CrossEntropy,
    Case::BinaryCrossEntropy,
    Case::GruForward,
    Case::GruReverse,
];

impl Case {
    fn name(self) -> String {
        let s = format!("{self:?}");
        let mut out = String::new();
        for (i, c) in s.chars().enumerate() {
            if c.is_uppercase() && i > 0 {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        }
        out
    }

    fn shapes(self, d: &SuiteDims) -> Vec<Vec<usize>> {
        let (t, j, h) = (d.context, d.question, d.d);
        match self {
            Case::Matmul => vec![vec![t, h], vec![h, j]],
            Case::Add | Case::Sub | Case::Mul => vec![vec![t, h], vec![t, h]],
            Case::AddBroadcast => vec![vec![t, h], vec![1, h]],
            Case::Concat => vec![vec![t, h], vec![t, j]],
            Case::GatherRows => vec![vec![d.vocab, h]],
            Case::GruForward | Case::GruReverse => vec![vec![t, 3 * h], vec![h, 3 * h]],
            _ => vec![vec![t, j]],
        }
    }

    fn eval<R: Real>(self, x: &[Tensor<R>], d: &SuiteDims) -> Result<Tensor<R>> {
        let (t, j) = (d.context, d.question);
        let out = match self {
            Case::Matmul => x[0].matmul(&x[1])?,
            Case::Transpose => x[0].t()?,
            Case::Add | Case::AddBroadcast => x[0].add(&x[1])?,
            Case::Sub => x[0].sub(&x[1])?,
            Case::Mul => x[0].mul(&x[1])?,
            Case::Scale => x[0].scale(R::lit(-1.7)),
            Case::Sigmoid => x[0].sigmoid(),
            Case::Tanh => x[0].tanh(),
            Case::Relu => x[0].relu(),
            Case::SoftmaxRows => x[0].softmax(1)?,
            Case::SoftmaxCols => x[0].softmax(0)?,
            Case::MaskedSoftmax => {
                let bias: Vec<R> = (0..t * j)
                    .map(|k| {
                        if k % j == j - 1 && j > 1 {
                            R::lit(MASK_VALUE)
                        } else {
                            R::zero()
                        }
                    })
                    .collect();
                x[0].add(&Tensor::new(bias, &[t, j])?)?.softmax(1)?
            }
            Case::MaxReduce => x[0].max_reduce(1)?,
            Case::SumAxis => x[0].sum_axis(0)?,
            Case::Sum => x[0].sum(),
            Case::Mean => x[0].mean(),
            Case::Concat => Tensor::concat(&[x[0].clone(), x[1].clone()], 1)?,
            Case::Narrow => x[0].narrow(1, j / 2, j - j / 2)?,
            Case::Reshape => x[0].reshape(&[j, t])?,
            Case::GatherRows => {
                let rows: Vec<Option<usize>> = (0..t)
                    .map(|k| (k % 3 != 2).then_some((k * 7 + 1) % d.vocab))
                    .collect();
                x[0].gather_rows(&rows)?
            }
            Case::Dropout => x[0].dropout(0.3, true, &mut ChaCha8Rng::seed_from_u64(5))?,
            Case::CrossEntropy => {
                let targets: Vec<Option<usize>> =
                    (0..t).map(|k| (k != 1).then_some(k % j)).collect();
                return x[0].cross_entropy(&targets, Reduction::Mean);
            }
            Case::BinaryCrossEntropy => {
                let targets: Vec<Option<R>> = (0..t * j)
                    .map(|k| (k % 4 != 3).then(|| if k % 3 == 0 { R::one() } else { R::zero() }))
                    .collect();
                return x[0].binary_cross_entropy(&targets, Reduction::Sum);
            }
            Case::GruForward | Case::GruReverse => {
                let mask: Vec<bool> = (0..t).map(|k| k + 1 < t || t == 1).collect();
                Tensor::gru_scan(&x[0], &x[1], &mask, self == Case::GruReverse)?
            }
        };
        project(&out)
    }

    fn input(self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                if self == Case::Relu {
                    let m = rng.gen_range(0.1..1.0);
                    if rng.gen_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect()
    }
}

/// `Σ out ∘ W` for a fixed pseudo-random `W`, so every output element
/// carries a distinct weight.
fn project<R: Real>(out: &Tensor<R>) -> Result<Tensor<R>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w: Vec<R> = (0..out.numel())
        .map(|_| R::lit(rng.gen_range(-1.0..1.0)))
        .collect();
    Ok(out.mul(&Tensor::new(w, out.shape())?)?.sum())
}

fn single(opts: GradCheckOptions) -> GradCheckOptions {
    GradCheckOptions {
        floor: F32_FLOOR,
        ..opts
    }
}

fn op_options() -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-4,
        richardson: true,
        max_coords: 12,
        ..Default::default()
    }
}

fn model_options() -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-4,
        richardson: true,
        directions: 3,
        ..Default::default()
    }
}

type Named<R> = Vec<(String, Tensor<R>)>;

fn run_op(case: Case, dims: &SuiteDims, seed: u64) -> Result<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p32: Named<f32> = Vec::new();
    let mut p64: Named<f64> = Vec::new();
    for (k, shape) in case.shapes(dims).into_iter().enumerate() {
        let vals = case.input(&mut rng, shape.iter().product());
        let single: Vec<f32> = vals.iter().map(|&v| v as f32).collect();
        let double: Vec<f64> = single.iter().map(|&v| v as f64).collect();
        p32.push((format!("x{k}"), Tensor::param(single, &shape)?));
        p64.push((format!("x{k}"), Tensor::param(double, &shape)?));
    }
    let x32: Vec<_> = p32.iter().map(|(_, t)| t.clone()).collect();
    let x64: Vec<_> = p64.iter().map(|(_, t)| t.clone()).collect();
    let r32 = grad_check_against(
        &p32,
        || case.eval(&x32, dims),
        &p64,
        || case.eval(&x64, dims),
        &single(op_options()),
    )?;
    let r64 = grad_check(&p64, || case.eval(&x64, dims), &op_options())?;
    Ok(row(case.name(), &r32, &r64))
}

fn row(name: String, r32: &GradReport, r64: &GradReport) -> SuiteRow {
    SuiteRow {
        name,
        f32_error: r32.max_rel_error(),
        f64_error: r64.max_rel_error(),
        samples: if r64.params.iter().all(|p| !p.samples.is_empty()) {
            r64.samples()
        } else {
            0
        },
        kinks: r64.kinks(),
    }
}

/// Two-example batch at exactly the requested sizes, with a vocabulary of
/// `dims.vocab` entries.
pub fn suite_batch(dims: &SuiteDims, seed: u64) -> Result<(Vocab, Batch)> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..dims.vocab - 2).map(|k| format!("w{k}")).collect();
    let mut pick = |n: usize| -> Vec<String> {
        (0..n)
            .map(|_| words[rng.gen_range(0..words.len())].clone())
            .collect()
    };
    let mut records = Vec::new();
    for e in 0..2 {
        let question = pick(dims.question).join(" ");
        let base = dims.context / dims.sentences;
        let mut context = Vec::new();
        for s in 0..dims.sentences {
            let len = base + usize::from(s < dims.context % dims.sentences);
            context.push((format!("Doc{s}"), vec![pick(len).join(" ")]));
        }
        let answer = context[0].1[0].split(' ').next_back().map(str::to_string);
        records.push(HotpotRecord {
            id: format!("g{e}"),
            question,
            answer,
            context,
            supporting_facts: vec![("Doc0".into(), 0)],
            kind: None,
            level: None,
        });
    }
    let (examples, _) = records_to_examples(&records);
    let mut chars: Vec<char> = vec!['\0', '\u{1}', 'w'];
    chars.extend('0'..='9');
    let vocab = Vocab::from_parts(
        [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(words.iter().cloned())
            .collect(),
        chars,
        vec![1; dims.vocab],
    );
    let opts = BatchOptions {
        max_word_len: 4,
        ..Default::default()
    };
    let (enc, _) = encode_all(&examples, &vocab, &opts);
    let batch = Batch::new(enc);
    if batch.max_context != dims.context
        || batch.max_question != dims.question
        || batch.max_sentences != dims.sentences
    {
        return Err(Error::Data(format!(
            "gradcheck batch came out {}×{}×{}",
            batch.max_context, batch.max_question, batch.max_sentences
        )));
    }
    Ok((vocab, batch))
}

fn model_config(dims: &SuiteDims) -> ModelConfig {
    ModelConfig {
        d: dims.d,
        dropout: 0.0,
        char_dim: 3,
        char_filters: 4,
        char_kernel: 2,
        ..Default::default()
    }
}

fn run_model(dims: &SuiteDims, seed: u64) -> Result<SuiteRow> {
    let (vocab, batch) = suite_batch(dims, seed)?;
    let cfg = model_config(dims);
    let (la, ls) = (cfg.lambda_a, cfg.lambda_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let table = uniform::<f64>(&mut rng, &[vocab.n_words(), 6], 0.5).detach();
    let m64 = Model::<f64>::new(cfg.clone(), table, vocab.n_chars(), &mut rng)?;
    let m32 = Model::<f32>::new(
        cfg,
        Tensor::zeros(&[vocab.n_words(), 6]),
        vocab.n_chars(),
        &mut rng,
    )?;
    // The f32 model holds the f64 values rounded; the reference then
    // takes those rounded values back.
    m32.copy_from(&m64.named_tensors())?;
    m64.copy_from(&m32.named_tensors())?;
    let loss64 = || {
        let out = m64.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        Ok(joint_loss(&out, &batch, la, ls)?.total)
    };
    let loss32 = || {
        let out = m32.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        Ok(joint_loss(&out, &batch, la, ls)?.total)
    };
    let r32 = grad_check_against(
        &m32.parameters(),
        loss32,
        &m64.parameters(),
        loss64,
        &single(model_options()),
    )?;
    let r64 = grad_check(&m64.parameters(), loss64, &model_options())?;
    Ok(row("joint_loss".into(), &r32, &r64))
}

/// Every primitive op, then the full model's joint loss.
pub fn run_suite(dims: &SuiteDims, seed: u64) -> Result<SuiteReport> {
    dims.validate()?;
    let started = Instant::now();
    let mut rows = Vec::with_capacity(CASES.len() + 1);
    for (k, case) in CASES.iter().enumerate() {
        rows.push(run_op(*case, dims, seed.wrapping_add(k as u64))?);
    }
    rows.push(run_model(dims, seed)?);
    Ok(SuiteReport {
        dims: *dims,
        rows,
        seconds: started.elapsed().as_secs_f64(),
    })
}

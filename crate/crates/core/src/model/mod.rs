//! The full reader: embeddings, contextual encoder, attention flow,
//! modeling layer with self-attention and the cascaded prediction heads.

mod config;
mod decode;
mod loss;

pub use config::ModelConfig;
pub use decode::{best_span, decode, decode_batch, Prediction, PredictionDump};
pub use loss::{combine_losses, joint_loss, LossParts};

use rand::Rng;

use crate::attention::{AttentionFlow, AttentionTrace, SimilarityParams, MASK_VALUE};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::layers::{BiGru, CharCnn, Highway, Linear, Module, NamedTensors, WordEmbedding};
use crate::tensor::{Checkpoint, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct ModelOutputs<F: Real> {
    /// `batch×3`
    pub type_logits: Tensor<F>,
    /// `batch×T`, padding at [`MASK_VALUE`].
    pub start_logits: Tensor<F>,
    pub end_logits: Tensor<F>,
    /// `batch×max_sentences`, padding at [`MASK_VALUE`].
    pub sup_logits: Tensor<F>,
    /// One entry per example when capture was requested.
    pub traces: Vec<AttentionTrace<F>>,
}

/// Per-example head outputs before batching.
pub struct HeadOutputs<F: Real> {
    pub type_logits: Tensor<F>,
    pub start_logits: Tensor<F>,
    pub end_logits: Tensor<F>,
    pub sup_logits: Tensor<F>,
}

#[derive(Clone)]
pub struct SelfAttention<F: Real> {
    pub sim: SimilarityParams<F>,
    pub proj: Linear<F>,
}

impl<F: Real> Module<F> for SelfAttention<F> {
    fn collect(&self, prefix: &str, out: &mut NamedTensors<F>) {
        self.sim.collect(&format!("{prefix}.sim"), out);
        self.proj.collect(&format!("{prefix}.proj"), out);
    }
}

impl<F: Real> SelfAttention<F> {
    pub fn new(rng: &mut impl Rng, width: usize) -> Self {
        SelfAttention {
            sim: SimilarityParams::new(rng, width),
            proj: Linear::new(rng, 3 * width, width, true),
        }
    }

    /// Context-to-context attention over `m` (`T×2d`): row softmax of the
    /// trilinear similarity, fused as `[m; a; m∘a]`, projected back to `2d`
    /// and added to `m`.
    pub fn forward(&self, m: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        let s = crate::attention::similarity(m, m, &self.sim, mask, mask)?;
        let att = s.softmax(1)?;
        let a = att.matmul(m)?;
        let fused = Tensor::concat(&[m.clone(), a.clone(), m.mul(&a)?], 1)?;
        m.add(&self.proj.forward(&fused)?.relu())
    }
}

#[derive(Clone)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub word: WordEmbedding<F>,
    pub chars: CharCnn<F>,
    pub proj: Linear<F>,
    pub highway: Highway<F>,
    pub encoder: BiGru<F>,
    pub flow: AttentionFlow<F>,
    pub modeling: BiGru<F>,
    pub self_att: SelfAttention<F>,
    pub sup_rnn: BiGru<F>,
    pub sup_out: Linear<F>,
    pub start_rnn: BiGru<F>,
    pub start_out: Linear<F>,
    pub end_rnn: BiGru<F>,
    pub end_out: Linear<F>,
    pub type_rnn: BiGru<F>,
    pub type_out: Linear<F>,
}

fn row_bias<F: Real>(mask: &[bool]) -> Option<Tensor<F>> {
    if mask.iter().all(|&m| m) {
        return None;
    }
    let data = mask
        .iter()
        .map(|&m| if m { F::zero() } else { F::lit(MASK_VALUE) })
        .collect();
    Some(Tensor::new(data, &[1, mask.len()]).expect("mask shape"))
}

fn masked_row<F: Real>(logits: Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
    let row = logits.reshape(&[1, logits.numel()])?;
    match row_bias(mask) {
        Some(b) => row.add(&b),
        None => Ok(row),
    }
}

impl<F: Real> Model<F> {
    /// `word_table` is the frozen `n_words × word_dim` embedding.
    pub fn new(
        config: ModelConfig,
        word_table: Tensor<F>,
        n_chars: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let h2 = 2 * d;
        let word = WordEmbedding::new(rng, word_table)?;
        let chars = CharCnn::new(
            rng,
            n_chars.max(2),
            config.char_dim,
            config.char_filters,
            config.char_kernel,
        );
        let proj = Linear::new(rng, word.dim() + config.char_filters, d, true);
        let highway = Highway::new(rng, d, config.highway_layers);
        let encoder = BiGru::new(rng, d, d);
        let flow = AttentionFlow::new(rng, h2);
        let modeling = BiGru::new(rng, 4 * h2, d);
        let self_att = SelfAttention::new(rng, h2);
        let r = 5 * h2;
        Ok(Model {
            word,
            chars,
            proj,
            highway,
            encoder,
            flow,
            modeling,
            self_att,
            sup_rnn: BiGru::new(rng, r, d),
            sup_out: Linear::new(rng, 2 * h2, 1, true),
            start_rnn: BiGru::new(rng, r + h2, d),
            start_out: Linear::new(rng, h2, 1, true),
            end_rnn: BiGru::new(rng, r + h2, d),
            end_out: Linear::new(rng, h2, 1, true),
            type_rnn: BiGru::new(rng, r + h2, d),
            type_out: Linear::new(rng, h2, 3, true),
            config,
        })
    }

    /// Every tensor owned by the model, frozen ones included, in a stable
    /// order.
    pub fn named_tensors(&self) -> NamedTensors<F> {
        let mut out = Vec::new();
        self.word.collect("word", &mut out);
        self.chars.collect("char", &mut out);
        self.proj.collect("proj", &mut out);
        self.highway.collect("highway", &mut out);
        self.encoder.collect("encoder", &mut out);
        self.flow.collect("flow", &mut out);
        self.modeling.collect("modeling", &mut out);
        self.self_att.collect("self_att", &mut out);
        self.sup_rnn.collect("sup_rnn", &mut out);
        self.sup_out.collect("sup_out", &mut out);
        self.start_rnn.collect("start_rnn", &mut out);
        self.start_out.collect("start_out", &mut out);
        self.end_rnn.collect("end_rnn", &mut out);
        self.end_out.collect("end_out", &mut out);
        self.type_rnn.collect("type_rnn", &mut out);
        self.type_out.collect("type_out", &mut out);
        out
    }

    pub fn parameters(&self) -> NamedTensors<F> {
        let mut p = self.named_tensors();
        p.retain(|(_, t)| t.requires_grad());
        p
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.parameters() {
            t.zero_grad();
        }
    }

    /// Overwrites every tensor with the same-named tensor of `src`, casting
    /// precision as needed.
    pub fn copy_from<G: Real>(&self, src: &[(String, Tensor<G>)]) -> Result<()> {
        let dst = self.named_tensors();
        if dst.len() != src.len() {
            return Err(Error::Usage(format!(
                "tensor count mismatch: {} vs {}",
                dst.len(),
                src.len()
            )));
        }
        for ((name, t), (sname, s)) in dst.iter().zip(src) {
            if name != sname || t.shape() != s.shape() {
                return Err(Error::Usage(format!(
                    "cannot copy {sname} {:?} into {name} {:?}",
                    s.shape(),
                    t.shape()
                )));
            }
            let from = s.data();
            for (d, v) in t.data_mut().iter_mut().zip(from.iter()) {
                *d = F::lit(v.as_f64());
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_named(&self.named_tensors());
        ck.meta.insert(
            "model_config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        ck
    }

    /// Loads tensors by name; every model tensor must be present with the
    /// same shape.
    pub fn load_checkpoint(&self, ck: &Checkpoint) -> Result<()> {
        for (name, t) in self.named_tensors() {
            let stored = ck
                .get(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint has no tensor {name}")))?;
            if stored.shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "{name}: checkpoint shape {:?}, model {:?}",
                    stored.shape,
                    t.shape()
                )));
            }
            for (d, &v) in t.data_mut().iter_mut().zip(&stored.data) {
                *d = F::lit(v as f64);
            }
        }
        Ok(())
    }

    /// Embeds the real tokens and appends zero rows up to `padded`.
    fn embed(&self, ids: &[usize], chars: &[Vec<usize>], padded: usize) -> Result<Tensor<F>> {
        let w = self.word.embed_words(ids)?;
        let c = self.chars.forward(chars)?;
        let x = self.proj.forward(&Tensor::concat(&[w, c], 1)?)?;
        let y = self.highway.forward(&x)?;
        if padded == ids.len() {
            return Ok(y);
        }
        Tensor::concat(&[y, Tensor::zeros(&[padded - ids.len(), self.config.d])], 0)
    }

    /// Runs example `i` of `batch` at the batch-padded lengths.
    pub fn forward_example(
        &self,
        batch: &Batch,
        i: usize,
        mode: Mode,
        rng: &mut impl Rng,
        capture: bool,
    ) -> Result<(HeadOutputs<F>, Option<AttentionTrace<F>>)> {
        let ex = &batch.examples[i];
        let ctx_mask = batch.context_mask(i);
        let q_mask = batch.question_mask(i);
        if ex.context_len() == 0 || ex.question_len() == 0 {
            return Err(Error::Data(format!("{}: empty context or question", ex.id)));
        }
        let train = mode == Mode::Train;
        let p = self.config.dropout;
        let xc = self.embed(&ex.context_ids, &ex.context_chars, batch.max_context)?;
        let xq = self.embed(&ex.question_ids, &ex.question_chars, batch.max_question)?;
        let h = self.encoder.run(&xc.dropout(p, train, rng)?, &ctx_mask)?;
        let u = self.encoder.run(&xq.dropout(p, train, rng)?, &q_mask)?;
        let flow = self.flow.forward(
            &h,
            &u,
            &ctx_mask,
            &q_mask,
            &self.config.flow_options(),
            capture,
        )?;
        let m0 = self
            .modeling
            .run(&flow.g.dropout(p, train, rng)?, &ctx_mask)?;
        let m = self.self_attention(&m0, &ctx_mask)?;
        let heads = self.prediction_cascade(
            &flow.g,
            &m,
            &ex.sentences,
            batch.max_sentences,
            &ctx_mask,
            mode,
            rng,
        )?;
        Ok((heads, flow.trace))
    }

    pub fn self_attention(&self, m: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        self.self_att.forward(m, mask)
    }

    /// Four stacked BiGRUs over `R = [G; M]`, each after the first reading
    /// `[R; previous output]`. `sentences` are token ranges (end exclusive);
    /// sup logits are padded to `max_sentences`.
    #[allow(clippy::too_many_arguments)]
    pub fn prediction_cascade(
        &self,
        g: &Tensor<F>,
        m: &Tensor<F>,
        sentences: &[(usize, usize)],
        max_sentences: usize,
        ctx_mask: &[bool],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<HeadOutputs<F>> {
        if g.dim(0) != m.dim(0) || ctx_mask.len() != g.dim(0) {
            return Err(Error::shape("prediction_cascade", g.shape(), m.shape()));
        }
        let t = g.dim(0);
        if let Some(&(s, e)) = sentences.iter().find(|&&(s, e)| e <= s || e > t) {
            return Err(Error::Data(format!(
                "sentence span ({s}, {e}) invalid for {t} tokens"
            )));
        }
        let train = mode == Mode::Train;
        let p = self.config.dropout;
        let r = Tensor::concat(&[g.clone(), m.clone()], 1)?;

        let o1 = self.sup_rnn.run(&r.dropout(p, train, rng)?, ctx_mask)?;
        let pad = max_sentences.max(sentences.len());
        let mut firsts: Vec<Option<usize>> = sentences.iter().map(|&(s, _)| Some(s)).collect();
        let mut lasts: Vec<Option<usize>> = sentences.iter().map(|&(_, e)| Some(e - 1)).collect();
        firsts.resize(pad, None);
        lasts.resize(pad, None);
        let reps = Tensor::concat(&[o1.gather_rows(&firsts)?, o1.gather_rows(&lasts)?], 1)?;
        let sent_mask: Vec<bool> = (0..pad).map(|k| k < sentences.len()).collect();
        let sup_logits = masked_row(self.sup_out.forward(&reps)?, &sent_mask)?;

        let o2 = self.start_rnn.run(
            &Tensor::concat(&[r.clone(), o1], 1)?.dropout(p, train, rng)?,
            ctx_mask,
        )?;
        let start_logits = masked_row(self.start_out.forward(&o2)?, ctx_mask)?;

        let o3 = self.end_rnn.run(
            &Tensor::concat(&[r.clone(), o2], 1)?.dropout(p, train, rng)?,
            ctx_mask,
        )?;
        let end_logits = masked_row(self.end_out.forward(&o3)?, ctx_mask)?;

        let o4 = self.type_rnn.run(
            &Tensor::concat(&[r, o3], 1)?.dropout(p, train, rng)?,
            ctx_mask,
        )?;
        let n = ctx_mask.iter().filter(|&&m| m).count().max(1);
        let weights = ctx_mask
            .iter()
            .map(|&m| {
                if m {
                    F::one() / F::lit(n as f64)
                } else {
                    F::zero()
                }
            })
            .collect();
        let pooled = Tensor::new(weights, &[1, t])?.matmul(&o4)?;
        let type_logits = self.type_out.forward(&pooled)?;

        Ok(HeadOutputs {
            type_logits,
            start_logits,
            end_logits,
            sup_logits,
        })
    }

    pub fn forward(
        &self,
        batch: &Batch,
        mode: Mode,
        rng: &mut impl Rng,
        capture: bool,
    ) -> Result<ModelOutputs<F>> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut heads = Vec::with_capacity(batch.len());
        let mut traces = Vec::new();
        for i in 0..batch.len() {
            let (h, trace) = self.forward_example(batch, i, mode, rng, capture)?;
            heads.push(h);
            traces.extend(trace);
        }
        let cat = |f: fn(&HeadOutputs<F>) -> &Tensor<F>| -> Result<Tensor<F>> {
            Tensor::concat(&heads.iter().map(|h| f(h).clone()).collect::<Vec<_>>(), 0)
        };
        Ok(ModelOutputs {
            type_logits: cat(|h| &h.type_logits)?,
            start_logits: cat(|h| &h.start_logits)?,
            end_logits: cat(|h| &h.end_logits)?,
            sup_logits: cat(|h| &h.sup_logits)?,
            traces,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::batch::{encode_all, BatchOptions};
    use crate::data::{synth_two_hop, Vocab};
    use crate::layers::uniform;
    use crate::tensor::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 4,
            dropout: 0.0,
            char_dim: 3,
            char_filters: 5,
            char_kernel: 3,
            ..Default::default()
        }
    }

    pub(crate) fn tiny_setup(n: usize, cfg: ModelConfig) -> (Model<f64>, Batch) {
        let exs = synth_two_hop(n, 5);
        let vocab = Vocab::build(&exs, 1);
        let opts = BatchOptions {
            max_word_len: 6,
            ..Default::default()
        };
        let (enc, _) = encode_all(&exs, &vocab, &opts);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = uniform::<f64>(&mut rng, &[vocab.n_words(), 6], 0.5).detach();
        let model = Model::new(cfg, table, vocab.n_chars(), &mut rng).unwrap();
        (model, Batch::new(enc))
    }

    fn eval(model: &Model<f64>, batch: &Batch) -> ModelOutputs<f64> {
        model
            .forward(batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), false)
            .unwrap()
    }

    #[test]
    fn output_shapes() {
        let (model, batch) = tiny_setup(3, tiny_config());
        let out = eval(&model, &batch);
        assert_eq!(out.type_logits.shape(), [3, 3]);
        assert_eq!(out.start_logits.shape(), [3, batch.max_context]);
        assert_eq!(out.end_logits.shape(), [3, batch.max_context]);
        assert_eq!(out.sup_logits.shape(), [3, batch.max_sentences]);
        // Padded positions carry the mask value.
        for i in 0..3 {
            let mask = batch.context_mask(i);
            for (t, &m) in mask.iter().enumerate() {
                assert_eq!(out.start_logits.at(&[i, t]) < -1e29, !m);
            }
        }
    }

    #[test]
    fn eval_is_deterministic_and_train_dropout_is_live() {
        let (model, batch) = tiny_setup(
            2,
            ModelConfig {
                dropout: 0.3,
                ..tiny_config()
            },
        );
        let a = eval(&model, &batch).start_logits.to_vec();
        let b = eval(&model, &batch).start_logits.to_vec();
        assert_eq!(a, b);
        let t = model
            .forward(
                &batch,
                Mode::Train,
                &mut ChaCha8Rng::seed_from_u64(0),
                false,
            )
            .unwrap()
            .start_logits
            .to_vec();
        assert_ne!(a, t);
    }

    #[test]
    fn ablation_flags_change_outputs() {
        let (full, batch) = tiny_setup(2, tiny_config());
        let (base, _) = tiny_setup(
            2,
            ModelConfig {
                use_cgde: false,
                use_fgin: false,
                ..tiny_config()
            },
        );
        base.copy_from(&full.named_tensors()).unwrap();
        let a = eval(&full, &batch).start_logits.to_vec();
        let b = eval(&base, &batch).start_logits.to_vec();
        let diff = a
            .iter()
            .zip(&b)
            .filter(|(x, _)| **x > -1e29)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6, "diff {diff}");
    }

    #[test]
    fn padding_insensitivity() {
        let (model, batch) = tiny_setup(2, tiny_config());
        let base = batch.examples[1].clone();
        let mut partner = base.clone();
        partner.id = "partner".into();
        let start = partner.context_len();
        for _ in 0..5 {
            partner.context_ids.push(partner.context_ids[0]);
            partner.context_chars.push(partner.context_chars[0].clone());
        }
        partner.sentences.push((start, partner.context_len()));
        partner.sup_labels.push(false);
        for _ in 0..3 {
            partner.question_ids.push(partner.question_ids[0]);
            partner
                .question_chars
                .push(partner.question_chars[0].clone());
        }
        let single = Batch::new(vec![base.clone()]);
        let padded = Batch::new(vec![base, partner]);
        assert!(padded.max_context > single.max_context);
        let a = eval(&model, &single);
        let b = eval(&model, &padded);
        let t = single.max_context;
        for head in [
            (&a.start_logits, &b.start_logits),
            (&a.end_logits, &b.end_logits),
        ] {
            for k in 0..t {
                assert!((head.0.at(&[0, k]) - head.1.at(&[0, k])).abs() < 1e-5);
            }
        }
        for k in 0..single.max_sentences {
            assert!((a.sup_logits.at(&[0, k]) - b.sup_logits.at(&[0, k])).abs() < 1e-5);
        }
        for c in 0..3 {
            assert!((a.type_logits.at(&[0, c]) - b.type_logits.at(&[0, c])).abs() < 1e-5);
        }
    }

    #[test]
    fn self_attention_single_position_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sa = SelfAttention::<f64>::new(&mut rng, 4);
        let m = uniform::<f64>(&mut rng, &[5, 4], 1.0).detach();
        assert_eq!(sa.forward(&m, &[true; 5]).unwrap().shape(), [5, 4]);
        // T=1: the attended vector is the row itself.
        let one = m.narrow(0, 0, 1).unwrap();
        let s = crate::attention::similarity(&one, &one, &sa.sim, &[true], &[true]).unwrap();
        assert_eq!(s.softmax(1).unwrap().item(), 1.0);
        let out = sa.forward(&one, &[true]).unwrap();
        let a = one.clone();
        let fused = Tensor::concat(&[one.clone(), a.clone(), one.mul(&a).unwrap()], 1).unwrap();
        let oracle = one.add(&sa.proj.forward(&fused).unwrap().relu()).unwrap();
        assert_eq!(out.to_vec(), oracle.to_vec());
    }

    #[test]
    fn self_attention_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sa = SelfAttention::<f64>::new(&mut rng, 4);
        let m = uniform::<f64>(&mut rng, &[4, 4], 1.0);
        let mut params = vec![("m".to_string(), m.clone())];
        sa.collect("sa", &mut params);
        let report = grad_check(
            &params,
            || {
                // Padded rows are fully masked; only real rows are scored.
                let out = sa.forward(&m, &[true, true, true, false])?;
                Ok(out.narrow(0, 0, 3)?.mul(&m.narrow(0, 0, 3)?)?.sum())
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{:?}", report.worst());
    }

    #[test]
    fn single_sentence_gives_one_sup_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (model, _) = tiny_setup(1, tiny_config());
        let g = uniform::<f64>(&mut rng, &[6, 32], 1.0).detach();
        let m = uniform::<f64>(&mut rng, &[6, 8], 1.0).detach();
        let out = model
            .prediction_cascade(&g, &m, &[(0, 6)], 1, &[true; 6], Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(out.sup_logits.shape(), [1, 1]);
        assert_eq!(out.start_logits.shape(), [1, 6]);
        assert_eq!(out.type_logits.shape(), [1, 3]);
        assert!(model
            .prediction_cascade(&g, &m, &[(2, 2)], 1, &[true; 6], Mode::Eval, &mut rng)
            .is_err());
    }

    #[test]
    fn perturbing_g_moves_every_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (model, _) = tiny_setup(1, tiny_config());
        let g = uniform::<f64>(&mut rng, &[6, 32], 1.0).detach();
        let m = uniform::<f64>(&mut rng, &[6, 8], 1.0).detach();
        let spans = [(0, 3), (3, 6)];
        let run = |g: &Tensor<f64>| {
            let h = model
                .prediction_cascade(
                    g,
                    &m,
                    &spans,
                    2,
                    &[true; 6],
                    Mode::Eval,
                    &mut ChaCha8Rng::seed_from_u64(0),
                )
                .unwrap();
            [
                h.type_logits.to_vec(),
                h.start_logits.to_vec(),
                h.end_logits.to_vec(),
                h.sup_logits.to_vec(),
            ]
        };
        let base = run(&g);
        let mut bumped = g.to_vec();
        bumped[0] += 0.5;
        let moved = run(&Tensor::new(bumped, &[6, 32]).unwrap());
        for (a, b) in base.iter().zip(&moved) {
            assert_ne!(a, b);
        }
    }

    #[test]
    fn checkpoint_and_copy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (model, batch) = tiny_setup(2, tiny_config());
        let stem = dir.path().join("m");
        model.to_checkpoint().save(&stem).unwrap();
        let (other, _) = tiny_setup(2, ModelConfig { ..tiny_config() });
        for (_, t) in other.parameters() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        other
            .load_checkpoint(&Checkpoint::load(&stem).unwrap())
            .unwrap();
        let a = eval(&model, &batch).start_logits.to_vec();
        let b = eval(&other, &batch).start_logits.to_vec();
        // Checkpoints store 32-bit values.
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0));
        }
    }
}

use std::fmt;
use std::ops::ControlFlow;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ema::Ema;
use super::metrics::{evaluate_predictions, MetricReport};
use super::optim::{OptimConfig, Optimizer};
use crate::data::batch::{
    batch_order, collate, encode_all, BatchExample, BatchOptions, BatchStats,
};
use crate::data::{Batch, Example, Vocab};
use crate::error::{Error, Result};
use crate::model::{decode_batch, joint_loss, Mode, Model, Prediction, PredictionDump};
use crate::tensor::{Checkpoint, Real};

/// Source examples with their encoded, possibly truncated, form.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub encoded: Vec<BatchExample>,
}

impl Dataset {
    pub fn encode(
        examples: Vec<Example>,
        vocab: &Vocab,
        opts: &BatchOptions,
    ) -> (Self, BatchStats) {
        let (encoded, stats) = encode_all(&examples, vocab, opts);
        (Dataset { examples, encoded }, stats)
    }

    pub fn len(&self) -> usize {
        self.encoded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoded.is_empty()
    }

    pub fn has_sup(&self) -> bool {
        self.encoded.iter().any(|e| e.has_sup)
    }

    /// Batches in source order.
    pub fn batches(&self, batch_size: usize) -> Vec<Batch> {
        collate(
            &self.encoded,
            &batch_order(self.len(), batch_size, None::<&mut ChaCha8Rng>),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    /// `None` evaluates with the live weights.
    pub ema_decay: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            patience: 1,
            batch_size: 32,
            optimizer: OptimConfig::default(),
            ema_decay: Some(0.999),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Usage(
                "epochs, batch_size and patience must be positive".into(),
            ));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the batch losses.
    pub train_loss: f64,
    pub dev: Option<[f64; 6]>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} train_loss={:?}", self.epoch, self.train_loss)?;
        if let Some(d) = self.dev {
            let names = [
                "answer_em",
                "answer_f1",
                "sp_em",
                "sp_f1",
                "joint_em",
                "joint_f1",
            ];
            for (n, v) in names.iter().zip(d) {
                write!(f, " {n}={v:.4}")?;
            }
        }
        write!(f, " time={:.2}s", self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
    /// Model weights (the evaluation weights when EMA is on) and optimizer
    /// state from the best epoch.
    pub best: Checkpoint,
}

/// Patience rule on a score where higher is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad: 0,
        }
    }

    /// Records one epoch's score; returns `(improved, stop)`.
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        (improved, self.bad >= self.patience)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Runs the model in eval mode over `data`, returning the decoded
/// predictions and their scores.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    data: &Dataset,
    batch_size: usize,
) -> Result<(MetricReport, Vec<Prediction>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut preds = Vec::with_capacity(data.len());
    for batch in data.batches(batch_size) {
        let out = model.forward(&batch, Mode::Eval, &mut rng, false)?;
        preds.extend(decode_batch(&out, &batch, &data.examples, &model.config)?);
    }
    let gold: Vec<Example> = data
        .encoded
        .iter()
        .map(|e| data.examples[e.source].clone())
        .collect();
    let report = evaluate_predictions(&PredictionDump::from_predictions(&preds), &gold);
    Ok((report, preds))
}

fn snapshot<F: Real>(model: &Model<F>, opt: &Optimizer<F>, epoch: usize) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    opt.save_state(&mut ck);
    ck.meta.insert("epoch".into(), epoch.into());
    ck
}

/// Trains `model` in place. With a dev set, training stops once the dev
/// selection score has not improved for `patience` epochs, and the model
/// is left holding the best epoch's weights. `on_epoch` sees each epoch's
/// log line and may end training early by returning `Break`.
pub fn train<F: Real>(
    model: &Model<F>,
    train: &Dataset,
    dev: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.config.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = model.parameters();
    let mut opt = Optimizer::new(config.optimizer.clone())?;
    let mut ema = config.ema_decay.map(|d| Ema::new(&params, d)).transpose()?;
    let mut logs = Vec::new();
    let mut best: Option<(usize, Checkpoint)> = None;
    let mut stopping = EarlyStopping::new(config.patience);
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let order = batch_order(train.len(), config.batch_size, Some(&mut rng));
        let mut total = 0.0;
        let batches = collate(&train.encoded, &order);
        for (b, batch) in batches.iter().enumerate() {
            model.zero_grad();
            let out = model.forward(batch, Mode::Train, &mut rng, false)?;
            let loss = joint_loss(&out, batch, model.config.lambda_a, model.config.lambda_s)?.total;
            let value = loss.item().as_f64();
            if !value.is_finite() {
                return Err(Error::Numeric {
                    op: "train",
                    detail: format!(
                        "loss {value} at epoch {epoch} batch {b}; batch ids {:?}",
                        batch.ids()
                    ),
                });
            }
            total += value;
            loss.backward()?;
            opt.step(&params).map_err(|e| match e {
                Error::Numeric { op, detail } => Error::Numeric {
                    op,
                    detail: format!(
                        "{detail} (epoch {epoch} batch {b}; batch ids {:?})",
                        batch.ids()
                    ),
                },
                other => other,
            })?;
            if let Some(ema) = ema.as_mut() {
                ema.update(&params)?;
            }
        }
        model.zero_grad();
        let train_loss = total / batches.len() as f64;

        let mut dev_cols = None;
        let mut stop = false;
        if let Some(dev) = dev {
            if let Some(ema) = ema.as_mut() {
                ema.swap(&params)?;
            }
            let result = evaluate(model, dev, config.batch_size);
            let ck = result.is_ok().then(|| snapshot(model, &opt, epoch));
            if let Some(ema) = ema.as_mut() {
                ema.swap(&params)?;
            }
            let (report, _) = result?;
            dev_cols = Some(report.columns());
            let (improved, halt) = stopping.observe(report.selection_score());
            if improved {
                best = Some((epoch, ck.expect("snapshot taken")));
            }
            stop = halt;
        }
        let log = EpochLog {
            epoch,
            train_loss,
            dev: dev_cols,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("{log}");
        let halt = on_epoch(&log).is_break();
        logs.push(log);
        if halt {
            break;
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best) = match best {
        Some((epoch, ck)) => {
            model.load_checkpoint(&ck)?;
            (epoch, ck)
        }
        None => {
            if let Some(ema) = ema.as_mut() {
                ema.swap(&params)?;
            }
            (logs.len(), snapshot(model, &opt, logs.len()))
        }
    };
    Ok(TrainOutcome {
        epochs: logs,
        best_epoch,
        best_score: stopping.best(),
        stopped_early,
        best,
    })
}

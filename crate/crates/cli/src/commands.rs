use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hopqa::data::batch::{encode_all, BatchExample, BatchOptions};
use hopqa::data::cache::{cache_key, DatasetCache};
use hopqa::data::synth::synth_records;
use hopqa::data::{load_glove, load_hotpotqa, load_squad, Example, GloveTable, LoadStats, Vocab};
use hopqa::gradsuite::{run_suite, SuiteDims, F32_TOLERANCE, F64_TOLERANCE};
use hopqa::model::{Model, ModelConfig, PredictionDump};
use hopqa::tensor::Checkpoint;
use hopqa::train::{evaluate, train, Dataset, MetricReport};
use hopqa::{Error, Tensor};

use crate::config::{DatasetKind, RunConfig};

pub const METRIC_HEADER: [&str; 6] = [
    "Answer EM",
    "Answer F1",
    "Sup Fact EM",
    "Sup Fact F1",
    "Joint EM",
    "Joint F1",
];

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

fn echo_config(cfg: &RunConfig) {
    println!("# effective config");
    for (k, v) in cfg.entries() {
        println!("# {k} = {v}");
    }
}

struct Source {
    examples: Vec<Example>,
    /// Bytes the dataset was built from, for cache keys.
    fingerprint: Vec<u8>,
}

fn read_source(cfg: &RunConfig, path: Option<&Path>) -> Result<Source> {
    let (examples, stats): (Vec<Example>, LoadStats) = match (cfg.dataset, path) {
        (DatasetKind::Synth, None) => {
            let recs = synth_records(cfg.synth_n, cfg.synth_seed);
            let (ex, stats) = hopqa::data::hotpot::records_to_examples(&recs);
            return Ok(Source {
                examples: check_loaded(ex, &stats)?,
                fingerprint: format!("synth:{}:{}", cfg.synth_n, cfg.synth_seed).into_bytes(),
            });
        }
        (DatasetKind::Squad, Some(p)) => load_squad(p)?,
        (_, Some(p)) => load_hotpotqa(p)?,
        (_, None) => return Err(usage(format!("dataset {} needs a path", cfg.dataset))),
    };
    let path = path.expect("path-less sources returned above");
    let fingerprint = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(Source {
        examples: check_loaded(examples, &stats)?,
        fingerprint,
    })
}

fn check_loaded(examples: Vec<Example>, stats: &LoadStats) -> Result<Vec<Example>> {
    if stats.warning_count() > 0 {
        log::warn!(
            "{} load warnings ({} answers not found, {} facts dropped)",
            stats.warning_count(),
            stats.answer_not_found,
            stats.dropped_facts
        );
    }
    if examples.is_empty() {
        return Err(Error::Data("dataset holds no examples".into()).into());
    }
    Ok(examples)
}

fn encode_cached(
    src: &Source,
    vocab: &Vocab,
    opts: &BatchOptions,
    min_freq: usize,
) -> Result<Vec<BatchExample>> {
    let cache = DatasetCache::from_env();
    let vocab_bytes = serde_json::to_vec(vocab)?;
    let key = cache_key(&[&src.fingerprint, &vocab_bytes], opts, min_freq);
    if let Some(cache) = &cache {
        if let Some(hit) = cache.load(&key)? {
            log::info!("dataset cache hit {key}");
            return Ok(hit);
        }
    }
    let (encoded, stats) = encode_all(&src.examples, vocab, opts);
    if stats.truncated > 0 {
        log::info!(
            "truncated {} of {} contexts",
            stats.truncated,
            stats.examples
        );
    }
    if let Some(cache) = &cache {
        cache.store(&key, &encoded)?;
    }
    Ok(encoded)
}

fn dataset(src: Source, vocab: &Vocab, cfg: &RunConfig) -> Result<Dataset> {
    let encoded = encode_cached(&src, vocab, &cfg.batch_options(), cfg.min_freq)?;
    Ok(Dataset {
        examples: src.examples,
        encoded,
    })
}

/// The evaluation split: the dev file when given, otherwise the training
/// data.
fn eval_source(cfg: &RunConfig) -> Result<Source> {
    match (&cfg.dev_path, &cfg.train_path) {
        (Some(p), _) => read_source(cfg, Some(p)),
        (None, Some(p)) => read_source(cfg, Some(p)),
        (None, None) => read_source(cfg, None),
    }
}

fn word_table(cfg: &RunConfig, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let table = match &cfg.glove_path {
        Some(p) => {
            let t = load_glove(p, vocab, cfg.word_dim, rng)?;
            log::info!(
                "pretrained vectors for {} of {} words ({} lines skipped)",
                t.found,
                vocab.n_words(),
                t.skipped
            );
            t
        }
        None => GloveTable::random(vocab.n_words(), cfg.word_dim, rng),
    };
    Ok(Tensor::new(table.data, &[vocab.n_words(), table.dim])?)
}

struct Prepared {
    vocab: Vocab,
    train: Dataset,
    dev: Option<Dataset>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let train_src = read_source(cfg, cfg.train_path.as_deref())?;
    let vocab = Vocab::build(&train_src.examples, cfg.min_freq);
    let dev = match &cfg.dev_path {
        Some(p) => Some(dataset(read_source(cfg, Some(p))?, &vocab, cfg)?),
        None => None,
    };
    let train = dataset(train_src, &vocab, cfg)?;
    Ok(Prepared { vocab, train, dev })
}

fn fresh_model(cfg: &RunConfig, model_cfg: ModelConfig, vocab: &Vocab) -> Result<Model<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let table = word_table(cfg, vocab, &mut rng)?;
    Ok(Model::new(model_cfg, table, vocab.n_chars(), &mut rng)?)
}

fn fit(
    cfg: &RunConfig,
    model: &Model<f32>,
    data: &Prepared,
    log: &mut dyn Write,
) -> Result<hopqa::train::TrainOutcome> {
    let dev = data.dev.as_ref().unwrap_or(&data.train);
    let mut io_err = None;
    let outcome = train(model, &data.train, Some(dev), &cfg.train, |l| {
        println!("{l}");
        if let Err(e) = writeln!(log, "{l}") {
            io_err = Some(e);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing training log");
    }
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate().map_err(usage)?;
    echo_config(cfg);
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    fs::write(out.join("config.txt"), cfg.render())?;
    let data = prepare(cfg)?;
    let model = fresh_model(cfg, cfg.model.clone(), &data.vocab)?;
    println!(
        "# {} parameters, {} training examples",
        model.n_parameters(),
        data.train.len()
    );
    let mut log = fs::File::create(out.join("train.log"))?;
    let outcome = fit(cfg, &model, &data, &mut log)?;
    let mut ck = outcome.best;
    ck.meta
        .insert("vocab".into(), serde_json::to_value(&data.vocab)?);
    let stem = out.join("model");
    ck.save(&stem)?;
    println!(
        "best epoch {} score {:.4}; checkpoint {}",
        outcome.best_epoch,
        outcome.best_score.unwrap_or(f64::NAN),
        stem.display()
    );
    Ok(())
}

/// Model and vocabulary from a checkpoint written by `train`.
pub fn load_model(stem: &Path) -> Result<(Model<f32>, Vocab)> {
    let ck = Checkpoint::load(stem)?;
    let bad = |what: &str| Error::Data(format!("{}: checkpoint lacks {what}", stem.display()));
    let model_cfg: ModelConfig = serde_json::from_value(
        ck.meta
            .get("model_config")
            .ok_or_else(|| bad("model_config"))?
            .clone(),
    )?;
    let vocab: Vocab =
        serde_json::from_value::<Vocab>(ck.meta.get("vocab").ok_or_else(|| bad("vocab"))?.clone())?
            .reindex();
    let table = ck.get("word.table").ok_or_else(|| bad("word.table"))?;
    let frozen = Tensor::<f32>::zeros(&table.shape);
    let model = Model::new(
        model_cfg,
        frozen,
        vocab.n_chars(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    model.load_checkpoint(&ck)?;
    Ok((model, vocab))
}

fn eval_set(cfg: &RunConfig, vocab: &Vocab, limit: Option<usize>) -> Result<Dataset> {
    let mut src = eval_source(cfg)?;
    if let Some(n) = limit {
        src.examples.truncate(n);
        src.fingerprint
            .extend_from_slice(format!(":limit{n}").as_bytes());
    }
    dataset(src, vocab, cfg)
}

pub fn format_metrics(r: &MetricReport) -> String {
    let header = METRIC_HEADER.join(" | ");
    let values: Vec<String> = r.columns().iter().map(|v| format!("{v:.4}")).collect();
    format!("{header}\n{}", values.join(" | "))
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, limit: Option<usize>) -> Result<()> {
    echo_config(cfg);
    let (model, vocab) = load_model(checkpoint)?;
    let data = eval_set(cfg, &vocab, limit)?;
    let (report, _) = evaluate(&model, &data, cfg.train.batch_size)?;
    if report.missing > 0 {
        log::warn!("{} examples had no prediction", report.missing);
    }
    println!("{}", format_metrics(&report));
    Ok(())
}

pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    output: &Path,
    limit: Option<usize>,
) -> Result<()> {
    echo_config(cfg);
    let (model, vocab) = load_model(checkpoint)?;
    let data = eval_set(cfg, &vocab, limit)?;
    let (_, preds) = evaluate(&model, &data, cfg.train.batch_size)?;
    let dump = PredictionDump::from_predictions(&preds);
    fs::write(output, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::Io {
        path: output.into(),
        source: e,
    })?;
    println!("wrote {} predictions to {}", preds.len(), output.display());
    Ok(())
}

pub fn cmd_ablation(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    cfg.validate().map_err(usage)?;
    echo_config(cfg);
    let data = prepare(cfg)?;
    let mut table = format!(
        "| Model | {} |\n|---|{}\n",
        METRIC_HEADER.join(" | "),
        "---|".repeat(6)
    );
    for (label, cgde, fgin) in ModelConfig::ablation_rows() {
        println!("# training {label}");
        let model_cfg = ModelConfig {
            use_cgde: cgde,
            use_fgin: fgin,
            ..cfg.model.clone()
        };
        let model = fresh_model(cfg, model_cfg, &data.vocab)?;
        fit(cfg, &model, &data, &mut std::io::sink())?;
        let dev = data.dev.as_ref().unwrap_or(&data.train);
        let (report, _) = evaluate(&model, dev, cfg.train.batch_size)?;
        let cols: Vec<String> = report
            .columns()
            .iter()
            .map(|v| format!("{:.2}", 100.0 * v))
            .collect();
        table.push_str(&format!("| {label} | {} |\n", cols.join(" | ")));
    }
    print!("{table}");
    if let Some(p) = out {
        fs::write(p, &table).map_err(|e| Error::Io {
            path: p.into(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn cmd_heatmap(cfg: &RunConfig, checkpoint: &Path, id: &str, out: &Path) -> Result<()> {
    echo_config(cfg);
    let (model, vocab) = load_model(checkpoint)?;
    let data = eval_set(cfg, &vocab, None)?;
    let enc = data
        .encoded
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| usage(format!("no example with id {id:?}")))?;
    let maps = hopqa::heatmap::capture(&model, &data.examples[enc.source], enc)?;
    for p in hopqa::heatmap::export(out, &maps)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn cmd_gradcheck(dims: &SuiteDims, seed: u64) -> Result<bool> {
    dims.validate()?;
    let report = run_suite(dims, seed)?;
    println!(
        "{:<22} {:>12} {:>12} {:>8} {:>6}",
        "op", "f32", "f64", "samples", "kinks"
    );
    for r in &report.rows {
        println!(
            "{:<22} {:>12.3e} {:>12.3e} {:>8} {:>6}",
            r.name, r.f32_error, r.f64_error, r.samples, r.kinks
        );
    }
    println!(
        "worst f32 {:.3e} (< {F32_TOLERANCE:e}), worst f64 {:.3e} (< {F64_TOLERANCE:e}), {:.2}s: {}",
        report.worst_f32(),
        report.worst_f64(),
        report.seconds,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(report.passed())
}

pub fn cmd_synth(n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(usage("synth needs at least one example"));
    }
    let recs = synth_records(n, seed);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(out, serde_json::to_string(&recs)?).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    println!("wrote {n} records to {}", out.display());
    Ok(())
}

pub fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

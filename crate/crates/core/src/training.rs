//! Joint objective, Adam, the epoch loop with early stopping, checkpoints,
//! and multi-seed runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, encode_sample, Batch, DialogueSample, EncodeOptions, EncodedSample, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::model::{forward, AttentionMode, ForwardOutput, GateVariant, ModelConfig, ModelParams};
use crate::numerics::{Gradients, Graph, ParamStore, Parameter, Var};

/// Training hyperparameters. Every field has a default, so a config file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gate: GateVariant,
    pub attention: AttentionMode,
    pub lambda_da: f64,
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub speaker_tokens: bool,
    pub max_sentence_len: usize,
    pub max_summary_len: usize,
    pub n_runs: usize,
    pub parallel_runs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncodeOptions::default();
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 30,
            patience: 3,
            batch_size: 32,
            seed: 0,
            gate: GateVariant::Summary,
            attention: AttentionMode::Conditioned,
            lambda_da: 1.0,
            clip_norm: 5.0,
            embed_dim: 128,
            hidden_dim: 128,
            speaker_tokens: enc.speaker_tokens,
            max_sentence_len: enc.max_sentence_len,
            max_summary_len: enc.max_summary_len,
            n_runs: 1,
            parallel_runs: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lambda_da >= 0.0) {
            return bad("lambda_da must be nonnegative");
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return bad("learning_rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.max_summary_len < 2 || self.max_sentence_len < 1 {
            return bad("max_summary_len must be at least 2 and max_sentence_len at least 1");
        }
        if self.n_runs < 1 {
            return bad("n_runs must be at least 1");
        }
        Ok(())
    }

    pub fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            speaker_tokens: self.speaker_tokens,
            max_sentence_len: self.max_sentence_len,
            max_summary_len: self.max_summary_len,
        }
    }

    pub fn model_config(&self, vocab: &Vocabulary) -> ModelConfig {
        let mut m = ModelConfig::new(vocab.len(), vocab.num_labels());
        m.embed_dim = self.embed_dim;
        m.hidden_dim = self.hidden_dim;
        m.gate = self.gate;
        m.attention = self.attention;
        m
    }

    pub fn init_model(&self, vocab: &Vocabulary) -> Result<ModelParams> {
        ModelParams::init(self.model_config(vocab), &mut ChaCha8Rng::seed_from_u64(self.seed))
    }
}

fn nll(p: f64) -> f64 {
    -p.ln()
}

/// Joint loss on plain distributions: mean summary cross-entropy over
/// unmasked steps plus `lambda_da` times mean dialogue-act cross-entropy over
/// unmasked sentences.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    da_dists: &[Vec<f64>],
    da_targets: &[usize],
    da_mask: &[bool],
    summary_dists: &[Vec<f64>],
    summary_targets: &[usize],
    summary_mask: &[bool],
    lambda_da: f64,
) -> Result<f64> {
    fn mean_ce(dists: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> Result<f64> {
        if dists.len() != targets.len() || targets.len() != mask.len() {
            return Err(Error::contract("distribution, target and mask lengths differ"));
        }
        let mut total = 0.0;
        let mut n = 0usize;
        for ((d, &t), &m) in dists.iter().zip(targets).zip(mask) {
            if !m {
                continue;
            }
            let p = *d
                .get(t)
                .ok_or_else(|| Error::contract(format!("target id {t} outside {} classes", d.len())))?;
            total += nll(p);
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }
    Ok(mean_ce(summary_dists, summary_targets, summary_mask)?
        + lambda_da * mean_ce(da_dists, da_targets, da_mask)?)
}

fn mean_nll(g: &mut Graph<'_>, logits: &[Var], targets: &[usize]) -> Result<Var> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (&l, &t) in logits.iter().zip(targets) {
        let lp = g.log_softmax(l)?;
        terms.push(g.pick(lp, t)?);
    }
    let stacked = g.concat(&terms)?;
    let total = g.sum(stacked);
    Ok(g.scale(total, -1.0 / logits.len() as f64))
}

/// The joint objective for one teacher-forced forward pass, on the graph.
pub fn joint_objective(g: &mut Graph<'_>, out: &ForwardOutput, sample: &EncodedSample, lambda_da: f64) -> Result<Var> {
    let summary = mean_nll(g, &out.decode.logits, &sample.summary)?;
    let da = mean_nll(g, &out.da_logits, &sample.acts)?;
    let weighted = g.scale(da, lambda_da);
    g.add(summary, weighted)
}

/// Builds the graph for one sample and returns it with its loss node.
pub fn sample_loss<'p>(params: &'p ModelParams, sample: &EncodedSample, lambda_da: f64) -> Result<(Graph<'p>, Var)> {
    let mut g = Graph::new(&params.store);
    let out = forward(&mut g, params, &sample.sentences, Some(&sample.summary), sample.summary.len())?;
    let loss = joint_objective(&mut g, &out, sample, lambda_da)?;
    Ok((g, loss))
}

/// Mean per-sample joint loss without gradients.
pub fn dataset_loss(params: &ModelParams, samples: &[EncodedSample], lambda_da: f64) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        let (g, loss) = sample_loss(params, s, lambda_da)?;
        total += g.value(loss).item();
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::contract("optimizer state does not match parameters"));
        }
        for id in store.ids() {
            if grads.get(id).shape() != store.get(id).shape() || self.m[id.0].len() != store.get(id).len() {
                return Err(Error::shape("adam", store.get(id).shape(), grads.get(id).shape()));
            }
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for id in store.ids() {
            let g = grads.get(id).data();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let theta = store.get_mut(id).data_mut();
            for j in 0..theta.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
    #[serde(default)]
    pub best_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub test_metrics: Option<std::collections::BTreeMap<String, f64>>,
}

/// A finished run: its record and the best-dev parameters.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub result: RunResult,
    pub model: ModelParams,
}

pub const CHECKPOINT_FORMAT: &str = "actsum-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub encode: EncodeOptions,
    pub vocab: Vocabulary,
    pub params: Vec<Parameter>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, vocab: &Vocabulary, encode: EncodeOptions) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: params.config,
            encode,
            vocab: vocab.clone(),
            params: params.saved(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a checkpoint, returning the model and its vocabulary.
    pub fn load(path: &Path) -> Result<(ModelParams, Vocabulary, EncodeOptions)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::contract(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        ck.vocab.reindex()?;
        if ck.vocab.len() != ck.model.vocab_size || ck.vocab.num_labels() != ck.model.num_labels {
            return Err(Error::contract("checkpoint vocabulary does not match its model"));
        }
        let params = ModelParams::from_saved(ck.model, ck.params)?;
        Ok((params, ck.vocab, ck.encode))
    }
}

/// Encoded training and development samples sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSample>,
    pub dev: Vec<EncodedSample>,
}

impl TrainData {
    /// Builds the vocabulary from `train` only and encodes both splits against it.
    pub fn from_samples(train: &[DialogueSample], dev: &[DialogueSample], encode: &EncodeOptions) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::contract("training split is empty"));
        }
        let vocab = build_vocab(train, encode.speaker_tokens);
        let enc = |samples: &[DialogueSample]| -> Result<Vec<EncodedSample>> {
            samples.iter().map(|s| encode_sample(s, &vocab, encode)).collect()
        };
        let train = enc(train)?;
        let dev = enc(dev)?;
        Ok(Self { vocab, train, dev })
    }
}

fn make_batch(samples: &[&EncodedSample]) -> Batch {
    let k = samples.iter().map(|s| s.sentences.len()).max().unwrap_or(0);
    let t = samples
        .iter()
        .flat_map(|s| s.sentences.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let m = samples.iter().map(|s| s.summary.len()).max().unwrap_or(0);
    let b = samples.len();
    let mut batch = Batch {
        batch_size: b,
        max_sentences: k,
        max_words: t,
        max_summary: m,
        word_ids: vec![PAD; b * k * t],
        word_mask: vec![false; b * k * t],
        sentence_mask: vec![false; b * k],
        da_ids: vec![PAD; b * k],
        da_mask: vec![false; b * k],
        summary_ids: vec![PAD; b * m],
        summary_mask: vec![false; b * m],
    };
    for (i, s) in samples.iter().enumerate() {
        for (j, sent) in s.sentences.iter().enumerate() {
            batch.sentence_mask[i * k + j] = true;
            batch.da_mask[i * k + j] = true;
            batch.da_ids[i * k + j] = s.acts[j];
            for (w, &id) in sent.iter().enumerate() {
                batch.word_ids[(i * k + j) * t + w] = id;
                batch.word_mask[(i * k + j) * t + w] = true;
            }
        }
        for (j, &id) in s.summary.iter().enumerate() {
            batch.summary_ids[i * m + j] = id;
            batch.summary_mask[i * m + j] = true;
        }
    }
    batch
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    fs::write(path, lines.join("\n") + "\n").map_err(|e| Error::io(path, e))
}

/// Trains one model with shuffled mini-batches, evaluating dev loss after
/// every epoch and keeping the best-dev parameters. When `out_dir` is given
/// it receives `config.toml`, `metrics.jsonl` and `best.ckpt.json`.
pub fn train(data: &TrainData, mut params: ModelParams, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainedRun> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    if data.dev.is_empty() {
        log::warn!("dev split is empty; model selection falls back to training loss");
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        },
        &params.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_store = params.store.clone();
    let mut epochs = Vec::new();
    let mut metrics_lines = Vec::new();
    let mut stopped_early = false;
    let mut grads = Gradients::zeros_like(&params.store);
    let ckpt_path = out_dir.map(|d| d.join("best.ckpt.json"));

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut last_norm = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let members: Vec<&EncodedSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = make_batch(&members);
            grads.zero();
            let mut batch_loss = 0.0;
            for sample in batch.samples() {
                let (g, loss) = sample_loss(&params, &sample, config.lambda_da)?;
                let value = g.value(loss).item();
                if !value.is_finite() || value < 0.0 {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: batch_idx,
                        detail: format!("sample loss {value}"),
                    });
                }
                batch_loss += value;
                g.backward(loss, &mut grads)?;
            }
            let n = batch.batch_size as f64;
            grads.scale(1.0 / n);
            if !grads.all_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                    detail: "gradient contains NaN or infinity".into(),
                });
            }
            last_norm = grads.clip_global_norm(config.clip_norm);
            adam.step(&mut params.store, &grads)?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / data.train.len() as f64;
        let dev_loss = if data.dev.is_empty() {
            train_loss
        } else {
            dataset_loss(&params, &data.dev, config.lambda_da)?
        };
        if !dev_loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: 0,
                detail: format!("dev loss {dev_loss}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            grad_norm: last_norm,
        };
        log::info!(
            "seed {} epoch {epoch:>2}: train {train_loss:.5} dev {dev_loss:.5}",
            config.seed
        );
        metrics_lines.push(serde_json::to_string(&record)?);
        epochs.push(record);
        let decision = stopper.observe(epoch, dev_loss);
        if decision == StopDecision::Improved {
            best_store = params.store.clone();
            if let Some(path) = &ckpt_path {
                let mut snapshot = params.clone();
                snapshot.store = best_store.clone();
                Checkpoint::new(&snapshot, &data.vocab, config.encode_options()).save(path)?;
            }
        }
        if let Some(dir) = out_dir {
            write_lines(&dir.join("metrics.jsonl"), &metrics_lines)?;
        }
        if decision == StopDecision::Stop {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    params.store = best_store;
    let result = RunResult {
        seed: config.seed,
        best_epoch: stopper.best_epoch().unwrap_or(1),
        best_dev_loss: stopper.best(),
        epochs,
        stopped_early,
        best_checkpoint: ckpt_path,
        test_metrics: None,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("result.json");
        fs::write(&path, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainedRun {
        result,
        model: params,
    })
}

/// Runs `n_runs` independent trainings with seeds `base_seed..base_seed+n_runs`.
/// Run `i` writes into `out_dir/run_{i:03}` and the records are collected in
/// `out_dir/runs.json`.
pub fn multi_run(
    data: &TrainData,
    config: &TrainConfig,
    n_runs: usize,
    base_seed: u64,
    out_dir: Option<&Path>,
    parallel: bool,
) -> Result<Vec<TrainedRun>> {
    if n_runs == 0 {
        return Err(Error::contract("n_runs must be at least 1"));
    }
    let run = |i: usize| -> Result<TrainedRun> {
        let mut cfg = config.clone();
        cfg.seed = base_seed + i as u64;
        cfg.n_runs = 1;
        let params = cfg.init_model(&data.vocab)?;
        let dir = out_dir.map(|d| d.join(format!("run_{i:03}")));
        train(data, params, &cfg, dir.as_deref())
    };
    let runs: Vec<TrainedRun> = if parallel {
        (0..n_runs).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..n_runs).map(run).collect::<Result<_>>()?
    };
    if let Some(dir) = out_dir {
        let results: Vec<&RunResult> = runs.iter().map(|r| &r.result).collect();
        let path = dir.join("runs.json");
        fs::write(&path, serde_json::to_string_pretty(&results)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(runs)
}

//! Sentence-gated joint labeler and summarizer.
//!
//! Sentences are embedded as the mean of their word embeddings and read by a
//! bidirectional LSTM; each encoder state is `[forward_i ; backward_i]`. Two
//! heads share those states:
//!
//! * a dialogue-act labeler, optionally with dialogue-act attention, and
//! * an attentional LSTM decoder initialised from the last encoder state.
//!
//! The sentence gate turns the decoder's averaged attention context into one
//! scalar per sentence that scales the evidence fed to the labeler. With
//! [`GateVariant::Full`] the gate mixes the dialogue-act context with the
//! summary context; with [`GateVariant::Summary`] the dialogue-act attention is
//! removed and the encoder state takes its place. [`GateVariant::None`] is the
//! ungated ablation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{argmax, lstm_cell, softmax, Graph, LstmParams, LstmState, ParamId, ParamStore, Parameter, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateVariant {
    Full,
    Summary,
    None,
}

impl std::str::FromStr for GateVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "summary" => Ok(Self::Summary),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown gate variant {other:?}"))),
        }
    }
}

/// How summary attention scores sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Additive scoring of `[decoder state ; encoder state]`.
    Conditioned,
    /// `sigmoid(w · h_k)`: one distribution shared by every decoder step.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_labels: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gate: GateVariant,
    pub attention: AttentionMode,
    pub forget_bias: f64,
    pub embed_init: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_labels: usize) -> Self {
        Self {
            vocab_size,
            num_labels,
            embed_dim: 128,
            hidden_dim: 128,
            gate: GateVariant::Summary,
            attention: AttentionMode::Conditioned,
            forget_bias: 1.0,
            embed_init: 0.08,
        }
    }

    /// Width of encoder states and of the decoder.
    pub fn state_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 || self.num_labels == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!("degenerate model dimensions: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum SummaryScorer {
    Literal {
        score: ParamId,
    },
    Conditioned {
        query: ParamId,
        key: ParamId,
        bias: ParamId,
        score: ParamId,
    },
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    embedding: ParamId,
    enc_fwd: LstmParams,
    enc_bwd: LstmParams,
    decoder: LstmParams,
    da_attention: Option<ParamId>,
    da_output: ParamId,
    summary_scorer: SummaryScorer,
    summary_output: ParamId,
    gate_vector: Option<ParamId>,
    gate_matrix: Option<ParamId>,
}

/// All learnable weights plus the configuration that shaped them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn linear(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut impl Rng) -> ParamId {
    let bound = 1.0 / (inp as f64).sqrt();
    let t = Tensor::matrix(out, inp, uniform(rng, out * inp, bound)).expect("consistent shape");
    store.add(name, t)
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, s) = (config.embed_dim, config.hidden_dim, config.state_dim());
        let mut store = ParamStore::new();
        let embedding = store.add(
            "embedding",
            Tensor::matrix(
                config.vocab_size,
                d,
                uniform(rng, config.vocab_size * d, config.embed_init),
            )?,
        );
        let enc_fwd = LstmParams::init(&mut store, "encoder.forward", d, h, config.forget_bias, rng);
        let enc_bwd = LstmParams::init(&mut store, "encoder.backward", d, h, config.forget_bias, rng);
        let decoder = LstmParams::init(&mut store, "decoder", d, s, config.forget_bias, rng);
        let da_attention = match config.gate {
            GateVariant::Summary => None,
            _ => Some(linear(&mut store, "da.attention", 1, s, rng)),
        };
        let da_output = linear(&mut store, "da.output", config.num_labels, s, rng);
        let summary_scorer = match config.attention {
            AttentionMode::PaperLiteral => SummaryScorer::Literal {
                score: linear(&mut store, "summary.attention", 1, s, rng),
            },
            AttentionMode::Conditioned => SummaryScorer::Conditioned {
                query: linear(&mut store, "summary.attention.query", s, s, rng),
                key: linear(&mut store, "summary.attention.key", s, s, rng),
                bias: store.add("summary.attention.bias", Tensor::zeros(&[s])),
                score: linear(&mut store, "summary.attention.score", 1, s, rng),
            },
        };
        let summary_output = linear(&mut store, "summary.output", config.vocab_size, s, rng);
        let (gate_vector, gate_matrix) = match config.gate {
            GateVariant::None => (None, None),
            _ => {
                let bound = 1.0 / (s as f64).sqrt();
                let v = store.add("gate.v", Tensor::vector(uniform(rng, s, bound)));
                let w = linear(&mut store, "gate.w", s, s, rng);
                (Some(v), Some(w))
            }
        };
        Ok(Self {
            config,
            store,
            layout: Layout {
                embedding,
                enc_fwd,
                enc_bwd,
                decoder,
                da_attention,
                da_output,
                summary_scorer,
                summary_output,
                gate_vector,
                gate_matrix,
            },
        })
    }

    /// Rebuilds parameters from saved tensors, checking names and shapes.
    pub fn from_saved(config: ModelConfig, saved: Vec<Parameter>) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut fresh = Self::init(config, &mut rng)?;
        if saved.len() != fresh.store.len() {
            return Err(Error::contract(format!(
                "checkpoint holds {} tensors, configuration expects {}",
                saved.len(),
                fresh.store.len()
            )));
        }
        for p in saved {
            let id = fresh
                .store
                .find(&p.name)
                .ok_or_else(|| Error::contract(format!("unexpected tensor {:?} in checkpoint", p.name)))?;
            let expected = fresh.store.get(id).shape().to_vec();
            if p.value.shape() != expected.as_slice() {
                return Err(Error::shape("checkpoint tensor", p.value.shape(), &expected));
            }
            *fresh.store.get_mut(id) = p.value;
        }
        Ok(fresh)
    }

    pub fn saved(&self) -> Vec<Parameter> {
        self.store.iter().map(|(_, p)| p.clone()).collect()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.store.find(name)
    }

    pub fn da_output_id(&self) -> ParamId {
        self.layout.da_output
    }

    pub fn gate_vector_id(&self) -> Option<ParamId> {
        self.layout.gate_vector
    }

    pub fn gate_matrix_id(&self) -> Option<ParamId> {
        self.layout.gate_matrix
    }
}

/// Encoder states `h_i = [forward_i ; backward_i]` and the final state `h_K`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub states: Vec<Var>,
    pub final_state: Var,
}

/// Row-stochastic attention matrix: one row per query, one column per sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub rows: Vec<Vec<f64>>,
}

impl AttentionWeights {
    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.max_row_error() <= tol && self.rows.iter().flatten().all(|&x| x >= 0.0)
    }
}

/// Dialogue-act attention: weights over sentences and one context per sentence.
#[derive(Debug, Clone)]
pub struct DaAttention {
    /// `K` rows, each a softmax over sentences.
    pub weights: Vec<Var>,
    pub contexts: Vec<Var>,
}

pub fn sentence_embed(g: &mut Graph<'_>, params: &ModelParams, word_ids: &[usize]) -> Result<Var> {
    let table = g.param(params.layout.embedding);
    g.embed_mean(table, word_ids)
}

pub fn encode(g: &mut Graph<'_>, params: &ModelParams, sentence_vectors: &[Var]) -> Result<EncoderOutput> {
    let k = sentence_vectors.len();
    if k == 0 {
        return Err(Error::contract("cannot encode an empty dialogue"));
    }
    let h = params.config.hidden_dim;
    let mut state = LstmState::zeros(g, h);
    let mut forward = Vec::with_capacity(k);
    for &x in sentence_vectors {
        state = lstm_cell(g, x, &state, &params.layout.enc_fwd)?;
        forward.push(state.hidden);
    }
    let mut state = LstmState::zeros(g, h);
    let mut backward = vec![forward[0]; k];
    for i in (0..k).rev() {
        state = lstm_cell(g, sentence_vectors[i], &state, &params.layout.enc_bwd)?;
        backward[i] = state.hidden;
    }
    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncoderOutput {
        final_state: states[k - 1],
        states,
    })
}

/// Literal sigmoid-scored attention: `e_k = σ(w · h_k)`, softmax over k.
fn sigmoid_scored_attention(g: &mut Graph<'_>, score: ParamId, states: &[Var]) -> Result<(Var, Var)> {
    let w = g.param(score);
    let mut scores = Vec::with_capacity(states.len());
    for &h in states {
        let e = g.matmul(w, h)?;
        scores.push(g.sigmoid(e));
    }
    let scores = g.concat(&scores)?;
    let alpha = g.softmax(scores)?;
    let context = g.weighted_sum(alpha, states)?;
    Ok((alpha, context))
}

/// Dialogue-act attention. The score of sentence k does not depend on the
/// query sentence, so every row of the weight matrix is the same distribution.
pub fn da_attention(g: &mut Graph<'_>, params: &ModelParams, enc: &EncoderOutput) -> Result<DaAttention> {
    let score = params
        .layout
        .da_attention
        .ok_or_else(|| Error::contract("this gate variant has no dialogue-act attention"))?;
    let (alpha, context) = sigmoid_scored_attention(g, score, &enc.states)?;
    let k = enc.states.len();
    Ok(DaAttention {
        weights: vec![alpha; k],
        contexts: vec![context; k],
    })
}

fn da_logits(g: &mut Graph<'_>, params: &ModelParams, features: &[Var]) -> Result<Vec<Var>> {
    let w = g.param(params.layout.da_output);
    features.iter().map(|&f| g.matmul(w, f)).collect()
}

/// Ungated labeler: logits of `W_hy (h_i + c_i)`.
pub fn label_da_plain(g: &mut Graph<'_>, params: &ModelParams, states: &[Var], contexts: &[Var]) -> Result<Vec<Var>> {
    let features = states
        .iter()
        .zip(contexts)
        .map(|(&h, &c)| g.add(h, c))
        .collect::<Result<Vec<_>>>()?;
    da_logits(g, params, &features)
}

/// Precomputed per-sentence terms of summary attention.
#[derive(Debug, Clone)]
pub struct SummaryAttention {
    states: Vec<Var>,
    kind: PreparedScorer,
}

#[derive(Debug, Clone)]
enum PreparedScorer {
    /// Query-independent weights and context, shared by every step.
    Fixed { alpha: Var, context: Var },
    Conditioned {
        query: Var,
        score: Var,
        keys: Vec<Var>,
    },
}

impl SummaryAttention {
    pub fn prepare(g: &mut Graph<'_>, params: &ModelParams, enc: &EncoderOutput) -> Result<Self> {
        let kind = match params.layout.summary_scorer {
            SummaryScorer::Literal { score } => {
                let (alpha, context) = sigmoid_scored_attention(g, score, &enc.states)?;
                PreparedScorer::Fixed { alpha, context }
            }
            SummaryScorer::Conditioned {
                query,
                key,
                bias,
                score,
            } => {
                let wk = g.param(key);
                let b = g.param(bias);
                let keys = enc
                    .states
                    .iter()
                    .map(|&h| {
                        let kh = g.matmul(wk, h)?;
                        g.add(kh, b)
                    })
                    .collect::<Result<Vec<_>>>()?;
                PreparedScorer::Conditioned {
                    query: g.param(query),
                    score: g.param(score),
                    keys,
                }
            }
        };
        Ok(Self {
            states: enc.states.clone(),
            kind,
        })
    }
}

/// Summary attention for one decoder step: `(α^S row, c^S)`.
pub fn summary_attention(g: &mut Graph<'_>, attn: &SummaryAttention, decoder_state: Var) -> Result<(Var, Var)> {
    match &attn.kind {
        PreparedScorer::Fixed { alpha, context } => Ok((*alpha, *context)),
        PreparedScorer::Conditioned { query, score, keys } => {
            let q = g.matmul(*query, decoder_state)?;
            let mut scores = Vec::with_capacity(keys.len());
            for &k in keys {
                let pre = g.add(q, k)?;
                let act = g.tanh(pre);
                scores.push(g.matmul(*score, act)?);
            }
            let scores = g.concat(&scores)?;
            let alpha = g.softmax(scores)?;
            let context = g.weighted_sum(alpha, &attn.states)?;
            Ok((alpha, context))
        }
    }
}

fn gate_params(g: &mut Graph<'_>, params: &ModelParams) -> Result<(Var, Var)> {
    match (params.layout.gate_vector, params.layout.gate_matrix) {
        (Some(v), Some(w)) => Ok((g.param(v), g.param(w))),
        _ => Err(Error::contract("this gate variant has no sentence gate")),
    }
}

/// `g_i = Σ v ⊙ tanh(a_i + W c̄^S)` for each sentence feature `a_i`.
fn sentence_gate(g: &mut Graph<'_>, params: &ModelParams, features: &[Var], mean_context: Var) -> Result<Vec<Var>> {
    let (v, w) = gate_params(g, params)?;
    let projected = g.matmul(w, mean_context)?;
    features
        .iter()
        .map(|&a| {
            let pre = g.add(a, projected)?;
            let act = g.tanh(pre);
            let weighted = g.mul(v, act)?;
            Ok(g.sum(weighted))
        })
        .collect()
}

/// Gate from the dialogue-act contexts and the averaged summary context.
pub fn sentence_gate_full(g: &mut Graph<'_>, params: &ModelParams, da_contexts: &[Var], mean_context: Var) -> Result<Vec<Var>> {
    sentence_gate(g, params, da_contexts, mean_context)
}

/// Logits of `W_hy (h_i + c_i^DA · g_i)`.
pub fn label_da_gated_full(
    g: &mut Graph<'_>,
    params: &ModelParams,
    states: &[Var],
    da_contexts: &[Var],
    gates: &[Var],
) -> Result<Vec<Var>> {
    let features = states
        .iter()
        .zip(da_contexts)
        .zip(gates)
        .map(|((&h, &c), &gv)| {
            let scaled = g.mul(c, gv)?;
            g.add(h, scaled)
        })
        .collect::<Result<Vec<_>>>()?;
    da_logits(g, params, &features)
}

/// Summary-attention gate: `g_i = Σ v ⊙ tanh(h_i + W c̄^S)` and logits of
/// `W_hy (h_i + h_i · g_i)`.
pub fn sentence_gate_summary(
    g: &mut Graph<'_>,
    params: &ModelParams,
    states: &[Var],
    mean_context: Var,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let gates = sentence_gate(g, params, states, mean_context)?;
    let features = states
        .iter()
        .zip(&gates)
        .map(|(&h, &gv)| {
            let scaled = g.mul(h, gv)?;
            g.add(h, scaled)
        })
        .collect::<Result<Vec<_>>>()?;
    let logits = da_logits(g, params, &features)?;
    Ok((gates, logits))
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Vocabulary logits, one per emitted step.
    pub logits: Vec<Var>,
    pub attention: Vec<Var>,
    pub contexts: Vec<Var>,
    /// Emitted (greedy) or fed-forward (teacher forced) token ids.
    pub tokens: Vec<usize>,
}

/// Runs the summary decoder. With `target` the gold tokens are fed back
/// (teacher forcing) and one step is taken per target token; otherwise the
/// argmax token is fed back until EOS or `max_len` steps.
pub fn decode(
    g: &mut Graph<'_>,
    params: &ModelParams,
    enc: &EncoderOutput,
    target: Option<&[usize]>,
    max_len: usize,
) -> Result<DecodeOutput> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let attn = SummaryAttention::prepare(g, params, enc)?;
    let table = g.param(params.layout.embedding);
    let w_out = g.param(params.layout.summary_output);
    let mut state = LstmState {
        hidden: enc.final_state,
        cell: g.input(Tensor::zeros(&[params.config.state_dim()])),
    };
    let steps = match target {
        Some(t) => {
            if t.is_empty() {
                return Err(Error::contract("empty decoder target"));
            }
            t.len()
        }
        None => max_len,
    };
    let vocab = params.config.vocab_size;
    let mut out = DecodeOutput {
        logits: Vec::with_capacity(steps),
        attention: Vec::with_capacity(steps),
        contexts: Vec::with_capacity(steps),
        tokens: Vec::with_capacity(steps),
    };
    let mut prev = BOS;
    for step in 0..steps {
        let x = g.embed_mean(table, &[prev])?;
        state = lstm_cell(g, x, &state, &params.layout.decoder)?;
        let (alpha, context) = summary_attention(g, &attn, state.hidden)?;
        let mixed = g.add(state.hidden, context)?;
        let logits = g.matmul(w_out, mixed)?;
        out.logits.push(logits);
        out.attention.push(alpha);
        out.contexts.push(context);
        let next = match target {
            Some(t) => {
                if t[step] >= vocab {
                    return Err(Error::contract(format!("target id {} outside vocabulary", t[step])));
                }
                t[step]
            }
            None => argmax(g.value(logits).data()),
        };
        out.tokens.push(next);
        if target.is_none() && next == EOS {
            break;
        }
        prev = next;
    }
    Ok(out)
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub encoder: EncoderOutput,
    pub decode: DecodeOutput,
    pub da_attention: Option<DaAttention>,
    pub gates: Vec<Var>,
    pub da_logits: Vec<Var>,
}

/// Full joint forward pass. The decoder runs first; its averaged attention
/// context then drives the sentence gate and the labeler.
pub fn forward(
    g: &mut Graph<'_>,
    params: &ModelParams,
    sentences: &[Vec<usize>],
    target: Option<&[usize]>,
    max_len: usize,
) -> Result<ForwardOutput> {
    let vectors = sentences
        .iter()
        .map(|ids| sentence_embed(g, params, ids))
        .collect::<Result<Vec<_>>>()?;
    let encoder = encode(g, params, &vectors)?;
    let decoded = decode(g, params, &encoder, target, max_len)?;
    let (da_attn, gates, da_logits) = match params.config.gate {
        GateVariant::None => {
            let attn = da_attention(g, params, &encoder)?;
            let logits = label_da_plain(g, params, &encoder.states, &attn.contexts)?;
            (Some(attn), Vec::new(), logits)
        }
        GateVariant::Full => {
            let attn = da_attention(g, params, &encoder)?;
            let mean = g.mean(&decoded.contexts)?;
            let gates = sentence_gate_full(g, params, &attn.contexts, mean)?;
            let logits = label_da_gated_full(g, params, &encoder.states, &attn.contexts, &gates)?;
            (Some(attn), gates, logits)
        }
        GateVariant::Summary => {
            let mean = g.mean(&decoded.contexts)?;
            let (gates, logits) = sentence_gate_summary(g, params, &encoder.states, mean)?;
            (None, gates, logits)
        }
    };
    Ok(ForwardOutput {
        encoder,
        decode: decoded,
        da_attention: da_attn,
        gates,
        da_logits,
    })
}

/// Plain-valued result of greedy inference on one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Generated ids, without the terminating EOS.
    pub tokens: Vec<usize>,
    pub da_labels: Vec<usize>,
    pub da_distributions: Vec<Vec<f64>>,
    pub summary_attention: AttentionWeights,
    pub da_attention: Option<AttentionWeights>,
    pub gates: Vec<f64>,
}

fn rows(g: &Graph<'_>, vars: &[Var]) -> AttentionWeights {
    AttentionWeights {
        rows: vars.iter().map(|&v| g.value(v).data().to_vec()).collect(),
    }
}

impl ModelParams {
    pub fn predict(&self, sentences: &[Vec<usize>], max_len: usize) -> Result<Prediction> {
        let mut g = Graph::new(&self.store);
        let out = forward(&mut g, self, sentences, None, max_len)?;
        let da_distributions = out
            .da_logits
            .iter()
            .map(|&l| softmax(g.value(l).data()))
            .collect::<Result<Vec<_>>>()?;
        let mut tokens = out.decode.tokens.clone();
        if tokens.last() == Some(&EOS) {
            tokens.pop();
        }
        Ok(Prediction {
            tokens,
            da_labels: da_distributions.iter().map(|d| argmax(d)).collect(),
            summary_attention: rows(&g, &out.decode.attention),
            da_attention: out.da_attention.as_ref().map(|a| rows(&g, &a.weights)),
            gates: out.gates.iter().map(|&v| g.value(v).item()).collect(),
            da_distributions,
        })
    }
}

//! Shared fixtures and a plain-loop reference implementation of the model
//! used as an oracle by several integration tests.
#![allow(dead_code)]

use actsum::corpus::{EncodedSample, BOS, EOS};
use actsum::model::{AttentionMode, GateVariant, ModelConfig, ModelParams};
use actsum::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VARIANTS: [GateVariant; 3] = [GateVariant::Full, GateVariant::Summary, GateVariant::None];
pub const MODES: [AttentionMode; 2] = [AttentionMode::Conditioned, AttentionMode::PaperLiteral];

pub fn tiny_config(gate: GateVariant, attention: AttentionMode) -> ModelConfig {
    let mut c = ModelConfig::new(20, 4);
    c.embed_dim = 4;
    c.hidden_dim = 4;
    c.gate = gate;
    c.attention = attention;
    c
}

/// Initialises with larger-than-default embeddings so gradients are not tiny.
pub fn tiny_model(gate: GateVariant, attention: AttentionMode, seed: u64) -> ModelParams {
    let mut c = tiny_config(gate, attention);
    c.embed_init = 0.5;
    ModelParams::init(c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn random_sample(rng: &mut impl Rng, vocab: usize, labels: usize, k: usize, summary_len: usize) -> EncodedSample {
    let sentences = (0..k)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            (0..n).map(|_| rng.gen_range(4..vocab)).collect()
        })
        .collect();
    let acts = (0..k).map(|_| rng.gen_range(0..labels)).collect();
    let mut summary: Vec<usize> = (0..summary_len).map(|_| rng.gen_range(4..vocab)).collect();
    summary.push(EOS);
    EncodedSample { sentences, acts, summary }
}

fn param<'a>(store: &'a ParamStore, name: &str) -> &'a Tensor {
    store.get(store.find(name).unwrap_or_else(|| panic!("missing parameter {name}")))
}

fn has(store: &ParamStore, name: &str) -> bool {
    store.find(name).is_some()
}

pub fn mat_vec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    assert_eq!(c, x.len());
    let mut out = vec![0.0; r];
    for i in 0..r {
        for j in 0..c {
            out[i] += m.data()[i * c + j] * x[j];
        }
    }
    out
}

fn sigm(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax_ref(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn log_softmax_at(x: &[f64], t: usize) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x[t] - lse
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One LSTM step with gates stacked input, forget, candidate, output.
pub fn lstm_ref(store: &ParamStore, prefix: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = param(store, &format!("{prefix}.weight"));
    let b = param(store, &format!("{prefix}.bias")).data();
    let n = h.len();
    let xh: Vec<f64> = x.iter().chain(h).cloned().collect();
    let z = add(&mat_vec(w, &xh), b);
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let i = sigm(z[j]);
        let f = sigm(z[n + j]);
        let g = z[2 * n + j].tanh();
        let o = sigm(z[3 * n + j]);
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

pub fn embed_ref(store: &ParamStore, ids: &[usize]) -> Vec<f64> {
    let e = param(store, "embedding");
    let d = e.shape()[1];
    let mut out = vec![0.0; d];
    for &id in ids {
        for j in 0..d {
            out[j] += e.data()[id * d + j];
        }
    }
    out.iter().map(|v| v / ids.len() as f64).collect()
}

pub fn encode_ref(store: &ParamStore, cfg: &ModelConfig, sentences: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let h = cfg.hidden_dim;
    let xs: Vec<Vec<f64>> = sentences.iter().map(|s| embed_ref(store, s)).collect();
    let k = xs.len();
    let (mut hf, mut cf) = (vec![0.0; h], vec![0.0; h]);
    let mut fwd = Vec::new();
    for x in &xs {
        (hf, cf) = lstm_ref(store, "encoder.forward", x, &hf, &cf);
        fwd.push(hf.clone());
    }
    let (mut hb, mut cb) = (vec![0.0; h], vec![0.0; h]);
    let mut bwd = vec![Vec::new(); k];
    for i in (0..k).rev() {
        (hb, cb) = lstm_ref(store, "encoder.backward", &xs[i], &hb, &cb);
        bwd[i] = hb.clone();
    }
    (0..k).map(|i| fwd[i].iter().chain(&bwd[i]).cloned().collect()).collect()
}

fn sigmoid_attention(w: &Tensor, states: &[Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = states.iter().map(|h| sigm(dot(w.data(), h))).collect();
    softmax_ref(&scores)
}

fn weighted(alpha: &[f64], states: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; states[0].len()];
    for (a, h) in alpha.iter().zip(states) {
        for j in 0..out.len() {
            out[j] += a * h[j];
        }
    }
    out
}

/// Summary attention weights for decoder hidden state `hd`.
pub fn summary_attention_ref(store: &ParamStore, attention: AttentionMode, states: &[Vec<f64>], hd: &[f64]) -> Vec<f64> {
    match attention {
        AttentionMode::PaperLiteral => sigmoid_attention(param(store, "summary.attention"), states),
        AttentionMode::Conditioned => {
            let q = mat_vec(param(store, "summary.attention.query"), hd);
            let wk = param(store, "summary.attention.key");
            let b = param(store, "summary.attention.bias").data();
            let u = param(store, "summary.attention.score").data();
            let scores: Vec<f64> = states
                .iter()
                .map(|h| {
                    let pre = add(&add(&q, &mat_vec(wk, h)), b);
                    dot(u, &pre.iter().map(|v| v.tanh()).collect::<Vec<_>>())
                })
                .collect();
            softmax_ref(&scores)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefOutput {
    pub loss: f64,
    pub summary_attention: Vec<Vec<f64>>,
    pub gates: Vec<f64>,
    pub da_logits: Vec<Vec<f64>>,
}

/// Teacher-forced joint loss computed without the graph.
pub fn forward_ref(params: &ModelParams, sample: &EncodedSample, lambda_da: f64) -> RefOutput {
    let store = &params.store;
    let cfg = &params.config;
    let states = encode_ref(store, cfg, &sample.sentences);
    let k = states.len();
    let s = cfg.state_dim();

    let mut hd = states[k - 1].clone();
    let mut cd = vec![0.0; s];
    let mut prev = BOS;
    let mut contexts = Vec::new();
    let mut rows = Vec::new();
    let mut summary_nll = 0.0;
    for &t in &sample.summary {
        let x = embed_ref(store, &[prev]);
        (hd, cd) = lstm_ref(store, "decoder", &x, &hd, &cd);
        let alpha = summary_attention_ref(store, cfg.attention, &states, &hd);
        let ctx = weighted(&alpha, &states);
        let logits = mat_vec(param(store, "summary.output"), &add(&hd, &ctx));
        summary_nll -= log_softmax_at(&logits, t);
        contexts.push(ctx);
        rows.push(alpha);
        prev = t;
    }
    let n_steps = contexts.len() as f64;
    let mut mean_ctx = vec![0.0; s];
    for c in &contexts {
        for j in 0..s {
            mean_ctx[j] += c[j];
        }
    }
    for v in &mut mean_ctx {
        *v /= n_steps;
    }

    let gate = |a: &[f64]| -> f64 {
        let v = param(store, "gate.v").data();
        let wc = mat_vec(param(store, "gate.w"), &mean_ctx);
        (0..s).map(|j| v[j] * (a[j] + wc[j]).tanh()).sum()
    };
    let w_da = param(store, "da.output");
    let mut gates = Vec::new();
    let mut da_logits = Vec::new();
    match cfg.gate {
        GateVariant::None | GateVariant::Full => {
            assert!(has(store, "da.attention"));
            let alpha = sigmoid_attention(param(store, "da.attention"), &states);
            let c = weighted(&alpha, &states);
            for h in &states {
                let feat = if cfg.gate == GateVariant::None {
                    add(h, &c)
                } else {
                    let g = gate(&c);
                    gates.push(g);
                    add(h, &c.iter().map(|v| v * g).collect::<Vec<_>>())
                };
                da_logits.push(mat_vec(w_da, &feat));
            }
        }
        GateVariant::Summary => {
            for h in &states {
                let g = gate(h);
                gates.push(g);
                da_logits.push(mat_vec(w_da, &add(h, &h.iter().map(|v| v * g).collect::<Vec<_>>())));
            }
        }
    }
    let da_nll: f64 = da_logits
        .iter()
        .zip(&sample.acts)
        .map(|(l, &t)| -log_softmax_at(l, t))
        .sum();
    RefOutput {
        loss: summary_nll / n_steps + lambda_da * da_nll / k as f64,
        summary_attention: rows,
        gates,
        da_logits,
    }
}

/// Central finite differences of the reference loss for every scalar parameter.
pub fn fd_gradients(params: &ModelParams, sample: &EncodedSample, lambda_da: f64, step: f64) -> Vec<Vec<f64>> {
    let ids: Vec<_> = params.store.ids().collect();
    let mut work = params.clone();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = params.store.get(id).len();
        let mut g = vec![0.0; n];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = params.store.get(id).data()[j];
            work.store.get_mut(id).data_mut()[j] = orig + step;
            let up = forward_ref(&work, sample, lambda_da).loss;
            work.store.get_mut(id).data_mut()[j] = orig - step;
            let down = forward_ref(&work, sample, lambda_da).loss;
            work.store.get_mut(id).data_mut()[j] = orig;
            *gj = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub rel_error: f64,
    pub max_abs_diff: f64,
}

/// Compares analytic gradients of the joint loss with finite differences.
pub fn gradient_check(params: &ModelParams, sample: &EncodedSample, lambda_da: f64, step: f64) -> Vec<GradReport> {
    let (g, loss) = actsum::training::sample_loss(params, sample, lambda_da).unwrap();
    let mut grads = actsum::numerics::Gradients::zeros_like(&params.store);
    g.backward(loss, &mut grads).unwrap();
    let numeric = fd_gradients(params, sample, lambda_da, step);
    params
        .store
        .ids()
        .zip(numeric)
        .map(|(id, num)| {
            let ana = grads.get(id).data();
            GradReport {
                name: params.store.name(id).to_string(),
                rel_error: rel_error(ana, &num),
                max_abs_diff: ana.iter().zip(&num).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max),
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

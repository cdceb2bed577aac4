mod common;

use actsum::evaluation::{rouge_l, rouge_n, t_test_one_tailed, welch_t};
use actsum::model::{encode, sentence_embed, AttentionMode, GateVariant};
use actsum::numerics::{lstm_cell, matmul, softmax, Gradients, Graph, LstmParams, LstmState, ParamStore, Tensor};
use actsum::training::{joint_loss, Adam, AdamConfig};
use common::*;
use rand::Rng;

fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..50 {
        let (m, k, n) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..6));
        let a = random_tensor(&mut r, m, k);
        let b = random_tensor(&mut r, k, n);
        let c = matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut want = 0.0;
                for t in 0..k {
                    want += a.get2(i, t) * b.get2(t, j);
                }
                assert!((c.get2(i, j) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_matches_exp_ratios() {
    let mut r = rng(2);
    for _ in 0..200 {
        let n = r.gen_range(1..30);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-50.0..50.0)).collect();
        let p = softmax(&x).unwrap();
        // Exact identity p_i / p_j = exp(x_i - x_j), checked against the largest entry.
        let j = (0..n).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
        for i in 0..n {
            let want = (x[i] - x[j]).exp() * p[j];
            assert!((p[i] - want).abs() <= 1e-15 + 1e-12 * want);
        }
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    let p = softmax(&[1000.0, 1000.0, -1000.0]).unwrap();
    assert_eq!(p, vec![0.5, 0.5, 0.0]);
}

#[test]
fn lstm_cell_matches_scalar_loops() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let p = LstmParams::init(&mut store, "cell", 3, 5, 1.0, &mut r);
    let x: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
    let (want_h, want_c) = lstm_ref(&store, "cell", &x, &h, &c);
    let mut g = Graph::new(&store);
    let xv = g.input(Tensor::vector(x));
    let prev = LstmState {
        hidden: g.input(Tensor::vector(h)),
        cell: g.input(Tensor::vector(c)),
    };
    let next = lstm_cell(&mut g, xv, &prev, &p).unwrap();
    for (a, b) in g.value(next.hidden).data().iter().zip(&want_h) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in g.value(next.cell).data().iter().zip(&want_c) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn encoder_matches_scalar_blstm() {
    for seed in 0..5 {
        let params = tiny_model(GateVariant::Summary, AttentionMode::Conditioned, seed);
        let sample = random_sample(&mut rng(seed + 100), 20, 4, 4, 1);
        let mut g = Graph::new(&params.store);
        let xs: Vec<_> = sample
            .sentences
            .iter()
            .map(|s| sentence_embed(&mut g, &params, s).unwrap())
            .collect();
        let enc = encode(&mut g, &params, &xs).unwrap();
        let want = encode_ref(&params.store, &params.config, &sample.sentences);
        assert_eq!(enc.states.len(), want.len());
        for (v, w) in enc.states.iter().zip(&want) {
            for (a, b) in g.value(*v).data().iter().zip(w) {
                assert!((a - b).abs() < 1e-13);
            }
        }
        assert_eq!(g.value(enc.final_state).data(), g.value(*enc.states.last().unwrap()).data());
    }
}

#[test]
fn attention_and_gates_match_reference() {
    for gate in VARIANTS {
        for mode in MODES {
            let params = tiny_model(gate, mode, 9);
            let sample = random_sample(&mut rng(21), 20, 4, 5, 3);
            let want = forward_ref(&params, &sample, 1.0);
            let mut g = Graph::new(&params.store);
            let out = actsum::model::forward(&mut g, &params, &sample.sentences, Some(&sample.summary), 10).unwrap();
            for (row, w) in out.decode.attention.iter().zip(&want.summary_attention) {
                for (a, b) in g.value(*row).data().iter().zip(w) {
                    assert!((a - b).abs() < 1e-13);
                }
            }
            assert_eq!(out.gates.len(), want.gates.len());
            for (gv, w) in out.gates.iter().zip(&want.gates) {
                assert!((g.value(*gv).item() - w).abs() < 1e-12);
            }
            for (l, w) in out.da_logits.iter().zip(&want.da_logits) {
                for (a, b) in g.value(*l).data().iter().zip(w) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn joint_loss_matches_log_sum_oracle() {
    let mut r = rng(5);
    let dist = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    for _ in 0..20 {
        let da: Vec<Vec<f64>> = (0..4).map(|_| dist(&mut r, 3)).collect();
        let da_t: Vec<usize> = (0..4).map(|_| r.gen_range(0..3)).collect();
        let da_m = vec![true, true, false, true];
        let su: Vec<Vec<f64>> = (0..5).map(|_| dist(&mut r, 7)).collect();
        let su_t: Vec<usize> = (0..5).map(|_| r.gen_range(0..7)).collect();
        let su_m = vec![true, true, true, false, false];
        let lambda = r.gen_range(0.0..2.0);
        let got = joint_loss(&da, &da_t, &da_m, &su, &su_t, &su_m, lambda).unwrap();
        // log of the product of target probabilities, per part
        let log_prod = |d: &[Vec<f64>], t: &[usize], m: &[bool]| -> (f64, f64) {
            let mut lp = 0.0;
            let mut n = 0.0;
            for i in 0..d.len() {
                if m[i] {
                    lp += d[i][t[i]].ln();
                    n += 1.0;
                }
            }
            (lp, n)
        };
        let (ls, ns) = log_prod(&su, &su_t, &su_m);
        let (ld, nd) = log_prod(&da, &da_t, &da_m);
        let want = -ls / ns - lambda * ld / nd;
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn adam_matches_scalar_trace() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(0.5));
    let cfg = AdamConfig::default();
    let mut adam = Adam::new(cfg, &store);
    let grads_seq = [1.0, -0.3, 2.5];
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 1e-3);
    let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.5f64);
    for (t, &gval) in grads_seq.iter().enumerate() {
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(id).data_mut()[0] = gval;
        adam.step(&mut store, &g).unwrap();
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * gval;
        v = b2 * v + (1.0 - b2) * gval * gval;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        x -= lr * mh / (vh.sqrt() + eps);
        assert!((store.get(id).item() - x).abs() < 1e-15, "step {t}");
    }
    let first = 0.5 - lr * 1.0 / (1.0 + eps);
    let mut s2 = ParamStore::new();
    let id2 = s2.add("x", Tensor::scalar(0.5));
    let mut a2 = Adam::new(cfg, &s2);
    let mut g = Gradients::zeros_like(&s2);
    g.get_mut(id2).data_mut()[0] = 1.0;
    a2.step(&mut s2, &g).unwrap();
    assert!((s2.get(id2).item() - first).abs() < 1e-16);
}

/// Upper tail of Student's t with 4 degrees of freedom by Simpson's rule,
/// after mapping [t, ∞) onto [0, 1).
fn t4_upper_tail(t: f64) -> f64 {
    let density = |x: f64| 0.375 * (1.0 + x * x / 4.0).powf(-2.5);
    let f = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let x = t + u / (1.0 - u);
        density(x) / ((1.0 - u) * (1.0 - u))
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn t_test_matches_numerical_integration() {
    let a = [2.0, 4.0, 6.0];
    let b = [1.0, 3.0, 5.0];
    let (t, df) = welch_t(&a, &b).unwrap();
    assert!((df - 4.0).abs() < 1e-12);
    let p = t_test_one_tailed(&a, &b).unwrap();
    let want = t4_upper_tail(t);
    assert!((p - want).abs() < 1e-6, "{p} vs {want}");
    // a closed form for df = 4 as well
    let closed = 0.5 - 0.5 * (t / (t * t + 4.0).sqrt()) * (1.0 + 2.0 / (t * t + 4.0));
    assert!((p - closed).abs() < 1e-9, "{p} vs {closed}");
}

fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + lcs_brute(ra, rb)
            } else {
                lcs_brute(ra, b).max(lcs_brute(a, rb))
            }
        }
        _ => 0,
    }
}

#[test]
fn rouge_l_matches_brute_force_lcs() {
    let mut r = rng(7);
    for _ in 0..100 {
        let a: Vec<u8> = (0..r.gen_range(0..=10)).map(|_| r.gen_range(0..4)).collect();
        let b: Vec<u8> = (0..r.gen_range(0..=10)).map(|_| r.gen_range(0..4)).collect();
        let l = lcs_brute(&a, &b) as f64;
        let ta: Vec<String> = a.iter().map(|x| x.to_string()).collect();
        let tb: Vec<String> = b.iter().map(|x| x.to_string()).collect();
        let s = rouge_l(&ta, &tb);
        let p = if ta.is_empty() { 0.0 } else { l / ta.len() as f64 };
        let rc = if tb.is_empty() { 0.0 } else { l / tb.len() as f64 };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        assert_eq!((s.precision, s.recall, s.f1), (p, rc, f));
    }
}

/// Clipped overlap by enumerating n-gram lists and striking matches.
fn overlap_by_striking(h: &[&str], r: &[&str], n: usize) -> (usize, usize, usize) {
    let grams = |t: &[&str]| -> Vec<Vec<String>> {
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].iter().map(|s| s.to_string()).collect()).collect()
    };
    let hg = grams(h);
    let mut rg: Vec<Option<Vec<String>>> = grams(r).into_iter().map(Some).collect();
    let mut overlap = 0;
    for g in &hg {
        if let Some(slot) = rg.iter_mut().find(|s| s.as_ref() == Some(g)) {
            *slot = None;
            overlap += 1;
        }
    }
    (overlap, hg.len(), rg.len())
}

#[test]
fn rouge_n_matches_striking_oracle() {
    let words = ["the", "remote", "look", "and", "feel", "budget"];
    let mut r = rng(8);
    for _ in 0..300 {
        let h: Vec<&str> = (0..r.gen_range(0..8)).map(|_| words[r.gen_range(0..words.len())]).collect();
        let rf: Vec<&str> = (0..r.gen_range(0..8)).map(|_| words[r.gen_range(0..words.len())]).collect();
        for n in 1..=3 {
            let (o, hn, rn) = overlap_by_striking(&h, &rf, n);
            let s = rouge_n(&h, &rf, n);
            let p = if hn == 0 { 0.0 } else { o as f64 / hn as f64 };
            let rc = if rn == 0 { 0.0 } else { o as f64 / rn as f64 };
            assert_eq!((s.precision, s.recall), (p, rc));
        }
    }
}

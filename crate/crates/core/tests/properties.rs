mod common;

use actsum::corpus::{
    build_vocab, encode_batch, encode_sample, split_dataset, window_split, DialogueSample, EncodeOptions, SplitSizes,
    TranscriptUtterance, Utterance, EOS,
};
use actsum::evaluation::{rouge_l, rouge_n, t_test_one_tailed};
use actsum::model::{forward, label_da_plain, AttentionMode, GateVariant};
use actsum::numerics::{matmul, softmax, Graph, Tensor};
use common::*;
use proptest::prelude::*;

fn transcript() -> impl Strategy<Value = Vec<TranscriptUtterance>> {
    prop::collection::vec((1usize..25, 0usize..3), 0..40).prop_map(|spec| {
        spec.into_iter()
            .enumerate()
            .map(|(i, (n, topic))| TranscriptUtterance {
                meeting: "m".into(),
                speaker: ["A", "B", "C"][i % 3].into(),
                words: (0..n).map(|w| format!("u{i}w{w}")).collect(),
                dialogue_act: "Inform".into(),
                topic: format!("topic{topic}"),
            })
            .collect()
    })
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..12)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-300.0f64..300.0, 1..40), shift in -50.0f64..50.0) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matmul_is_associative(
        dims in (1usize..5, 1usize..5, 1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let (m, k, n, p) = dims;
        let mut r = rng(seed);
        let mut mk = |a: usize, b: usize| Tensor::matrix(a, b, (0..a * b).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let (a, b, c) = (mk(m, k), mk(k, n), mk(n, p));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn windows_reassemble_the_transcript(t in transcript(), w in 1usize..80) {
        let windows = window_split(&t, w);
        let rebuilt: Vec<(String, Vec<String>, String)> = windows
            .iter()
            .flat_map(|s| s.utterances.iter().map(|u| (u.speaker.clone(), u.words.clone(), u.dialogue_act.clone())))
            .collect();
        let original: Vec<(String, Vec<String>, String)> =
            t.iter().map(|u| (u.speaker.clone(), u.words.clone(), u.dialogue_act.clone())).collect();
        prop_assert_eq!(rebuilt, original);
        for (i, s) in windows.iter().enumerate() {
            if i + 1 < windows.len() {
                prop_assert!(s.word_count() >= w);
            }
            prop_assert!(!s.summary.is_empty());
        }
    }

    #[test]
    fn rouge_is_symmetric(h in tokens(), r in tokens()) {
        for n in 1..=3 {
            let a = rouge_n(&h, &r, n);
            let b = rouge_n(&r, &h, n);
            prop_assert_eq!(a.f1, b.f1);
            prop_assert_eq!(a.recall, b.precision);
        }
        let a = rouge_l(&h, &r);
        let b = rouge_l(&r, &h);
        prop_assert_eq!(a.f1, b.f1);
        prop_assert_eq!(a.recall, b.precision);
    }

    #[test]
    fn appending_a_reference_ngram_keeps_recall(h in tokens(), r in tokens(), n in 1usize..=3, pick in any::<prop::sample::Index>()) {
        prop_assume!(r.len() >= n);
        let start = pick.index(r.len() - n + 1);
        let mut longer = h.clone();
        longer.extend_from_slice(&r[start..start + n]);
        prop_assert!(rouge_n(&longer, &r, n).recall >= rouge_n(&h, &r, n).recall);
    }

    #[test]
    fn swapping_samples_mirrors_p(
        a in prop::collection::vec(0.0f64..1.0, 2..8),
        b in prop::collection::vec(0.0f64..1.0, 2..8),
    ) {
        if let (Ok(p), Ok(q)) = (t_test_one_tailed(&a, &b), t_test_one_tailed(&b, &a)) {
            prop_assert!((p + q - 1.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn splits_are_disjoint_and_sized(n in 0usize..60, seed in any::<u64>()) {
        let samples: Vec<DialogueSample> = (0..n)
            .map(|i| DialogueSample {
                id: Some(format!("s{i}")),
                utterances: vec![Utterance { speaker: "A".into(), words: vec!["x".into()], dialogue_act: "Inform".into() }],
                summary: vec!["t".into()],
            })
            .collect();
        let sizes = SplitSizes::default_for(n);
        let s = split_dataset(&samples, sizes, seed).unwrap();
        prop_assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (sizes.train, sizes.dev, sizes.test));
        let mut ids: Vec<_> = s.train.iter().chain(&s.dev).chain(&s.test).map(|x| x.id.clone()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}

fn dialogue(words: &[Vec<String>], summary: &[String]) -> DialogueSample {
    DialogueSample {
        id: None,
        utterances: words
            .iter()
            .enumerate()
            .map(|(i, w)| Utterance {
                speaker: format!("S{}", i % 2),
                words: w.clone(),
                dialogue_act: ["Inform", "Stall"][i % 2].into(),
            })
            .collect(),
        summary: summary.to_vec(),
    }
}

fn nonempty_tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..8)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn encode_decode_roundtrip(words in prop::collection::vec(nonempty_tokens(), 1..5), summary in nonempty_tokens()) {
        let s = dialogue(&words, &summary);
        let vocab = build_vocab(std::slice::from_ref(&s), false);
        let opts = EncodeOptions { speaker_tokens: false, ..EncodeOptions::default() };
        let e = encode_sample(&s, &vocab, &opts).unwrap();
        prop_assert_eq!(*e.summary.last().unwrap(), EOS);
        prop_assert_eq!(vocab.decode(&e.summary), summary);
        for (ids, w) in e.sentences.iter().zip(&words) {
            prop_assert_eq!(&vocab.decode(ids), w);
        }
    }

    #[test]
    fn padding_never_changes_a_sample(batch in prop::collection::vec((prop::collection::vec(nonempty_tokens(), 1..5), nonempty_tokens()), 1..5)) {
        let samples: Vec<DialogueSample> = batch.iter().map(|(w, s)| dialogue(w, s)).collect();
        let vocab = build_vocab(&samples, true);
        let opts = EncodeOptions::default();
        let b = encode_batch(&samples, &vocab, &opts).unwrap();
        for (i, s) in samples.iter().enumerate() {
            prop_assert_eq!(b.sample(i), encode_sample(s, &vocab, &opts).unwrap());
        }
        let k = b.max_sentences;
        for i in 0..b.batch_size {
            let real = samples[i].utterances.len();
            for j in 0..k {
                prop_assert_eq!(b.da_mask[i * k + j], j < real);
            }
        }
    }

    #[test]
    fn attention_rows_and_gate_bound(seed in any::<u64>(), k in 1usize..7, len in 0usize..4, variant in 0usize..3, mode in 0usize..2) {
        let params = tiny_model(VARIANTS[variant], MODES[mode], seed);
        let sample = random_sample(&mut rng(seed ^ 0xabc), 20, 4, k, len);
        let mut g = Graph::new(&params.store);
        let out = forward(&mut g, &params, &sample.sentences, Some(&sample.summary), 10).unwrap();
        for &row in &out.decode.attention {
            let r = g.value(row).data();
            prop_assert_eq!(r.len(), k);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(r.iter().all(|&x| x >= 0.0));
        }
        if let Some(da) = &out.da_attention {
            for &row in &da.weights {
                prop_assert!((g.value(row).data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        if let Some(v) = params.gate_vector_id() {
            let l1: f64 = params.store.get(v).data().iter().map(|x| x.abs()).sum();
            for &gv in &out.gates {
                prop_assert!(g.value(gv).item().abs() <= l1 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_gate_vector_collapses_to_plain_labeler(seed in any::<u64>(), k in 1usize..6, gated in prop::bool::ANY, mode in 0usize..2) {
        let gate = if gated { GateVariant::Full } else { GateVariant::Summary };
        let mut params = tiny_model(gate, MODES[mode], seed);
        params.store.get_mut(params.gate_vector_id().unwrap()).fill(0.0);
        let sample = random_sample(&mut rng(seed.wrapping_add(1)), 20, 4, k, 2);
        let mut g = Graph::new(&params.store);
        let out = forward(&mut g, &params, &sample.sentences, Some(&sample.summary), 10).unwrap();
        let zeros: Vec<_> = (0..k).map(|_| g.input(Tensor::zeros(&[params.config.state_dim()]))).collect();
        let plain = label_da_plain(&mut g, &params, &out.encoder.states, &zeros).unwrap();
        for (&a, &b) in out.da_logits.iter().zip(&plain) {
            prop_assert_eq!(g.value(a).data(), g.value(b).data());
        }
        for &gv in &out.gates {
            prop_assert_eq!(g.value(gv).item(), 0.0);
        }
    }

    #[test]
    fn greedy_prediction_is_deterministic(seed in any::<u64>(), k in 1usize..5) {
        let params = tiny_model(GateVariant::Summary, AttentionMode::Conditioned, seed);
        let sample = random_sample(&mut rng(seed), 20, 4, k, 1);
        let a = params.predict(&sample.sentences, 6).unwrap();
        let b = params.predict(&sample.sentences, 6).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.tokens.len() <= 6);
        prop_assert!(a.summary_attention.is_stochastic(1e-9));
    }
}

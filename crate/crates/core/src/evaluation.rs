//! ROUGE, dialogue-act accuracy, significance tests across runs, and
//! attention trace export.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{encode_input, DialogueSample, EncodeOptions, Vocabulary, EOS, RESERVED};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Prediction};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let precision = if hyp_total == 0 { 0.0 } else { overlap as f64 / hyp_total as f64 };
        let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str>>(hypothesis: &[S], reference: &[S], n: usize) -> Prf {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let hyp = ngram_counts(hypothesis, n);
    let refs = ngram_counts(reference, n);
    let overlap = hyp
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, hyp.values().sum(), refs.values().sum())
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common subsequence, β = 1.
pub fn rouge_l<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> Prf {
    Prf::from_counts(lcs_len(hypothesis, reference), hypothesis.len(), reference.len())
}

/// Fraction of unmasked positions where prediction equals gold.
pub fn da_accuracy<T: PartialEq>(predicted: &[T], gold: &[T], mask: &[bool]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.len() != mask.len() {
        return Err(Error::contract(format!(
            "accuracy over {} predictions, {} gold labels and {} mask entries",
            predicted.len(),
            gold.len(),
            mask.len()
        )));
    }
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return Err(Error::contract("accuracy over zero unmasked positions"));
    }
    let correct = predicted
        .iter()
        .zip(gold)
        .zip(mask)
        .filter(|((p, g), &m)| m && p == g)
        .count();
    Ok(correct as f64 / total as f64)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's t statistic and Welch–Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::UndefinedTest(format!(
            "need at least two values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Err(Error::UndefinedTest("both samples are constant and equal".into()));
        }
        let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok((t, f64::INFINITY));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok((t, df))
}

/// One-tailed Welch t-test of `mean(a) > mean(b)`; returns the upper-tail p.
pub fn t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<f64> {
    let (t, df) = welch_t(a, b)?;
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::UndefinedTest(e.to_string()))?;
    Ok(dist.sf(t))
}

/// Headline metrics of one run. Scores are fractions in [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge3: Prf,
    pub rouge_l: Prf,
    pub da_accuracy: f64,
}

pub const METRIC_NAMES: [&str; 13] = [
    "da_accuracy",
    "rouge1_f1",
    "rouge1_p",
    "rouge1_r",
    "rouge2_f1",
    "rouge2_p",
    "rouge2_r",
    "rouge3_f1",
    "rouge3_p",
    "rouge3_r",
    "rougeL_f1",
    "rougeL_p",
    "rougeL_r",
];

impl MetricSet {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut values = vec![self.da_accuracy];
        for prf in [&self.rouge1, &self.rouge2, &self.rouge3, &self.rouge_l] {
            values.extend([prf.f1, prf.precision, prf.recall]);
        }
        METRIC_NAMES.into_iter().zip(values).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: Option<String>,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge3: Prf,
    pub rouge_l: Prf,
    pub da_correct: usize,
    pub da_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub samples: Vec<SampleScores>,
    pub metrics: MetricSet,
}

/// Output of a summarizer on one dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutput {
    pub summary: Vec<String>,
    pub dialogue_acts: Vec<String>,
}

pub trait Summarizer {
    fn summarize(&self, sample: &DialogueSample) -> Result<SummaryOutput>;
}

/// Greedy-decoding summarizer backed by trained parameters.
#[derive(Debug, Clone)]
pub struct ModelSummarizer {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub encode: EncodeOptions,
}

impl ModelSummarizer {
    pub fn new(params: ModelParams, vocab: Vocabulary, encode: EncodeOptions) -> Result<Self> {
        if vocab.len() != params.config.vocab_size || vocab.num_labels() != params.config.num_labels {
            return Err(Error::contract(format!(
                "vocabulary ({} tokens, {} labels) does not match model ({} tokens, {} labels)",
                vocab.len(),
                vocab.num_labels(),
                params.config.vocab_size,
                params.config.num_labels
            )));
        }
        Ok(Self { params, vocab, encode })
    }

    pub fn predict(&self, sample: &DialogueSample) -> Result<Prediction> {
        let sentences = encode_input(sample, &self.vocab, &self.encode)?;
        self.params.predict(&sentences, self.encode.max_summary_len)
    }

    /// Every gold label must be known to the model's label inventory.
    pub fn check_labels(&self, samples: &[DialogueSample]) -> Result<()> {
        for s in samples {
            for u in &s.utterances {
                self.vocab.label_id(&u.dialogue_act)?;
            }
        }
        Ok(())
    }
}

impl Summarizer for ModelSummarizer {
    fn summarize(&self, sample: &DialogueSample) -> Result<SummaryOutput> {
        let p = self.predict(sample)?;
        Ok(SummaryOutput {
            summary: self.vocab.decode(&p.tokens),
            dialogue_acts: p.da_labels.iter().map(|&l| self.vocab.label(l).to_string()).collect(),
        })
    }
}

/// Scores one summarizer on a test split. Corpus ROUGE is the mean of
/// per-sample scores; accuracy is pooled over all sentences.
pub fn evaluate_run(summarizer: &impl Summarizer, test: &[DialogueSample]) -> Result<RunScores> {
    if test.is_empty() {
        return Err(Error::contract("test split is empty"));
    }
    let mut samples = Vec::with_capacity(test.len());
    let (mut correct, mut total) = (0, 0);
    for s in test {
        let out = summarizer.summarize(s)?;
        let gold: Vec<&str> = s.utterances.iter().map(|u| u.dialogue_act.as_str()).collect();
        let pred: Vec<&str> = out.dialogue_acts.iter().map(String::as_str).collect();
        let mask = vec![true; gold.len()];
        let acc = da_accuracy(&pred, &gold, &mask)?;
        let c = (acc * gold.len() as f64).round() as usize;
        correct += c;
        total += gold.len();
        let (h, r) = (&out.summary, &s.summary);
        samples.push(SampleScores {
            id: s.id.clone(),
            rouge1: rouge_n(h, r, 1),
            rouge2: rouge_n(h, r, 2),
            rouge3: rouge_n(h, r, 3),
            rouge_l: rouge_l(h, r),
            hypothesis: out.summary,
            reference: s.summary.clone(),
            da_correct: c,
            da_total: gold.len(),
        });
    }
    let n = samples.len() as f64;
    let avg = |f: &dyn Fn(&SampleScores) -> Prf| -> Prf {
        let mut acc = Prf::default();
        for s in &samples {
            let p = f(s);
            acc.precision += p.precision / n;
            acc.recall += p.recall / n;
            acc.f1 += p.f1 / n;
        }
        acc
    };
    let metrics = MetricSet {
        rouge1: avg(&|s| s.rouge1),
        rouge2: avg(&|s| s.rouge2),
        rouge3: avg(&|s| s.rouge3),
        rouge_l: avg(&|s| s.rouge_l),
        da_accuracy: correct as f64 / total as f64,
    };
    Ok(RunScores { samples, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// One-tailed p against the baseline; `None` without a baseline or when undefined.
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_runs: usize,
    pub runs: Vec<MetricSet>,
    pub mean: MetricSet,
    pub lines: Vec<MetricLine>,
    #[serde(default)]
    pub baseline: Option<String>,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    mean_var(x).1.sqrt()
}

impl EvalReport {
    /// Aggregates per-run metrics and, given a baseline report, attaches a
    /// one-tailed p-value per metric for `runs > baseline`.
    pub fn from_runs(runs: Vec<MetricSet>, baseline: Option<(&str, &EvalReport)>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::contract("report needs at least one run"));
        }
                let n = runs.len() as f64;
        let mut mean = MetricSet::default();
        let mean_of = |f: &dyn Fn(&MetricSet) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let avg_prf = |f: &dyn Fn(&MetricSet) -> Prf| Prf {
            precision: mean_of(&|m| f(m).precision),
            recall: mean_of(&|m| f(m).recall),
            f1: mean_of(&|m| f(m).f1),
        };
        mean.rouge1 = avg_prf(&|m| m.rouge1);
        mean.rouge2 = avg_prf(&|m| m.rouge2);
        mean.rouge3 = avg_prf(&|m| m.rouge3);
        mean.rouge_l = avg_prf(&|m| m.rouge_l);
        mean.da_accuracy = mean_of(&|m| m.da_accuracy);

        let mut lines = Vec::new();
        for name in METRIC_NAMES {
            let values: Vec<f64> = runs.iter().map(|m| m.get(name).unwrap_or(0.0)).collect();
            let p_value = baseline.and_then(|(_, b)| {
                let base: Vec<f64> = b.runs.iter().map(|m| m.get(name).unwrap_or(0.0)).collect();
                t_test_one_tailed(&values, &base).ok()
            });
            lines.push(MetricLine {
                name: name.to_string(),
                mean: mean.get(name).unwrap_or(0.0),
                std: std_dev(&values),
                significant: p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
                p_value,
            });
        }
        Ok(Self {
            n_runs: runs.len(),
            runs,
            mean,
            lines,
            baseline: baseline.map(|(n, _)| n.to_string()),
        })
    }

    /// One metric per line: `name  value%  std%  p`; a `*` marks p < 0.05.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# runs: {}", self.n_runs);
        if let Some(b) = &self.baseline {
            let _ = writeln!(out, "# baseline: {b}");
        }
        for l in &self.lines {
            let p = match l.p_value {
                Some(p) => format!("{p:.6}"),
                None => "undefined".into(),
            };
            let mark = if l.significant { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<14}{:>8.2}{:>8.2}  {p}{mark}",
                l.name,
                100.0 * l.mean,
                100.0 * l.std
            );
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = dir.join("report.txt");
        fs::write(&text, self.to_text()).map_err(|e| Error::io(&text, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        Ok((text, json))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Scores every summarizer (one per run) and aggregates.
pub fn evaluate<S: Summarizer>(runs: &[S], test: &[DialogueSample], baseline: Option<(&str, &EvalReport)>) -> Result<EvalReport> {
    let metrics = runs
        .iter()
        .map(|s| evaluate_run(s, test).map(|r| r.metrics))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_runs(metrics, baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSentence {
    pub speaker: String,
    pub text: String,
    pub gold_act: String,
    pub predicted_act: String,
    pub gate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub token: String,
    /// Summary attention over input sentences for this step.
    pub attention: Vec<f64>,
}

/// Everything needed to draw a sentence-by-token attention heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub sample_id: String,
    pub sentences: Vec<TraceSentence>,
    pub steps: Vec<TraceStep>,
    pub generated: Vec<String>,
    pub reference: Vec<String>,
}

impl AttentionTrace {
    pub fn max_row_error(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.attention.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// For each generated content token, the gold act of its most-attended sentence.
    pub fn focus_acts(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter(|s| !RESERVED.contains(&s.token.as_str()))
            .map(|s| {
                let k = crate::numerics::argmax(&s.attention);
                self.sentences[k].gold_act.as_str()
            })
            .collect()
    }
}

pub fn build_trace(model: &ModelSummarizer, sample: &DialogueSample, sample_id: &str) -> Result<AttentionTrace> {
    let pred = model.predict(sample)?;
    let vocab = &model.vocab;
    let mut step_tokens: Vec<String> = pred.tokens.iter().map(|&t| vocab.token(t).to_string()).collect();
    if pred.summary_attention.rows.len() > step_tokens.len() {
        step_tokens.push(vocab.token(EOS).to_string());
    }
    let steps = step_tokens
        .into_iter()
        .zip(&pred.summary_attention.rows)
        .map(|(token, row)| TraceStep {
            token,
            attention: row.clone(),
        })
        .collect();
    let sentences = sample
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| TraceSentence {
            speaker: u.speaker.clone(),
            text: u.words.join(" "),
            gold_act: u.dialogue_act.clone(),
            predicted_act: vocab.label(pred.da_labels[i]).to_string(),
            gate: pred.gates.get(i).copied(),
        })
        .collect();
    Ok(AttentionTrace {
        sample_id: sample_id.to_string(),
        sentences,
        steps,
        generated: vocab.decode(&pred.tokens),
        reference: sample.summary.clone(),
    })
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<out_dir>/<sample_id>.trace.json`.
pub fn export_trace(model: &ModelSummarizer, sample: &DialogueSample, sample_id: &str, out_dir: &Path) -> Result<PathBuf> {
    let trace = build_trace(model, sample, sample_id)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(format!("{}.trace.json", file_stem(sample_id)));
    fs::write(&path, serde_json::to_string_pretty(&trace)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Share of content tokens whose most-attended sentence carries `label`.
pub fn focus_rate(traces: &[AttentionTrace], label: &str) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for t in traces {
        for act in t.focus_acts() {
            total += 1;
            if act == label {
                hits += 1;
            }
        }
    }
    (hits, total)
}

pub fn metric_map(m: &MetricSet) -> BTreeMap<String, f64> {
    m.named().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

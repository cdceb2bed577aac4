//! Dialogue samples, transcript windowing, vocabularies and batch encoding.
//!
//! Dataset files are line-delimited JSON, one [`DialogueSample`] per line:
//!
//! ```text
//! {"id":"ES2002a_0003","sentences":[{"speaker":"A","words":"mm-hmm .","dialogue_act":"Backchannel"}],"summary":"look and usability"}
//! ```
//!
//! Raw transcripts fed to preprocessing are also line-delimited, one
//! utterance per line with its meeting id and topic description (see
//! [`TranscriptUtterance`]). Text is pre-tokenized: tokens are split on
//! whitespace and lowercased.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

pub const DEFAULT_WINDOW_WORDS: usize = 50;
pub const DEFAULT_MAX_SENTENCE_LEN: usize = 60;
pub const DEFAULT_MAX_SUMMARY_LEN: usize = 27;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Accepts `words` either as pre-tokenized text or as a token list.
#[derive(Deserialize)]
#[serde(untagged)]
enum WordsField {
    Text(String),
    Tokens(Vec<String>),
}

fn de_words<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    Ok(match WordsField::deserialize(d)? {
        WordsField::Text(s) => tokenize(&s),
        WordsField::Tokens(t) => t.iter().flat_map(|w| tokenize(w)).collect(),
    })
}

fn ser_words<S: serde::Serializer>(words: &[String], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&words.join(" "))
}

fn de_text<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    Ok(tokenize(&String::deserialize(d)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    #[serde(deserialize_with = "de_words", serialize_with = "ser_words")]
    pub words: Vec<String>,
    pub dialogue_act: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(rename = "sentences")]
    pub utterances: Vec<Utterance>,
    #[serde(default, deserialize_with = "de_text", serialize_with = "ser_words")]
    pub summary: Vec<String>,
}

impl DialogueSample {
    pub fn word_count(&self) -> usize {
        self.utterances.iter().map(|u| u.words.len()).sum()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.validate_dialogue()?;
        if self.summary.is_empty() {
            return Err("summary is empty".into());
        }
        Ok(())
    }

    fn validate_dialogue(&self) -> std::result::Result<(), String> {
        if self.utterances.is_empty() {
            return Err("sample has no sentences".into());
        }
        if let Some(i) = self.utterances.iter().position(|u| u.words.is_empty()) {
            return Err(format!("sentence {i} has no words"));
        }
        Ok(())
    }
}

/// One line of a raw transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptUtterance {
    pub meeting: String,
    pub speaker: String,
    #[serde(deserialize_with = "de_words", serialize_with = "ser_words")]
    pub words: Vec<String>,
    pub dialogue_act: String,
    pub topic: String,
}

/// Cuts one transcript into consecutive non-overlapping windows of whole
/// utterances. Utterances are appended until the window holds at least
/// `window_words` words; the last window may be shorter. The summary is the
/// window's topic description, with changes of topic concatenated in order
/// of appearance (adjacent repeats merged).
pub fn window_split(transcript: &[TranscriptUtterance], window_words: usize) -> Vec<DialogueSample> {
    assert!(window_words >= 1, "window_words must be positive");
    let mut samples = Vec::new();
    let mut start = 0;
    while start < transcript.len() {
        let mut end = start;
        let mut words = 0;
        while end < transcript.len() && words < window_words {
            words += transcript[end].words.len();
            end += 1;
        }
        let group = &transcript[start..end];
        let mut topics: Vec<&str> = Vec::new();
        for u in group {
            if topics.last() != Some(&u.topic.as_str()) {
                topics.push(&u.topic);
            }
        }
        samples.push(DialogueSample {
            id: Some(format!("{}_{:04}", group[0].meeting, samples.len())),
            utterances: group
                .iter()
                .map(|u| Utterance {
                    speaker: u.speaker.clone(),
                    words: u.words.clone(),
                    dialogue_act: u.dialogue_act.clone(),
                })
                .collect(),
            summary: topics.iter().flat_map(|t| tokenize(t)).collect(),
        });
        start = end;
    }
    samples
}

/// Groups transcript lines by meeting, keeping first-appearance order.
pub fn group_by_meeting(lines: Vec<TranscriptUtterance>) -> Vec<Vec<TranscriptUtterance>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<TranscriptUtterance>> = HashMap::new();
    for line in lines {
        if !groups.contains_key(&line.meeting) {
            order.push(line.meeting.clone());
        }
        groups.entry(line.meeting.clone()).or_default().push(line);
    }
    order
        .into_iter()
        .map(|m| groups.remove(&m).unwrap_or_default())
        .collect()
}

pub fn speaker_token(speaker: &str) -> String {
    format!("<spk_{}>", speaker.to_lowercase())
}

/// Model-side tokens of a sentence, optionally led by its speaker tag.
pub fn sentence_tokens(u: &Utterance, speaker_tokens: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(u.words.len() + 1);
    if speaker_tokens {
        out.push(speaker_token(&u.speaker));
    }
    out.extend(u.words.iter().cloned());
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    label_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_parts(tokens: Vec<String>, counts: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED.map(String::from) {
            return Err(Error::contract("vocabulary must start with the reserved tokens"));
        }
        if counts.len() != tokens.len() {
            return Err(Error::contract("vocabulary counts do not match tokens"));
        }
        let mut v = Self {
            tokens,
            counts,
            labels,
            index: HashMap::new(),
            label_index: HashMap::new(),
        };
        v.reindex()?;
        Ok(v)
    }

    /// Rebuilds lookup maps after deserialization.
    pub fn reindex(&mut self) -> Result<()> {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self.label_index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if self.index.len() != self.tokens.len() || self.label_index.len() != self.labels.len() {
            return Err(Error::contract("vocabulary contains duplicate entries"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-reserved tokens.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_id(&self, label: &str) -> Result<usize> {
        self.label_index
            .get(label)
            .copied()
            .ok_or_else(|| Error::contract(format!("unknown dialogue act {label:?}")))
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, stopping at EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// Stable identity used to match checkpoints against data.
    pub fn fingerprint(&self) -> String {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.tokens.hash(&mut h);
        self.labels.hash(&mut h);
        format!("{:016x}", h.finish())
    }

    /// `token<TAB>id<TAB>count` per line.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{t}\t{i}\t{}\n", self.counts[i]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Builds the token and label inventories from training samples only.
/// Tokens are ordered by descending count, ties broken lexicographically;
/// labels are sorted.
pub fn build_vocab(samples: &[DialogueSample], speaker_tokens: bool) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    for s in samples {
        for u in &s.utterances {
            for t in sentence_tokens(u, speaker_tokens) {
                *counts.entry(t).or_default() += 1;
            }
            if !labels.contains(&u.dialogue_act) {
                labels.push(u.dialogue_act.clone());
            }
        }
        for t in &s.summary {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    labels.sort();

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let mut token_counts = vec![0; RESERVED.len()];
    for (t, c) in entries {
        tokens.push(t);
        token_counts.push(c);
    }
    Vocabulary::from_parts(tokens, token_counts, labels).expect("freshly built vocabulary is consistent")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub speaker_tokens: bool,
    pub max_sentence_len: usize,
    /// Includes the terminating EOS.
    pub max_summary_len: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            speaker_tokens: true,
            max_sentence_len: DEFAULT_MAX_SENTENCE_LEN,
            max_summary_len: DEFAULT_MAX_SUMMARY_LEN,
        }
    }
}

/// Unpadded id view of one sample, as consumed by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub sentences: Vec<Vec<usize>>,
    pub acts: Vec<usize>,
    /// Summary ids terminated by EOS.
    pub summary: Vec<usize>,
}

fn encode_sentences(sample: &DialogueSample, vocab: &Vocabulary, opts: &EncodeOptions) -> Vec<Vec<usize>> {
    sample
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut ids = vocab.encode(&sentence_tokens(u, opts.speaker_tokens));
            if ids.len() > opts.max_sentence_len {
                log::warn!(
                    "sample {:?} sentence {i}: truncating {} tokens to {}",
                    sample.id,
                    ids.len(),
                    opts.max_sentence_len
                );
                ids.truncate(opts.max_sentence_len);
            }
            ids
        })
        .collect()
}

/// Encodes sentences only, for inference on dialogues without labels.
pub fn encode_input(sample: &DialogueSample, vocab: &Vocabulary, opts: &EncodeOptions) -> Result<Vec<Vec<usize>>> {
    if sample.utterances.is_empty() {
        return Err(Error::contract("dialogue has no sentences"));
    }
    let sentences = encode_sentences(sample, vocab, opts);
    if sentences.iter().any(Vec::is_empty) {
        return Err(Error::contract("dialogue contains an empty sentence"));
    }
    Ok(sentences)
}

pub fn encode_sample(sample: &DialogueSample, vocab: &Vocabulary, opts: &EncodeOptions) -> Result<EncodedSample> {
    let sentences = encode_input(sample, vocab, opts)?;
    let acts = sample
        .utterances
        .iter()
        .map(|u| vocab.label_id(&u.dialogue_act))
        .collect::<Result<Vec<_>>>()?;
    if sample.summary.len() + 1 > opts.max_summary_len {
        return Err(Error::contract(format!(
            "summary of {} tokens does not fit max_summary_len {} (EOS included)",
            sample.summary.len(),
            opts.max_summary_len
        )));
    }
    if sample.summary.is_empty() {
        return Err(Error::contract("summary is empty"));
    }
    let mut summary = vocab.encode(&sample.summary);
    summary.push(EOS);
    Ok(EncodedSample {
        sentences,
        acts,
        summary,
    })
}

/// Padded id tensors for a batch. Layouts are row-major:
/// words `[batch, sentences, words]`, sentence-level `[batch, sentences]`,
/// summary `[batch, summary]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub max_sentences: usize,
    pub max_words: usize,
    pub max_summary: usize,
    pub word_ids: Vec<usize>,
    pub word_mask: Vec<bool>,
    pub sentence_mask: Vec<bool>,
    pub da_ids: Vec<usize>,
    pub da_mask: Vec<bool>,
    pub summary_ids: Vec<usize>,
    pub summary_mask: Vec<bool>,
}

impl Batch {
    /// Strips padding from sample `b`.
    pub fn sample(&self, b: usize) -> EncodedSample {
        let (k, t) = (self.max_sentences, self.max_words);
        let mut sentences = Vec::new();
        let mut acts = Vec::new();
        for s in 0..k {
            if !self.sentence_mask[b * k + s] {
                continue;
            }
            let base = (b * k + s) * t;
            sentences.push(
                (0..t)
                    .filter(|&w| self.word_mask[base + w])
                    .map(|w| self.word_ids[base + w])
                    .collect(),
            );
            acts.push(self.da_ids[b * k + s]);
        }
        let m = self.max_summary;
        let summary = (0..m)
            .filter(|&j| self.summary_mask[b * m + j])
            .map(|j| self.summary_ids[b * m + j])
            .collect();
        EncodedSample {
            sentences,
            acts,
            summary,
        }
    }

    pub fn samples(&self) -> Vec<EncodedSample> {
        (0..self.batch_size).map(|b| self.sample(b)).collect()
    }
}

pub fn encode_batch(samples: &[DialogueSample], vocab: &Vocabulary, opts: &EncodeOptions) -> Result<Batch> {
    let encoded = samples
        .iter()
        .map(|s| encode_sample(s, vocab, opts))
        .collect::<Result<Vec<_>>>()?;
    let max_sentences = encoded.iter().map(|e| e.sentences.len()).max().unwrap_or(0);
    let max_words = encoded
        .iter()
        .flat_map(|e| e.sentences.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let (bsz, k, t, m) = (encoded.len(), max_sentences, max_words, opts.max_summary_len);
    let mut batch = Batch {
        batch_size: bsz,
        max_sentences: k,
        max_words: t,
        max_summary: m,
        word_ids: vec![PAD; bsz * k * t],
        word_mask: vec![false; bsz * k * t],
        sentence_mask: vec![false; bsz * k],
        da_ids: vec![PAD; bsz * k],
        da_mask: vec![false; bsz * k],
        summary_ids: vec![PAD; bsz * m],
        summary_mask: vec![false; bsz * m],
    };
    for (b, e) in encoded.iter().enumerate() {
        for (s, sentence) in e.sentences.iter().enumerate() {
            batch.sentence_mask[b * k + s] = true;
            batch.da_mask[b * k + s] = true;
            batch.da_ids[b * k + s] = e.acts[s];
            for (w, &id) in sentence.iter().enumerate() {
                batch.word_ids[(b * k + s) * t + w] = id;
                batch.word_mask[(b * k + s) * t + w] = true;
            }
        }
        for (j, &id) in e.summary.iter().enumerate() {
            batch.summary_ids[b * m + j] = id;
            batch.summary_mask[b * m + j] = true;
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Dev and test get `min(400, n/10)` each; train takes the rest.
    pub fn default_for(n: usize) -> Self {
        let held = (n / 10).min(400);
        Self {
            train: n - 2 * held,
            dev: held,
            test: held,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<DialogueSample>,
    pub dev: Vec<DialogueSample>,
    pub test: Vec<DialogueSample>,
}

/// Seeded random partition into disjoint train/dev/test groups.
pub fn split_dataset(samples: &[DialogueSample], sizes: SplitSizes, seed: u64) -> Result<Splits> {
    let total = sizes.train + sizes.dev + sizes.test;
    if total > samples.len() {
        return Err(Error::contract(format!(
            "requested {}+{}+{} = {total} samples from a corpus of {}",
            sizes.train,
            sizes.dev,
            sizes.test,
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<DialogueSample> {
        order[range].iter().map(|&i| samples[i].clone()).collect()
    };
    let a = sizes.train;
    let b = a + sizes.dev;
    Ok(Splits {
        train: take(0..a),
        dev: take(a..b),
        test: take(b..total),
    })
}

/// Dataset statistics in the shape of the usual corpus summary table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub vocabulary_size: usize,
    pub dialogue_acts: usize,
    pub min_summary_length: usize,
    pub max_summary_length: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

impl CorpusStats {
    /// Vocabulary and label counts come from the training split; summary
    /// lengths span all splits.
    pub fn compute(splits: &Splits) -> Self {
        if splits.train.is_empty() && splits.dev.is_empty() && splits.test.is_empty() {
            return Self::default();
        }
        let vocab = build_vocab(&splits.train, false);
        let lens = splits
            .train
            .iter()
            .chain(&splits.dev)
            .chain(&splits.test)
            .map(|s| s.summary.len());
        Self {
            vocabulary_size: vocab.content_len(),
            dialogue_acts: vocab.num_labels(),
            min_summary_length: lens.clone().min().unwrap_or(0),
            max_summary_length: lens.max().unwrap_or(0),
            train_size: splits.train.len(),
            dev_size: splits.dev.len(),
            test_size: splits.test.len(),
        }
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Vocabulary Size\t{}", self.vocabulary_size)?;
        writeln!(f, "#Dialogue Act\t{}", self.dialogue_acts)?;
        writeln!(f, "Min Summary Length\t{}", self.min_summary_length)?;
        writeln!(f, "Max Summary Length\t{}", self.max_summary_length)?;
        writeln!(f, "Training Set Size\t{}", self.train_size)?;
        writeln!(f, "Development Set Size\t{}", self.dev_size)?;
        writeln!(f, "Testing Set Size\t{}", self.test_size)
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    check: impl Fn(&T) -> std::result::Result<(), String>,
) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: T = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        check(&value).map_err(record_err)?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> Result<Vec<DialogueSample>> {
    read_jsonl(path, DialogueSample::validate)
}

/// Like [`read_samples`] but the summary may be absent, as for unseen input.
pub fn read_dialogues(path: &Path) -> Result<Vec<DialogueSample>> {
    read_jsonl(path, DialogueSample::validate_dialogue)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptUtterance>> {
    read_jsonl(path, |u: &TranscriptUtterance| {
        if u.words.is_empty() {
            Err("utterance has no words".into())
        } else {
            Ok(())
        }
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn write_samples(path: &Path, samples: &[DialogueSample]) -> Result<()> {
    write_jsonl(path, samples)
}

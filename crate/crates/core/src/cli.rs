//! Subcommands of the `actsum` binary and the synthetic dialogue generator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab, group_by_meeting, read_dialogues, read_samples, read_transcripts, split_dataset, window_split,
    write_samples, CorpusStats, DialogueSample, SplitSizes, Splits, Utterance,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_trace, EvalReport, ModelSummarizer};
use crate::training::{multi_run, train, Checkpoint, RunResult, TrainConfig, TrainData};

pub const INFORM: &str = "Inform";
pub const TOPIC_SLOT: &str = "{topics}";

const DEFAULT_TOPICS: [&str; 40] = [
    "budget", "remote", "battery", "button", "screen", "design", "colour", "material", "rubber", "plastic",
    "speech", "interface", "cost", "market", "trend", "fashion", "logo", "shape", "case", "chip", "speaker",
    "lighting", "scroll", "wheel", "channel", "volume", "menu", "prototype", "evaluation", "user", "target",
    "sales", "profit", "energy", "solar", "kinetic", "titanium", "wood", "sponge", "curve",
];

/// Sentence patterns for one dialogue act. Inform patterns carry a
/// [`TOPIC_SLOT`] that receives the sentence's keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActTemplate {
    pub act: String,
    pub patterns: Vec<String>,
}

/// Parameters of the synthetic corpus. Only Inform sentences mention topic
/// keywords, and a dialogue's summary is exactly those keywords in order of
/// appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub seed: u64,
    pub topics: Vec<String>,
    pub templates: Vec<ActTemplate>,
    pub speakers: Vec<String>,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Relative weights for dialogues with 0, 1, 2, ... Inform sentences.
    pub inform_weights: Vec<u32>,
    pub max_keywords: usize,
    /// Summary of a dialogue without Inform sentences.
    pub empty_topic: String,
}

fn template(act: &str, patterns: &[&str]) -> ActTemplate {
    ActTemplate {
        act: act.into(),
        patterns: patterns.iter().map(|p| p.to_string()).collect(),
    }
}

impl SyntheticSpec {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            topics: DEFAULT_TOPICS.iter().map(|t| t.to_string()).collect(),
            templates: vec![
                template(
                    INFORM,
                    &[
                        "so the {topics} is what we need to discuss",
                        "next on the list is the {topics}",
                        "i looked into the {topics} last week",
                    ],
                ),
                template("Assess", &["that sounds really good", "i like that a lot"]),
                template("Suggest", &["maybe we could try something else", "we should probably vote on it"]),
                template("Backchannel", &["mm-hmm", "yeah", "right"]),
                template("Stall", &["um", "uh", "well um"]),
                template("Offer", &["i can take care of that", "let me draw it on the board"]),
            ],
            speakers: ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect(),
            min_sentences: 4,
            max_sentences: 10,
            inform_weights: vec![1, 5, 3, 1],
            max_keywords: 3,
            empty_topic: "smalltalk".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inform = self.templates.iter().filter(|t| t.act == INFORM).count();
        if inform != 1 || self.templates.len() < 2 {
            return Err(Error::contract("templates need exactly one Inform act and at least one other act"));
        }
        if let Some(t) = self.templates.iter().find(|t| t.patterns.is_empty()) {
            return Err(Error::contract(format!("act {} has no patterns", t.act)));
        }
        let inform = self.templates.iter().find(|t| t.act == INFORM).expect("checked above");
        if inform.patterns.iter().any(|p| !p.contains(TOPIC_SLOT)) {
            return Err(Error::contract(format!("every Inform pattern must contain {TOPIC_SLOT}")));
        }
        let max_inform = self.inform_weights.len().saturating_sub(1);
        let checks = [
            (self.n_samples >= 1, "n_samples must be at least 1"),
            (!self.speakers.is_empty(), "speakers must not be empty"),
            (self.min_sentences >= 1, "min_sentences must be at least 1"),
            (self.min_sentences <= self.max_sentences, "min_sentences exceeds max_sentences"),
            (self.inform_weights.iter().any(|&w| w > 0), "inform_weights must not all be zero"),
            (self.max_keywords >= 1, "max_keywords must be at least 1"),
            (
                max_inform * self.max_keywords <= self.topics.len(),
                "topic pool too small for the keyword budget",
            ),
            (!self.empty_topic.is_empty(), "empty_topic must be set"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::contract(msg));
            }
        }
        Ok(())
    }

    fn patterns(&self, act: &str) -> &[String] {
        &self
            .templates
            .iter()
            .find(|t| t.act == act)
            .unwrap_or_else(|| panic!("no template for act {act}"))
            .patterns
    }

    /// Builds one dialogue from `(act, keywords)` sentence plans, using the
    /// first pattern and speaker cycling. Keywords are ignored for non-Inform acts.
    pub fn render(&self, id: Option<String>, plan: &[(&str, Vec<String>)]) -> DialogueSample {
        let utterances = plan
            .iter()
            .enumerate()
            .map(|(i, (act, kws))| self.utterance(act, &self.patterns(act)[0], kws, &self.speakers[i % self.speakers.len()]))
            .collect();
        self.finish(id, utterances, plan.iter().filter(|(a, _)| *a == INFORM).flat_map(|(_, k)| k.clone()))
    }

    fn utterance(&self, act: &str, pattern: &str, keywords: &[String], speaker: &str) -> Utterance {
        let text = if act == INFORM {
            pattern.replace(TOPIC_SLOT, &keywords.join(" and "))
        } else {
            pattern.to_string()
        };
        Utterance {
            speaker: speaker.to_string(),
            words: crate::corpus::tokenize(&text),
            dialogue_act: act.to_string(),
        }
    }

    fn finish(&self, id: Option<String>, utterances: Vec<Utterance>, keywords: impl Iterator<Item = String>) -> DialogueSample {
        let mut summary: Vec<String> = Vec::new();
        for k in keywords {
            if !summary.contains(&k) {
                summary.push(k);
            }
        }
        if summary.is_empty() {
            summary.push(self.empty_topic.clone());
        }
        DialogueSample { id, utterances, summary }
    }

    fn sample(&self, index: usize, rng: &mut impl Rng) -> DialogueSample {
        let k = rng.gen_range(self.min_sentences..=self.max_sentences);
        let weights: Vec<u32> = self
            .inform_weights
            .iter()
            .enumerate()
            .map(|(n, &w)| if n <= k { w } else { 0 })
            .collect();
        let total: u32 = weights.iter().sum();
        let mut pick = rng.gen_range(0..total);
        let mut n_inform = 0;
        for (n, &w) in weights.iter().enumerate() {
            if pick < w {
                n_inform = n;
                break;
            }
            pick -= w;
        }
        let mut inform_at = (0..k).choose_multiple(rng, n_inform);
        inform_at.sort_unstable();

        let mut pool: Vec<usize> = (0..self.topics.len()).collect();
        pool.shuffle(rng);
        let others: Vec<&ActTemplate> = self.templates.iter().filter(|t| t.act != INFORM).collect();
        let mut utterances = Vec::with_capacity(k);
        let mut keywords = Vec::new();
        for i in 0..k {
            let speaker = self.speakers.choose(rng).expect("validated");
            if inform_at.contains(&i) {
                let n = rng.gen_range(1..=self.max_keywords);
                let mut chosen: Vec<usize> = pool.drain(..n).collect();
                chosen.sort_unstable();
                let kws: Vec<String> = chosen.iter().map(|&t| self.topics[t].clone()).collect();
                let pattern = self.patterns(INFORM).choose(rng).expect("validated");
                utterances.push(self.utterance(INFORM, pattern, &kws, speaker));
                keywords.extend(kws);
            } else {
                let t = others.choose(rng).expect("validated");
                let pattern = t.patterns.choose(rng).expect("validated");
                utterances.push(self.utterance(&t.act, pattern, &[], speaker));
            }
        }
        self.finish(Some(format!("syn_{index:05}")), utterances, keywords.into_iter())
    }
}

/// Deterministic synthetic corpus for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DialogueSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_samples).map(|i| spec.sample(i, &mut rng)).collect())
}

/// Writes split files, the training vocabulary, labels and statistics.
pub fn write_dataset(splits: &Splits, out_dir: &Path) -> Result<CorpusStats> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_samples(&out_dir.join("train.jsonl"), &splits.train)?;
    write_samples(&out_dir.join("dev.jsonl"), &splits.dev)?;
    write_samples(&out_dir.join("test.jsonl"), &splits.test)?;
    let vocab = build_vocab(&splits.train, false);
    vocab.write_tsv(&out_dir.join("vocab.tsv"))?;
    let labels = out_dir.join("labels.txt");
    let text: String = vocab.labels().iter().map(|l| format!("{l}\n")).collect();
    fs::write(&labels, text).map_err(|e| Error::io(&labels, e))?;
    let stats = CorpusStats::compute(splits);
    let txt = out_dir.join("stats.txt");
    fs::write(&txt, stats.to_string()).map_err(|e| Error::io(&txt, e))?;
    let json = out_dir.join("stats.json");
    fs::write(&json, serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io(&json, e))?;
    Ok(stats)
}

/// Windows raw transcripts into samples, splits them and writes the dataset.
pub fn cmd_preprocess(input: &Path, window_words: usize, out_dir: &Path, seed: u64, sizes: Option<SplitSizes>) -> Result<CorpusStats> {
    if window_words == 0 {
        return Err(Error::contract("window_words must be positive"));
    }
    let lines = read_transcripts(input)?;
    let samples: Vec<DialogueSample> = group_by_meeting(lines)
        .iter()
        .flat_map(|m| window_split(m, window_words))
        .collect();
    let sizes = sizes.unwrap_or_else(|| SplitSizes::default_for(samples.len()));
    let splits = split_dataset(&samples, sizes, seed)?;
    write_dataset(&splits, out_dir)
}

pub fn cmd_gen_synthetic(spec: &SyntheticSpec, out_dir: &Path, sizes: Option<SplitSizes>) -> Result<CorpusStats> {
    let samples = generate_synthetic(spec)?;
    let sizes = sizes.unwrap_or_else(|| SplitSizes::default_for(samples.len()));
    let splits = split_dataset(&samples, sizes, spec.seed)?;
    write_dataset(&splits, out_dir)
}

fn split_file(data: &Path, split: &str) -> PathBuf {
    if data.is_dir() {
        data.join(format!("{split}.jsonl"))
    } else {
        data.to_path_buf()
    }
}

/// Trains one run (`n_runs = 1`) or several seeded runs, as the config says.
pub fn cmd_train(config: &TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<Vec<RunResult>> {
    config.validate()?;
    if !data_dir.is_dir() {
        return Err(Error::io(
            data_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    let train_set = read_samples(&data_dir.join("train.jsonl"))?;
    let dev_path = data_dir.join("dev.jsonl");
    let dev_set = if dev_path.exists() { read_samples(&dev_path)? } else { Vec::new() };
    let data = TrainData::from_samples(&train_set, &dev_set, &config.encode_options())?;
    log::info!(
        "{} training and {} dev samples, vocabulary {}, {} labels",
        data.train.len(),
        data.dev.len(),
        data.vocab.len(),
        data.vocab.num_labels()
    );
    if config.n_runs == 1 {
        let params = config.init_model(&data.vocab)?;
        Ok(vec![train(&data, params, config, Some(out_dir))?.result])
    } else {
        let runs = multi_run(&data, config, config.n_runs, config.seed, Some(out_dir), config.parallel_runs)?;
        Ok(runs.into_iter().map(|r| r.result).collect())
    }
}

/// A checkpoint file, a run directory, or a multi-run directory of `run_*`.
pub fn resolve_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let direct = path.join("best.ckpt.json");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let ckpt = entry.path().join("best.ckpt.json");
            if entry.file_name().to_string_lossy().starts_with("run_") && ckpt.is_file() {
                found.push(ckpt);
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint found"),
        ));
    }
    Ok(found)
}

pub fn load_summarizer(ckpt: &Path) -> Result<ModelSummarizer> {
    let (params, vocab, encode) = Checkpoint::load(ckpt)?;
    ModelSummarizer::new(params, vocab, encode)
}

fn load_summarizers(paths: &[PathBuf]) -> Result<Vec<ModelSummarizer>> {
    let mut out = Vec::new();
    for p in paths {
        for c in resolve_checkpoints(p)? {
            out.push(load_summarizer(&c)?);
        }
    }
    Ok(out)
}

fn evaluate_paths(ckpts: &[PathBuf], test: &[DialogueSample], baseline: Option<(&str, &EvalReport)>) -> Result<EvalReport> {
    let models = load_summarizers(ckpts)?;
    for m in &models {
        m.check_labels(test)?;
    }
    evaluate(&models, test, baseline)
}

/// Scores every checkpoint under `ckpts` on the test split. `baseline` is a
/// saved report or another checkpoint location evaluated the same way.
pub fn cmd_evaluate(ckpts: &[PathBuf], data: &Path, baseline: Option<&Path>, out_dir: Option<&Path>) -> Result<EvalReport> {
    let test = read_samples(&split_file(data, "test"))?;
    let base = match baseline {
        None => None,
        Some(b) => {
            let report = match EvalReport::load(b) {
                Ok(r) => r,
                Err(_) => evaluate_paths(&[b.to_path_buf()], &test, None)?,
            };
            Some((b.display().to_string(), report))
        }
    };
    let report = evaluate_paths(ckpts, &test, base.as_ref().map(|(n, r)| (n.as_str(), r)))?;
    if let Some(dir) = out_dir {
        report.save(dir)?;
    }
    Ok(report)
}

/// Greedy summary of every dialogue in `input`, one line per dialogue.
pub fn cmd_summarize(ckpt: &Path, input: &Path) -> Result<Vec<String>> {
    let path = resolve_checkpoints(ckpt)?.remove(0);
    let model = load_summarizer(&path)?;
    let dialogues = read_dialogues(input)?;
    let mut lines = Vec::with_capacity(dialogues.len());
    for d in &dialogues {
        let p = model.predict(d)?;
        lines.push(model.vocab.decode(&p.tokens).join(" "));
    }
    Ok(lines)
}

pub fn cmd_trace(ckpt: &Path, data: &Path, sample_id: &str, out_dir: &Path) -> Result<PathBuf> {
    let path = resolve_checkpoints(ckpt)?.remove(0);
    let model = load_summarizer(&path)?;
    let samples = read_dialogues(&split_file(data, "test"))?;
    let sample = samples
        .iter()
        .find(|s| s.id.as_deref() == Some(sample_id))
        .ok_or_else(|| Error::contract(format!("no sample with id {sample_id}")))?;
    export_trace(&model, sample, sample_id, out_dir)
}

fn default_config_help() -> String {
    format!("Config keys and defaults:\n\n{}", TrainConfig::default().to_toml())
}

#[derive(Debug, Parser)]
#[command(name = "actsum", version, about = "Dialogue-act labeling and abstractive summarization of meeting dialogues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window annotated transcripts into samples and write train/dev/test files.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::corpus::DEFAULT_WINDOW_WORDS)]
        window_words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split sizes; all three or none (default dev = test = min(400, n/10)).
        #[arg(long, requires_all = ["dev", "test"])]
        train: Option<usize>,
        #[arg(long, requires_all = ["train", "test"])]
        dev: Option<usize>,
        #[arg(long, requires_all = ["train", "dev"])]
        test: Option<usize>,
    },
    /// Generate a synthetic corpus in the dataset format.
    GenSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires_all = ["dev", "test"])]
        train: Option<usize>,
        #[arg(long, requires_all = ["train", "test"])]
        dev: Option<usize>,
        #[arg(long, requires_all = ["train", "dev"])]
        test: Option<usize>,
    },
    /// Train one or more models.
    #[command(after_long_help = default_config_help())]
    Train {
        /// TOML file; omitted keys take their defaults (see --help).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run seeds in parallel when n_runs > 1.
        #[arg(long)]
        parallel: bool,
    },
    /// Score checkpoints on a test split, optionally against a baseline.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Directory for report.txt and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a greedy summary for each dialogue in a file.
    Summarize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Export the attention trace of one sample.
    Trace {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample_id: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "traces")]
        out: PathBuf,
    },
}

fn sizes(train: Option<usize>, dev: Option<usize>, test: Option<usize>) -> Option<SplitSizes> {
    Some(SplitSizes {
        train: train?,
        dev: dev?,
        test: test?,
    })
}

/// Executes a parsed command, writing its data output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut emit = |text: &str| out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::Preprocess {
            input,
            out: dir,
            window_words,
            seed,
            train,
            dev,
            test,
        } => {
            let stats = cmd_preprocess(&input, window_words, &dir, seed, sizes(train, dev, test))?;
            emit(&stats.to_string())
        }
        Command::GenSynthetic {
            n,
            seed,
            out: dir,
            train,
            dev,
            test,
        } => {
            let stats = cmd_gen_synthetic(&SyntheticSpec::new(n, seed), &dir, sizes(train, dev, test))?;
            emit(&stats.to_string())
        }
        Command::Train {
            config,
            data,
            out: dir,
            parallel,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            cfg.parallel_runs |= parallel;
            for r in cmd_train(&cfg, &data, &dir)? {
                emit(&format!(
                    "seed {}\tbest_epoch {}\tbest_dev_loss {:.6}\tepochs {}\n",
                    r.seed,
                    r.best_epoch,
                    r.best_dev_loss,
                    r.epochs.len()
                ))?;
            }
            Ok(())
        }
        Command::Evaluate {
            ckpt,
            data,
            baseline,
            out: dir,
        } => {
            let report = cmd_evaluate(&ckpt, &data, baseline.as_deref(), dir.as_deref())?;
            emit(&report.to_text())
        }
        Command::Summarize { ckpt, input } => {
            for line in cmd_summarize(&ckpt, &input)? {
                emit(&format!("{line}\n"))?;
            }
            Ok(())
        }
        Command::Trace {
            ckpt,
            sample_id,
            data,
            out: dir,
        } => {
            let path = cmd_trace(&ckpt, &data, &sample_id, &dir)?;
            emit(&format!("{}\n", path.display()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pool_has_forty_distinct_topics() {
        let spec = SyntheticSpec::new(1, 0);
        let mut t = spec.topics.clone();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), 40);
        spec.validate().unwrap();
    }

    #[test]
    fn single_budget_sentence() {
        let spec = SyntheticSpec::new(1, 0);
        let s = spec.render(None, &[(INFORM, vec!["budget".into()])]);
        assert_eq!(s.summary, vec!["budget"]);
        assert!(s.utterances[0].words.contains(&"budget".to_string()));
    }

    #[test]
    fn filler_only_dialogue_gets_empty_topic() {
        let spec = SyntheticSpec::new(1, 0);
        let s = spec.render(None, &[("Backchannel", vec![]), ("Stall", vec![])]);
        assert_eq!(s.summary, vec![spec.empty_topic.clone()]);
    }

    #[test]
    fn summary_is_ordered_inform_keywords() {
        let spec = SyntheticSpec::new(300, 5);
        for s in generate_synthetic(&spec).unwrap() {
            assert!((4..=10).contains(&s.utterances.len()));
            let mut expected = Vec::new();
            for u in &s.utterances {
                let kws: Vec<&String> = u.words.iter().filter(|w| spec.topics.contains(w)).collect();
                if u.dialogue_act == INFORM {
                    assert!((1..=3).contains(&kws.len()));
                    expected.extend(kws.into_iter().cloned());
                } else {
                    assert!(kws.is_empty());
                }
            }
            if expected.is_empty() {
                expected.push(spec.empty_topic.clone());
            }
            assert_eq!(s.summary, expected);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&SyntheticSpec::new(50, 9)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::new(50, 9)).unwrap();
        let c = generate_synthetic(&SyntheticSpec::new(50, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = SyntheticSpec::new(0, 0);
        assert!(generate_synthetic(&spec).is_err());
        spec.n_samples = 1;
        spec.templates.retain(|t| t.act != INFORM);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cli_parses_spec_flags() {
        let cli = Cli::try_parse_from(["actsum", "preprocess", "--window-words", "50", "--in", "a.jsonl", "--out", "d"]).unwrap();
        assert!(matches!(cli.command, Command::Preprocess { window_words: 50, .. }));
        let cli = Cli::try_parse_from(["actsum", "evaluate", "--ckpt", "a", "b", "--data", "d", "--baseline", "c"]).unwrap();
        match cli.command {
            Command::Evaluate { ckpt, baseline, .. } => {
                assert_eq!(ckpt.len(), 2);
                assert_eq!(baseline, Some(PathBuf::from("c")));
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["actsum", "gen-synthetic", "--n", "5", "--out", "d", "--train", "3"]).is_err());
    }
}

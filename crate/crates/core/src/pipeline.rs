//! End-to-end commands: corpus generation, training, detection, evaluation
//! and the sliding-window baseline. Each command writes its artifacts and a
//! `manifest.json` into its output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{grid_search_step, plan_windows, windows_to_detections, STEP_GRID_S};
use crate::config::{parse_pairs, PipelineConfig};
use crate::dataset::{generate_synthetic_corpus, Corpus, CorpusInfo, KeywordSet, SynthSpec, Utterance};
use crate::decoder::{
    decode, merge_chunk_detections, read_detections, write_detections, DetectionRecord,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, normalize_length, read_wav, AudioClip, LengthMode};
use crate::metrics::{
    classification_accuracy, evaluate, ground_truth, rtf, scored_intervals, EvalReport, ScoredInterval,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::classifier::ClassifierParams;
use crate::model::DetectorParams;
use crate::trainer::{
    grid_windows, train_classifier, train_detector, utterance_grid, window_frames, window_slice,
    window_start_frame, TrainOptions, TrainSummary, UtteranceGrid,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const TIMING_FILE: &str = "timing.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const CONFIG_FILE: &str = "config.cfg";

/// Provenance record written next to every command's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: Option<String>,
    /// SHA-256 over the input files, in path order.
    pub inputs_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub version: String,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Hashes file contents (directories are walked in sorted order).
pub fn hash_inputs(paths: &[PathBuf]) -> Result<(String, Vec<String>)> {
    fn walk(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for e in entries {
                if e.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                    continue;
                }
                walk(&e, out)?;
            }
        } else {
            out.push(p.to_path_buf());
        }
        Ok(())
    }
    let mut files = Vec::new();
    for p in paths {
        walk(p, &mut files)?;
    }
    let mut h = Sha256::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        h.update(f.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    let hex = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, paths.iter().map(|p| p.display().to_string()).collect()))
}

pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    seed: Option<u64>,
    config: Option<String>,
    inputs: Vec<PathBuf>,
    started: f64,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            seed: None,
            config: None,
            inputs: Vec::new(),
            started: now_unix(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(mut self, cfg: &PipelineConfig) -> Self {
        self.config = Some(cfg.to_config_string());
        self
    }

    pub fn input(mut self, p: impl Into<PathBuf>) -> Self {
        self.inputs.push(p.into());
        self
    }

    pub fn finish(self, out_dir: &Path, outputs: &[&str]) -> Result<RunManifest> {
        let (inputs_hash, inputs) = hash_inputs(&self.inputs)?;
        let m = RunManifest {
            command: self.command,
            args: self.args,
            seed: self.seed,
            config: self.config,
            inputs_hash,
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            started_unix_s: self.started,
            finished_unix_s: now_unix(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let p = out_dir.join(MANIFEST_FILE);
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(m)
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// Resolves a config: defaults, then the optional file, then overrides.
pub fn resolve_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let mut pairs = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    PipelineConfig::from_pairs(pairs)
}

/// Like [`resolve_config`], with `num_keywords` defaulting to the size of
/// the corpus keyword set.
pub fn resolve_corpus_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
    corpus: &Path,
) -> Result<PipelineConfig> {
    let keywords = KeywordSet::read(corpus.join("keywords.txt"))?;
    let mut pairs = vec![("num_keywords".to_string(), keywords.len().to_string())];
    if let Some(p) = file {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        pairs.extend(parse_pairs(&text)?);
    }
    pairs.extend(overrides.iter().cloned());
    PipelineConfig::from_pairs(pairs)
}

/// Reads the config snapshot recorded in a directory's manifest.
pub fn manifest_config(dir: &Path) -> Result<Option<PipelineConfig>> {
    let p = dir.join(MANIFEST_FILE);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    m.config.map(|c| PipelineConfig::parse_str(&c)).transpose()
}

// ---------------------------------------------------------------- gen-data

pub fn cmd_gen_data(spec: &SynthSpec, out: &Path, seed: u64, args: Vec<String>) -> Result<CorpusInfo> {
    if spec.num_keywords == 0 {
        return Err(Error::InvalidInput("--classes must be at least 1".into()));
    }
    ensure_dir(out)?;
    let m = ManifestBuilder::new("gen-data", args).seed(seed);
    let info = generate_synthetic_corpus(spec, out, seed)?;
    m.finish(out, &["keywords.txt", "alignments.tsv", "audio/", "splits/"])?;
    Ok(info)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    NoUnknown,
    ClsHead,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "no-unknown" => Ok(Self::NoUnknown),
            "cls-head" => Ok(Self::ClsHead),
            _ => Err(Error::InvalidInput(format!(
                "unknown ablation {s:?} (expected none, no-unknown or cls-head)"
            ))),
        }
    }
}

impl Ablation {
    /// Config pairs the variant forces.
    pub fn config_pairs(self) -> Vec<(String, String)> {
        match self {
            Self::NoUnknown => vec![("use_unknown_class".into(), "false".into())],
            _ => Vec::new(),
        }
    }
}

pub struct TrainCommand {
    pub corpus: PathBuf,
    pub ablation: Ablation,
    pub dump_targets: Option<PathBuf>,
    pub opts: TrainOptions,
}

pub fn cmd_train(cfg: &PipelineConfig, cmd: &TrainCommand, args: Vec<String>) -> Result<TrainSummary> {
    let corpus = Corpus::load(&cmd.corpus, cfg)?;
    let out = &cmd.opts.out_dir;
    ensure_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_config_string())?;
    let m = ManifestBuilder::new("train", args)
        .seed(cmd.opts.seed)
        .config(cfg)
        .input(corpus.root.join("alignments.tsv"))
        .input(corpus.root.join("keywords.txt"))
        .input(corpus.root.join("splits"));
    if let Some(dir) = &cmd.dump_targets {
        dump_targets(&corpus, cfg, dir)?;
    }
    let summary = match cmd.ablation {
        Ablation::ClsHead => train_classifier(&corpus, cfg, &cmd.opts)?,
        _ => train_detector(&corpus, cfg, &cmd.opts)?,
    };
    m.finish(out, &["model.ckpt", "last.ckpt", "train_log.jsonl", CONFIG_FILE])?;
    Ok(summary)
}

/// Writes the encoded targets of every training clip as CSV.
pub fn dump_targets(corpus: &Corpus, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    for u in corpus.split("train")? {
        let words = u.clip_words(0.0, cfg);
        crate::encoder::encode_targets::<f64>(&words, cfg)?.write_csv(dir.join(format!("{}.csv", u.id)))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- detect

/// Either kind of trained model.
#[allow(clippy::large_enum_variant)]
pub enum LoadedModel {
    Detector(DetectorParams<f32>),
    Classifier(ClassifierParams<f32>),
}

/// Loads a checkpoint and the configuration to run it with: the
/// checkpoint's own, updated by `overrides`. Overrides that change the
/// model architecture are rejected.
pub fn load_model(path: &Path, overrides: &[(String, String)]) -> Result<(LoadedModel, PipelineConfig)> {
    let ck = Checkpoint::read(path)?;
    let mut cfg = ck.config()?;
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    ck.check_config(&cfg)?;
    let model = match ck.header.kind.as_str() {
        "detector" => LoadedModel::Detector(ck.detector()?),
        "classifier" => LoadedModel::Classifier(ck.classifier()?),
        k => return Err(Error::Checkpoint(format!("unknown model kind {k:?}"))),
    };
    Ok((model, cfg))
}

/// Runs the detector over audio of any length. Audio shorter than the model
/// input is repeat-padded; longer audio is processed in input-length chunks
/// with 50% overlap whose detections are merged.
pub fn detect_audio(
    params: &DetectorParams<f32>,
    cfg: &PipelineConfig,
    keywords: &KeywordSet,
    utterance_id: &str,
    audio: &AudioClip,
) -> Result<Vec<DetectionRecord>> {
    let chunk = cfg.input_samples();
    let rate = cfg.sample_rate_hz as f64;
    let duration = audio.duration_s();
    let fps = cfg.frames_per_second();
    let mut starts = Vec::new();
    if audio.len() <= chunk {
        starts.push(0);
    } else {
        let hop = (chunk / 2).max(1);
        let mut s = 0;
        while s + chunk < audio.len() {
            starts.push(s);
            s += hop;
        }
        starts.push(audio.len() - chunk);
    }
    let mut records = Vec::new();
    for &s in &starts {
        let clip = if audio.len() <= chunk {
            normalize_length(audio, cfg.input_len_s, LengthMode::RepeatPad, 0)?
        } else {
            audio.slice(s, chunk)
        };
        let feats = extract_features(&clip, cfg)?.data.map(|v| v as f32);
        let preds = params.predict(&feats)?;
        let origin = s as f64 / rate;
        for d in decode(&preds, cfg) {
            if d.score < cfg.detection_threshold {
                continue;
            }
            let mut r = DetectionRecord::from_detection(utterance_id, &d, keywords, fps, origin)?;
            if r.center_s >= duration {
                continue; // falls in the padding
            }
            r.start_s = r.start_s.max(0.0);
            r.end_s = r.end_s.min(duration);
            records.push(r);
        }
    }
    Ok(if starts.len() > 1 {
        merge_chunk_detections(records, 0.5)
    } else {
        records
    })
}

/// Posterior of every window of a plan over an utterance grid.
pub fn classify_windows(
    params: &ClassifierParams<f32>,
    cfg: &PipelineConfig,
    grid: &UtteranceGrid,
    windows: &[(f64, f64)],
) -> Result<Vec<Vec<f64>>> {
    let width = window_frames(cfg.baseline_window_s, cfg);
    let fps = cfg.frames_per_second();
    windows
        .iter()
        .map(|&(s, _)| {
            let f = window_start_frame(s, width, grid.features.rows(), fps);
            let probs = params.predict(&window_slice(&grid.features, f, width))?;
            Ok(probs.into_iter().map(|p| p as f64).collect())
        })
        .collect()
}

/// Longest keyword occurrence in the utterances, in seconds.
pub fn max_keyword_length(utts: &[&Utterance], cfg: &PipelineConfig) -> f64 {
    let fps = cfg.frames_per_second();
    utts.iter()
        .flat_map(|u| u.words.iter())
        .filter(|w| w.cls < cfg.num_keywords)
        .map(|w| w.len / fps)
        .fold(0.0, f64::max)
}

/// Sliding-window detections for one utterance grid.
pub fn baseline_detect(
    params: &ClassifierParams<f32>,
    cfg: &PipelineConfig,
    keywords: &KeywordSet,
    grid: &UtteranceGrid,
    step: f64,
    max_x: f64,
) -> Result<Vec<DetectionRecord>> {
    let plan = plan_windows(grid.duration_s, cfg.baseline_window_s, step, max_x)?;
    let scores = classify_windows(params, cfg, grid, &plan.windows)?;
    let spans = windows_to_detections(&scores, &plan, cfg.num_keywords, cfg.baseline_merge_threshold)?;
    spans
        .into_iter()
        .map(|d| {
            let keyword = keywords
                .name(d.cls)
                .ok_or_else(|| Error::InvalidInput(format!("class {} has no name", d.cls)))?;
            let end_s = d.end_s.min(grid.duration_s);
            Ok(DetectionRecord {
                utterance_id: grid.id.clone(),
                keyword: keyword.to_string(),
                score: d.score,
                start_s: d.start_s,
                end_s,
                center_s: 0.5 * (d.start_s + end_s),
            })
        })
        .collect()
}

/// Wall-clock cost of a detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub process_s: f64,
    pub audio_s: f64,
    pub rtf: f64,
}

pub enum DetectInput {
    Split { corpus: PathBuf, split: String },
    Files(Vec<PathBuf>),
}

pub struct DetectCommand {
    pub model: PathBuf,
    pub input: DetectInput,
    pub out: PathBuf,
    /// Window step for classifier checkpoints.
    pub step: f64,
    /// Keyword names when running on loose files (default: from the
    /// checkpoint's class count, as read from a corpus if given).
    pub keywords: Option<PathBuf>,
}

pub fn cmd_detect(
    overrides: &[(String, String)],
    cmd: &DetectCommand,
    args: Vec<String>,
) -> Result<(Vec<DetectionRecord>, Timing)> {
    let (model, cfg) = load_model(&cmd.model, overrides)?;
    ensure_dir(&cmd.out)?;
    let mut m = ManifestBuilder::new("detect", args).config(&cfg).input(&cmd.model);
    // (id, audio path, words for MAX_x)
    let (keywords, items): (KeywordSet, Vec<(String, PathBuf)>) = match &cmd.input {
        DetectInput::Split { corpus, split } => {
            let c = Corpus::load(corpus, &cfg)?;
            m = m.input(corpus.join("splits").join(format!("{split}.txt")));
            let items = c
                .split(split)?
                .iter()
                .map(|u| (u.id.clone(), u.audio_path.clone()))
                .collect();
            (c.keywords.clone(), items)
        }
        DetectInput::Files(files) => {
            let kw = match &cmd.keywords {
                Some(p) => KeywordSet::read(p)?,
                None => {
                    let names: Vec<String> = (0..cfg.num_keywords).map(|c| format!("kw{c}")).collect();
                    KeywordSet::new(&names)?
                }
            };
            for f in files {
                m = m.input(f);
            }
            let items = files
                .iter()
                .map(|f| {
                    let id = f
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| f.display().to_string());
                    (id, f.clone())
                })
                .collect();
            (kw, items)
        }
    };
    if keywords.len() != cfg.num_keywords {
        return Err(Error::Data(format!(
            "{} keyword names for a model with {} keywords",
            keywords.len(),
            cfg.num_keywords
        )));
    }
    let timer = Instant::now();
    let mut audio_s = 0.0;
    let mut records = Vec::new();
    for (id, path) in &items {
        let audio = read_wav(path, cfg.sample_rate_hz)?;
        audio_s += audio.duration_s();
        match &model {
            LoadedModel::Detector(p) => records.extend(detect_audio(p, &cfg, &keywords, id, &audio)?),
            LoadedModel::Classifier(p) => {
                let utt = Utterance {
                    id: id.clone(),
                    audio_path: path.clone(),
                    words: Vec::new(),
                    duration_s: audio.duration_s(),
                };
                let grid = utterance_grid(&utt, &cfg)?;
                let max_x = (cfg.baseline_window_s - cmd.step - 1e-6).max(0.0);
                records.extend(baseline_detect(p, &cfg, &keywords, &grid, cmd.step, max_x)?);
            }
        }
    }
    let process_s = timer.elapsed().as_secs_f64();
    let timing = Timing {
        process_s,
        audio_s,
        rtf: if audio_s > 0.0 { rtf(process_s, audio_s)? } else { 0.0 },
    };
    write_detections(cmd.out.join(DETECTIONS_FILE), &records)?;
    write_text(&cmd.out.join(TIMING_FILE), &(serde_json::to_string_pretty(&timing)? + "\n"))?;
    m.finish(&cmd.out, &[DETECTIONS_FILE, TIMING_FILE])?;
    Ok((records, timing))
}

// ---------------------------------------------------------------- eval

/// Scores detection records against one corpus split.
pub fn evaluate_split(
    records: &[DetectionRecord],
    corpus: &Corpus,
    split: &str,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let utts = corpus.split(split)?;
    let ids: Vec<&str> = utts.iter().map(|u| u.id.as_str()).collect();
    let dets: Vec<ScoredInterval> = scored_intervals(records, &corpus.keywords, &ids)?;
    let gts = ground_truth(&utts, cfg.num_keywords, cfg.frames_per_second());
    let hours = utts.iter().map(|u| u.duration_s).sum::<f64>() / 3600.0;
    if !(hours > 0.0) {
        return Err(Error::Data(format!("split {split} has no audio")));
    }
    let mut report = evaluate(&dets, &gts, &corpus.keywords, hours, cfg.match_iou)?;
    report.metadata.insert("split".into(), split.to_string());
    Ok(report)
}

pub struct EvalCommand {
    pub detections: PathBuf,
    pub corpus: PathBuf,
    pub split: String,
    pub timing: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_text(&out.join(REPORT_JSON), &report.to_json()?)?;
    write_text(&out.join(REPORT_TXT), &report.to_table())
}

pub fn cmd_eval(cfg: &PipelineConfig, cmd: &EvalCommand, args: Vec<String>) -> Result<EvalReport> {
    let corpus = Corpus::load(&cmd.corpus, cfg)?;
    ensure_dir(&cmd.out)?;
    let mut m = ManifestBuilder::new("eval", args)
        .config(cfg)
        .input(&cmd.detections)
        .input(corpus.root.join("alignments.tsv"));
    let records = read_detections(&cmd.detections)?;
    let mut report = evaluate_split(&records, &corpus, &cmd.split, cfg)?;
    if let Some(t) = &cmd.timing {
        let text = fs::read_to_string(t).map_err(|e| Error::io(t, e))?;
        let timing: Timing = serde_json::from_str(&text)?;
        report.rtf = Some(timing.rtf);
        m = m.input(t);
    }
    write_report(&cmd.out, &report)?;
    m.finish(&cmd.out, &[REPORT_JSON, REPORT_TXT])?;
    Ok(report)
}

// ---------------------------------------------------------------- baseline

pub struct BaselineCommand {
    pub model: PathBuf,
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub steps: Vec<f64>,
    pub tune_split: String,
    pub test_split: String,
}

impl BaselineCommand {
    pub fn default_steps() -> Vec<f64> {
        STEP_GRID_S.to_vec()
    }
}

/// Accuracy on trimmed windows: one window centered on every word (label
/// by containment) and one centered on every word boundary.
pub fn trimmed_window_accuracy(
    params: &ClassifierParams<f32>,
    cfg: &PipelineConfig,
    grids: &[UtteranceGrid],
) -> Result<f64> {
    let width = window_frames(cfg.baseline_window_s, cfg);
    let fps = cfg.frames_per_second();
    let half = cfg.baseline_window_s / 2.0;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for g in grids {
        let mut centers: Vec<f64> = g.words.iter().map(|w| 0.5 * (w.1 + w.2)).collect();
        centers.extend(g.words.iter().skip(1).map(|w| w.1));
        for c in centers {
            if c - half < 0.0 || c + half > g.duration_s {
                continue;
            }
            let f = window_start_frame(c - half, width, g.features.rows(), fps);
            let win = (f as f64 / fps, (f + width) as f64 / fps);
            truth.push(crate::baseline::window_label(&g.words, win, cfg.num_keywords));
            let probs = params.predict(&window_slice(&g.features, f, width))?;
            let arg = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            pred.push(arg);
        }
    }
    classification_accuracy(&pred, &truth)
}

pub fn cmd_baseline(overrides: &[(String, String)], cmd: &BaselineCommand, args: Vec<String>) -> Result<EvalReport> {
    let (model, cfg) = load_model(&cmd.model, overrides)?;
    let LoadedModel::Classifier(params) = model else {
        return Err(Error::Checkpoint("baseline needs a classifier checkpoint (train --ablation cls-head)".into()));
    };
    let corpus = Corpus::load(&cmd.corpus, &cfg)?;
    ensure_dir(&cmd.out)?;
    let m = ManifestBuilder::new("baseline", args)
        .config(&cfg)
        .input(&cmd.model)
        .input(corpus.root.join("alignments.tsv"));
    let all: Vec<&Utterance> = corpus.utterances.iter().collect();
    let max_x = max_keyword_length(&all, &cfg);
    let grids_for = |split: &str| -> Result<Vec<UtteranceGrid>> {
        corpus.split(split)?.iter().map(|u| utterance_grid(u, &cfg)).collect()
    };
    let run = |grids: &[UtteranceGrid], step: f64| -> Result<Vec<DetectionRecord>> {
        let mut out = Vec::new();
        for g in grids {
            out.extend(baseline_detect(&params, &cfg, &corpus.keywords, g, step, max_x)?);
        }
        Ok(out)
    };
    let tune = grids_for(&cmd.tune_split)?;
    let (step, tried) = grid_search_step(&cmd.steps, cfg.baseline_window_s, max_x, |s| {
        Ok(evaluate_split(&run(&tune, s)?, &corpus, &cmd.tune_split, &cfg)?.map)
    })?;
    let test = grids_for(&cmd.test_split)?;
    let timer = Instant::now();
    let records = run(&test, step)?;
    let process_s = timer.elapsed().as_secs_f64();
    let audio_s: f64 = test.iter().map(|g| g.duration_s).sum();
    let mut report = evaluate_split(&records, &corpus, &cmd.test_split, &cfg)?;
    report.classification_accuracy = Some(trimmed_window_accuracy(&params, &cfg, &test)?);
    report.metadata.insert("window_s".into(), format!("{}", cfg.baseline_window_s));
    report.metadata.insert("max_keyword_s".into(), format!("{max_x:.4}"));
    report.metadata.insert("step_s".into(), format!("{step}"));
    let tried: BTreeMap<String, String> = tried.iter().map(|(s, v)| (format!("{s}"), format!("{v:.4}"))).collect();
    report.metadata.insert("step_search_map".into(), serde_json::to_string(&tried)?);
    write_detections(cmd.out.join(DETECTIONS_FILE), &records)?;
    let timing = Timing {
        process_s,
        audio_s,
        rtf: rtf(process_s, audio_s.max(1e-9))?,
    };
    write_text(&cmd.out.join(TIMING_FILE), &(serde_json::to_string_pretty(&timing)? + "\n"))?;
    write_report(&cmd.out, &report)?;
    m.finish(&cmd.out, &[DETECTIONS_FILE, TIMING_FILE, REPORT_JSON, REPORT_TXT])?;
    Ok(report)
}

/// Window-level labels of one grid, for classifier diagnostics.
pub fn window_labels(grid: &UtteranceGrid, cfg: &PipelineConfig) -> Vec<usize> {
    grid_windows(grid, cfg).into_iter().map(|(_, l)| l).collect()
}

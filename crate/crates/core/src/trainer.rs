//! Training loops for the detector and the window classifier.

use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::window_label;
use crate::config::PipelineConfig;
use crate::dataset::{AlignedWord, Corpus, Utterance};
use crate::encoder::{encode_targets, TargetTensors};
use crate::error::{Error, Result};
use crate::features::{
    augment, extract_features, extract_features_long, normalize_length, read_wav, AudioClip, Augmentation,
    LengthMode,
};
use crate::losses::{detection_loss, LossBreakdown};
use crate::model::checkpoint::{save_classifier, save_detector, Checkpoint};
use crate::model::classifier::{ClassifierArch, ClassifierParams};
use crate::model::{DetectorParams, ParamSet};
use crate::optim::{accumulate, Adam};
use crate::scalar::Matrix;

/// Deterministic seed derivation (splitmix64 over the pair).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Continue from a checkpoint that carries optimizer state.
    pub resume: Option<PathBuf>,
    /// Use only the first `n` training utterances.
    pub limit_utterances: Option<usize>,
    /// Stop after this many epochs in this invocation (for interruption
    /// tests); the schedule still targets `cfg.epochs`.
    pub stop_after_epochs: Option<usize>,
    pub quiet: bool,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub heat: f64,
    pub length: f64,
    pub offset: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_completed: usize,
    pub steps: u64,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
    pub checkpoint: PathBuf,
}

/// A training clip with cached features and targets.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub id: String,
    pub audio_path: PathBuf,
    pub crop_start_s: f64,
    pub features: Matrix<f32>,
    pub targets: TargetTensors<f32>,
    pub words: Vec<AlignedWord>,
}

/// Reads an utterance and cuts (or tiles) the model input from it.
pub fn load_clip(utt: &Utterance, cfg: &PipelineConfig, crop_seed: u64) -> Result<(AudioClip, f64)> {
    let audio = read_wav(&utt.audio_path, cfg.sample_rate_hz)?;
    let target = cfg.input_samples();
    let start = crate::features::crop_start(audio.len(), target, LengthMode::RandomCrop, crop_seed);
    let clip = normalize_length(&audio, cfg.input_len_s, LengthMode::RandomCrop, crop_seed)?;
    Ok((clip, start as f64 / cfg.sample_rate_hz as f64))
}

pub fn features_f32(clip: &AudioClip, cfg: &PipelineConfig) -> Result<Matrix<f32>> {
    Ok(extract_features(clip, cfg)?.data.map(|v| v as f32))
}

pub fn prepare_clip(utt: &Utterance, cfg: &PipelineConfig, crop_seed: u64) -> Result<PreparedClip> {
    let (clip, crop_start_s) = load_clip(utt, cfg, crop_seed)?;
    let words = utt.clip_words(crop_start_s, cfg);
    Ok(PreparedClip {
        id: utt.id.clone(),
        audio_path: utt.audio_path.clone(),
        crop_start_s,
        features: features_f32(&clip, cfg)?,
        targets: encode_targets(&words, cfg)?,
        words,
    })
}

fn train_utterances<'a>(corpus: &'a Corpus, opts: &TrainOptions) -> Result<Vec<&'a Utterance>> {
    let mut utts = corpus.split("train")?;
    if let Some(n) = opts.limit_utterances {
        utts.truncate(n);
    }
    if utts.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    Ok(utts)
}

fn random_augmentation(cfg: &PipelineConfig, rng: &mut ChaCha8Rng) -> Augmentation {
    if rng.random_bool(0.5) {
        let (lo, hi) = (cfg.noise_snr_db_min, cfg.noise_snr_db_max);
        Augmentation::AdditiveNoise {
            snr_db: if hi > lo { rng.random_range(lo..hi) } else { lo },
        }
    } else {
        let s = cfg.pitch_shift_semitones;
        Augmentation::PitchShift {
            semitones: if s > 0.0 { rng.random_range(-s..s) } else { 0.0 },
        }
    }
}

fn augmented_features(
    clip: &PreparedClip,
    cfg: &PipelineConfig,
    kind: Augmentation,
    seed: u64,
) -> Result<Matrix<f32>> {
    let audio = read_wav(&clip.audio_path, cfg.sample_rate_hz)?;
    let start = (clip.crop_start_s * cfg.sample_rate_hz as f64).round() as usize;
    let target = cfg.input_samples();
    let base = if audio.len() > target {
        audio.slice(start.min(audio.len() - target), target)
    } else {
        normalize_length(&audio, cfg.input_len_s, LengthMode::RepeatPad, 0)?
    };
    features_f32(&augment(&base, kind, seed)?, cfg)
}

struct Logger {
    out: BufWriter<File>,
}

impl Logger {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    fn line(&mut self, value: &impl Serialize) -> Result<()> {
        let s = serde_json::to_string(value)?;
        writeln!(self.out, "{s}").map_err(|e| Error::io("training log", e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io("training log", e))
    }
}

fn dump_bad_batch(out_dir: &Path, epoch: usize, step: u64, ids: &[&str], loss: &LossBreakdown) {
    let body = serde_json::json!({
        "epoch": epoch,
        "step": step,
        "utterances": ids,
        "heat": loss.heat.to_string(),
        "length": loss.length.to_string(),
        "offset": loss.offset.to_string(),
    });
    let _ = fs::write(out_dir.join("nan_batch.json"), body.to_string());
}

fn say(opts: &TrainOptions, msg: &str) {
    if !opts.quiet {
        eprintln!("{msg}");
    }
}

/// File names inside a training output directory.
pub const MODEL_FILE: &str = "model.ckpt";
pub const LAST_FILE: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Trains the detector on the corpus's train split.
pub fn train_detector(corpus: &Corpus, cfg: &PipelineConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let timer = Instant::now();
    let utts = train_utterances(corpus, opts)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let clips = utts
        .iter()
        .enumerate()
        .map(|(i, u)| prepare_clip(u, cfg, mix_seed(opts.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;

    let (mut params, mut adam, start_epoch) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            ck.check_config(cfg)?;
            let p: DetectorParams<f32> = ck.detector()?;
            let a = ck
                .adam(cfg.learning_rate)
                .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume".into()))?;
            (p, a, ck.header.epoch)
        }
        None => {
            let p = DetectorParams::<f32>::from_config(cfg, mix_seed(opts.seed, 0xDE7))?;
            let a = Adam::new(cfg.learning_rate, &p);
            (p, a, 0)
        }
    };
    say(opts, &params.describe());
    let mut log = Logger::open(&opts.out_dir.join(LOG_FILE), opts.resume.is_some())?;
    let mut summary = TrainSummary {
        epochs_completed: start_epoch,
        steps: adam.step,
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
        seconds: 0.0,
        checkpoint: opts.out_dir.join(MODEL_FILE),
    };
    let end_epoch = match opts.stop_after_epochs {
        Some(k) => (start_epoch + k).min(cfg.epochs),
        None => cfg.epochs,
    };
    let bs = cfg.batch_size.max(1);
    for epoch in start_epoch..end_epoch {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0x1_0000 + epoch as u64));
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(bs) {
            let mut grads = params.zeros_like();
            let mut sum = LossBreakdown::default();
            for &i in batch {
                let clip = &clips[i];
                let feats: Cow<Matrix<f32>> = if rng.random::<f64>() < cfg.augment_prob {
                    let kind = random_augmentation(cfg, &mut rng);
                    Cow::Owned(augmented_features(clip, cfg, kind, rng.random())?)
                } else {
                    Cow::Borrowed(&clip.features)
                };
                let (pred, cache) = params.forward(&feats)?;
                let (lb, pg) = detection_loss(&pred.heat, &pred.length, &pred.offset, &clip.targets, cfg)?;
                if !lb.total.is_finite() {
                    let ids: Vec<&str> = batch.iter().map(|&j| clips[j].id.as_str()).collect();
                    dump_bad_batch(&opts.out_dir, epoch, adam.step + 1, &ids, &lb);
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, step {} (utterance {}); batch written to nan_batch.json",
                        adam.step + 1,
                        clip.id
                    )));
                }
                let g = params.backward(&cache, &pg)?;
                accumulate(&mut grads, &g);
                sum.heat += lb.heat;
                sum.length += lb.length;
                sum.offset += lb.offset;
                sum.total += lb.total;
            }
            let inv = 1.0 / batch.len() as f32;
            grads.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|g| *g *= inv));
            adam.update(&mut params, &grads)?;
            let n = batch.len() as f64;
            let entry = StepLog {
                epoch,
                step: adam.step,
                heat: sum.heat / n,
                length: sum.length / n,
                offset: sum.offset / n,
                total: sum.total / n,
            };
            log.line(&entry)?;
            summary.step_losses.push(entry.total);
            epoch_sum += sum.total;
        }
        let mean = epoch_sum / clips.len() as f64;
        summary.epoch_losses.push(mean);
        summary.epochs_completed = epoch + 1;
        log.flush()?;
        save_detector(opts.out_dir.join(LAST_FILE), &params, cfg, epoch + 1, Some(&adam))?;
        say(
            opts,
            &format!(
                "epoch {:>3}/{}  loss {:.4}  ({:.1}s)",
                epoch + 1,
                cfg.epochs,
                mean,
                timer.elapsed().as_secs_f64()
            ),
        );
    }
    summary.steps = adam.step;
    save_detector(&summary.checkpoint, &params, cfg, summary.epochs_completed, None)?;
    summary.seconds = timer.elapsed().as_secs_f64();
    Ok(summary)
}

/// Number of feature frames in a classifier window of `seconds`.
pub fn window_frames(seconds: f64, cfg: &PipelineConfig) -> usize {
    ((seconds * cfg.frames_per_second()).round() as usize).max(1)
}

/// First frame of the window starting at `start_s`, kept inside the grid.
pub fn window_start_frame(start_s: f64, width: usize, frames: usize, fps: f64) -> usize {
    let f = (start_s * fps).round().max(0.0) as usize;
    f.min(frames.saturating_sub(width))
}

/// Copies `width` frames starting at `start` (zero rows past the end).
pub fn window_slice(features: &Matrix<f32>, start: usize, width: usize) -> Matrix<f32> {
    let bins = features.cols();
    let mut out = Matrix::zeros(width, bins);
    for r in 0..width {
        if start + r < features.rows() {
            for (k, &v) in features.row(start + r).iter().enumerate() {
                out.set(r, k, v);
            }
        }
    }
    out
}

/// Whole-utterance features plus word intervals in seconds.
#[derive(Debug, Clone)]
pub struct UtteranceGrid {
    pub id: String,
    pub features: Matrix<f32>,
    pub duration_s: f64,
    /// `(class, start_s, end_s)`
    pub words: Vec<(usize, f64, f64)>,
}

pub fn utterance_grid(utt: &Utterance, cfg: &PipelineConfig) -> Result<UtteranceGrid> {
    let audio = read_wav(&utt.audio_path, cfg.sample_rate_hz)?;
    let spec = extract_features_long(&audio, cfg)?;
    let fps = cfg.frames_per_second();
    Ok(UtteranceGrid {
        id: utt.id.clone(),
        features: spec.data.map(|v| v as f32),
        duration_s: audio.duration_s(),
        words: utt.words.iter().map(|w| (w.cls, w.start_s(fps), w.end_s(fps))).collect(),
    })
}

/// Labelled classifier windows of one utterance at every frame offset.
pub fn grid_windows(grid: &UtteranceGrid, cfg: &PipelineConfig) -> Vec<(usize, usize)> {
    let fps = cfg.frames_per_second();
    let width = window_frames(cfg.baseline_window_s, cfg);
    let last = grid.features.rows().saturating_sub(width);
    (0..=last)
        .map(|f| {
            let w = (f as f64 / fps, (f + width) as f64 / fps);
            (f, window_label(&grid.words, w, cfg.num_keywords))
        })
        .collect()
}

pub fn classifier_arch(cfg: &PipelineConfig) -> ClassifierArch {
    ClassifierArch {
        freq_bins: cfg.freq_bins(),
        channels: cfg.n_ch,
        depth: cfg.depth,
        kernel: cfg.kernel_size,
        classes: cfg.num_keywords + 2,
    }
}

/// Trains the window classifier used by the baseline and the
/// classification-head ablation.
///
/// Each epoch uses every keyword window plus twice as many randomly drawn
/// unknown/background windows.
pub fn train_classifier(corpus: &Corpus, cfg: &PipelineConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let timer = Instant::now();
    let utts = train_utterances(corpus, opts)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let grids = utts
        .iter()
        .map(|u| utterance_grid(u, cfg))
        .collect::<Result<Vec<_>>>()?;
    let width = window_frames(cfg.baseline_window_s, cfg);
    let mut keyword_windows = Vec::new();
    let mut other_windows = Vec::new();
    for (g, grid) in grids.iter().enumerate() {
        for (f, label) in grid_windows(grid, cfg) {
            if label < cfg.num_keywords {
                keyword_windows.push((g, f, label));
            } else {
                other_windows.push((g, f, label));
            }
        }
    }
    let (mut params, mut adam, start_epoch) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            ck.check_config(cfg)?;
            let p: ClassifierParams<f32> = ck.classifier()?;
            let a = ck
                .adam(cfg.learning_rate)
                .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume".into()))?;
            (p, a, ck.header.epoch)
        }
        None => {
            let p = ClassifierParams::<f32>::init(&classifier_arch(cfg), mix_seed(opts.seed, 0xC1A))?;
            let a = Adam::new(cfg.learning_rate, &p);
            (p, a, 0)
        }
    };
    let mut log = Logger::open(&opts.out_dir.join(LOG_FILE), opts.resume.is_some())?;
    let mut summary = TrainSummary {
        epochs_completed: start_epoch,
        steps: adam.step,
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
        seconds: 0.0,
        checkpoint: opts.out_dir.join(MODEL_FILE),
    };
    let end_epoch = match opts.stop_after_epochs {
        Some(k) => (start_epoch + k).min(cfg.baseline_epochs),
        None => cfg.baseline_epochs,
    };
    let bs = cfg.batch_size.max(1);
    for epoch in start_epoch..end_epoch {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0x2_0000 + epoch as u64));
        let mut others = other_windows.clone();
        others.shuffle(&mut rng);
        others.truncate(2 * keyword_windows.len().max(1));
        let mut items = keyword_windows.clone();
        items.extend(others);
        items.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in items.chunks(bs) {
            let mut grads = params.zeros_like();
            let mut sum = 0.0;
            for &(g, f, label) in batch {
                let x = window_slice(&grids[g].features, f, width);
                let (_, cache) = params.forward(&x)?;
                let (loss, gr) = params.loss_backward(&cache, label)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite classifier loss at epoch {epoch} (utterance {})",
                        grids[g].id
                    )));
                }
                accumulate(&mut grads, &gr);
                sum += loss as f64;
            }
            let inv = 1.0 / batch.len() as f32;
            grads.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|g| *g *= inv));
            adam.update(&mut params, &grads)?;
            let mean = sum / batch.len() as f64;
            log.line(&serde_json::json!({"epoch": epoch, "step": adam.step, "total": mean}))?;
            summary.step_losses.push(mean);
            epoch_sum += sum;
        }
        let mean = epoch_sum / items.len().max(1) as f64;
        summary.epoch_losses.push(mean);
        summary.epochs_completed = epoch + 1;
        log.flush()?;
        save_classifier(opts.out_dir.join(LAST_FILE), &params, cfg, epoch + 1, Some(&adam))?;
        say(
            opts,
            &format!(
                "epoch {:>3}/{}  loss {:.4}  ({:.1}s)",
                epoch + 1,
                cfg.baseline_epochs,
                mean,
                timer.elapsed().as_secs_f64()
            ),
        );
    }
    summary.steps = adam.step;
    save_classifier(&summary.checkpoint, &params, cfg, summary.epochs_completed, None)?;
    summary.seconds = timer.elapsed().as_secs_f64();
    Ok(summary)
}

//! Pipeline hyper-parameters.
//!
//! The on-disk format is a flat UTF-8 document of `key = value` lines with
//! `#` comments. Every key can also be supplied as a `(key, value)` override
//! pair, which is how the CLI maps `--key value` flags onto a config.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// All tunable settings of the feature, model, training, decoding and
/// evaluation stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sample_rate_hz: u32,
    pub input_len_s: f64,
    pub hop_length: usize,
    pub win_length: usize,
    pub filter_length: usize,
    /// Frames of the detector's output grid (T).
    pub temporal_resolution: usize,
    /// Number of keyword classes (C).
    pub num_keywords: usize,
    /// Gaussian sigma per frame of word length.
    pub gamma: f64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub lambda_len: f64,
    pub lambda_offset: f64,
    /// Top-M peaks retained by the decoder.
    pub max_detections: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment_prob: f64,
    pub use_unknown_class: bool,
    pub regress_unknown: bool,

    pub log_spectrogram: bool,
    pub normalize_spectrogram: bool,
    pub noise_snr_db_min: f64,
    pub noise_snr_db_max: f64,
    pub pitch_shift_semitones: f64,

    pub n_ch: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub length_prior_s: f64,

    pub epochs: usize,
    pub peak_radius: usize,
    pub detection_threshold: f64,
    pub match_iou: f64,

    pub baseline_window_s: f64,
    pub baseline_merge_threshold: f64,
    pub baseline_epochs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            input_len_s: 5.11,
            hop_length: 160,
            win_length: 400,
            filter_length: 510,
            temporal_resolution: 128,
            num_keywords: 20,
            gamma: 0.125,
            focal_alpha: 2.0,
            focal_beta: 4.0,
            lambda_len: 0.1,
            lambda_offset: 1.0,
            max_detections: 30,
            batch_size: 64,
            learning_rate: 0.00125,
            augment_prob: 0.2,
            use_unknown_class: true,
            regress_unknown: true,
            log_spectrogram: true,
            normalize_spectrogram: false,
            noise_snr_db_min: 10.0,
            noise_snr_db_max: 30.0,
            pitch_shift_semitones: 2.0,
            n_ch: 64,
            depth: 3,
            kernel_size: 3,
            length_prior_s: 0.4,
            epochs: 30,
            peak_radius: 1,
            detection_threshold: 0.3,
            match_iou: 0.5,
            baseline_window_s: 0.5,
            baseline_merge_threshold: 0.5,
            baseline_epochs: 20,
        }
    }
}

/// Decoder top-M used when the auxiliary unknown class is disabled and no
/// explicit `max_detections` is given.
pub const NO_UNKNOWN_MAX_DETECTIONS: usize = 3;

const KEYS: &[&str] = &[
    "sample_rate_hz",
    "input_len_s",
    "hop_length",
    "win_length",
    "filter_length",
    "temporal_resolution",
    "num_keywords",
    "gamma",
    "focal_alpha",
    "focal_beta",
    "lambda_len",
    "lambda_offset",
    "max_detections",
    "batch_size",
    "learning_rate",
    "augment_prob",
    "use_unknown_class",
    "regress_unknown",
    "log_spectrogram",
    "normalize_spectrogram",
    "noise_snr_db_min",
    "noise_snr_db_max",
    "pitch_shift_semitones",
    "n_ch",
    "depth",
    "kernel_size",
    "length_prior_s",
    "epochs",
    "peak_radius",
    "detection_threshold",
    "match_iou",
    "baseline_window_s",
    "baseline_merge_threshold",
    "baseline_epochs",
];

/// Keys that change the network's input, shape or target encoding. A
/// checkpoint is only valid for configs agreeing on all of them.
const MODEL_KEYS: &[&str] = &[
    "sample_rate_hz",
    "input_len_s",
    "hop_length",
    "win_length",
    "filter_length",
    "temporal_resolution",
    "num_keywords",
    "use_unknown_class",
    "log_spectrogram",
    "normalize_spectrogram",
    "n_ch",
    "depth",
    "kernel_size",
];

fn canonical_key(key: &str) -> String {
    match key {
        "T" => "temporal_resolution".to_string(),
        "C" => "num_keywords".to_string(),
        "M" => "max_detections".to_string(),
        other => other.replace('-', "_"),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl PipelineConfig {
    /// All accepted keys, in serialization order.
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// True for canonical keys and their short aliases (`T`, `C`, `M`).
    pub fn is_key(key: &str) -> bool {
        KEYS.contains(&canonical_key(key).as_str())
    }

    /// Builds a config from defaults plus key-value pairs (later pairs win),
    /// then validates it.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut cfg = Self::default();
        let mut explicit_m = false;
        for (k, v) in pairs {
            let key = canonical_key(k.as_ref().trim());
            explicit_m |= key == "max_detections";
            cfg.set(&key, v.as_ref().trim())?;
        }
        if !cfg.use_unknown_class && !explicit_m {
            cfg.max_detections = NO_UNKNOWN_MAX_DETECTIONS;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the `key = value` document format.
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let k = key.as_str();
        match k {
            "sample_rate_hz" => self.sample_rate_hz = parse_num(k, value)?,
            "input_len_s" => self.input_len_s = parse_num(k, value)?,
            "hop_length" => self.hop_length = parse_num(k, value)?,
            "win_length" => self.win_length = parse_num(k, value)?,
            "filter_length" => self.filter_length = parse_num(k, value)?,
            "temporal_resolution" => self.temporal_resolution = parse_num(k, value)?,
            "num_keywords" => self.num_keywords = parse_num(k, value)?,
            "gamma" => self.gamma = parse_num(k, value)?,
            "focal_alpha" => self.focal_alpha = parse_num(k, value)?,
            "focal_beta" => self.focal_beta = parse_num(k, value)?,
            "lambda_len" => self.lambda_len = parse_num(k, value)?,
            "lambda_offset" => self.lambda_offset = parse_num(k, value)?,
            "max_detections" => self.max_detections = parse_num(k, value)?,
            "batch_size" => self.batch_size = parse_num(k, value)?,
            "learning_rate" => self.learning_rate = parse_num(k, value)?,
            "augment_prob" => self.augment_prob = parse_num(k, value)?,
            "use_unknown_class" => self.use_unknown_class = parse_bool(k, value)?,
            "regress_unknown" => self.regress_unknown = parse_bool(k, value)?,
            "log_spectrogram" => self.log_spectrogram = parse_bool(k, value)?,
            "normalize_spectrogram" => self.normalize_spectrogram = parse_bool(k, value)?,
            "noise_snr_db_min" => self.noise_snr_db_min = parse_num(k, value)?,
            "noise_snr_db_max" => self.noise_snr_db_max = parse_num(k, value)?,
            "pitch_shift_semitones" => self.pitch_shift_semitones = parse_num(k, value)?,
            "n_ch" => self.n_ch = parse_num(k, value)?,
            "depth" => self.depth = parse_num(k, value)?,
            "kernel_size" => self.kernel_size = parse_num(k, value)?,
            "length_prior_s" => self.length_prior_s = parse_num(k, value)?,
            "epochs" => self.epochs = parse_num(k, value)?,
            "peak_radius" => self.peak_radius = parse_num(k, value)?,
            "detection_threshold" => self.detection_threshold = parse_num(k, value)?,
            "match_iou" => self.match_iou = parse_num(k, value)?,
            "baseline_window_s" => self.baseline_window_s = parse_num(k, value)?,
            "baseline_merge_threshold" => self.baseline_merge_threshold = parse_num(k, value)?,
            "baseline_epochs" => self.baseline_epochs = parse_num(k, value)?,
            _ => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// String value of a canonical key, formatted so that parsing it back
    /// yields the identical value.
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match canonical_key(key).as_str() {
            "sample_rate_hz" => self.sample_rate_hz.to_string(),
            "input_len_s" => self.input_len_s.to_string(),
            "hop_length" => self.hop_length.to_string(),
            "win_length" => self.win_length.to_string(),
            "filter_length" => self.filter_length.to_string(),
            "temporal_resolution" => self.temporal_resolution.to_string(),
            "num_keywords" => self.num_keywords.to_string(),
            "gamma" => self.gamma.to_string(),
            "focal_alpha" => self.focal_alpha.to_string(),
            "focal_beta" => self.focal_beta.to_string(),
            "lambda_len" => self.lambda_len.to_string(),
            "lambda_offset" => self.lambda_offset.to_string(),
            "max_detections" => self.max_detections.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "augment_prob" => self.augment_prob.to_string(),
            "use_unknown_class" => self.use_unknown_class.to_string(),
            "regress_unknown" => self.regress_unknown.to_string(),
            "log_spectrogram" => self.log_spectrogram.to_string(),
            "normalize_spectrogram" => self.normalize_spectrogram.to_string(),
            "noise_snr_db_min" => self.noise_snr_db_min.to_string(),
            "noise_snr_db_max" => self.noise_snr_db_max.to_string(),
            "pitch_shift_semitones" => self.pitch_shift_semitones.to_string(),
            "n_ch" => self.n_ch.to_string(),
            "depth" => self.depth.to_string(),
            "kernel_size" => self.kernel_size.to_string(),
            "length_prior_s" => self.length_prior_s.to_string(),
            "epochs" => self.epochs.to_string(),
            "peak_radius" => self.peak_radius.to_string(),
            "detection_threshold" => self.detection_threshold.to_string(),
            "match_iou" => self.match_iou.to_string(),
            "baseline_window_s" => self.baseline_window_s.to_string(),
            "baseline_merge_threshold" => self.baseline_merge_threshold.to_string(),
            "baseline_epochs" => self.baseline_epochs.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Serializes every key in canonical order.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("{key} {msg}")));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz", "must be positive");
        }
        if !(self.input_len_s > 0.0 && self.input_len_s.is_finite()) {
            return bad("input_len_s", "out of range");
        }
        if self.hop_length == 0 {
            return bad("hop_length", "must be positive");
        }
        if self.win_length == 0 || self.win_length > self.filter_length {
            return bad("win_length", "must be in 1..=filter_length");
        }
        if self.temporal_resolution == 0 {
            return bad("temporal_resolution", "must be positive");
        }
        if self.num_keywords == 0 {
            return bad("num_keywords", "must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "out of range (0, 1]");
        }
        if !(self.focal_alpha >= 0.0 && self.focal_beta >= 0.0) {
            return bad("focal_alpha/focal_beta", "must be non-negative");
        }
        if !(self.lambda_len >= 0.0 && self.lambda_offset >= 0.0) {
            return bad("lambda_len/lambda_offset", "must be non-negative");
        }
        if self.max_detections == 0 {
            return bad("max_detections", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return bad("augment_prob", "out of range [0, 1]");
        }
        if self.noise_snr_db_min.is_nan() || self.noise_snr_db_min > self.noise_snr_db_max {
            return bad("noise_snr_db_min", "must not exceed noise_snr_db_max");
        }
        if !(0.0..=2.0).contains(&self.pitch_shift_semitones) {
            return bad("pitch_shift_semitones", "out of range [0, 2]");
        }
        if self.n_ch == 0 {
            return bad("n_ch", "must be positive");
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return bad("kernel_size", "must be odd");
        }
        if !self.temporal_resolution.is_multiple_of(1usize << self.depth.min(31)) {
            return bad("depth", "2^depth must divide temporal_resolution");
        }
        if !(self.length_prior_s > 0.0) {
            return bad("length_prior_s", "must be positive");
        }
        if self.peak_radius == 0 {
            return bad("peak_radius", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return bad("detection_threshold", "out of range [0, 1]");
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            return bad("match_iou", "out of range (0, 1]");
        }
        if !(self.baseline_window_s > 0.0) {
            return bad("baseline_window_s", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.baseline_merge_threshold) {
            return bad("baseline_merge_threshold", "out of range [0, 1]");
        }
        let raw_frames =
            self.input_len_s * self.sample_rate_hz as f64 / self.hop_length as f64;
        if raw_frames < self.temporal_resolution as f64 {
            return bad(
                "temporal_resolution",
                "exceeds the number of STFT frames in one input",
            );
        }
        Ok(())
    }

    /// Heatmap channels: C+1 with the unknown class, C without.
    pub fn heatmap_channels(&self) -> usize {
        if self.use_unknown_class {
            self.num_keywords + 1
        } else {
            self.num_keywords
        }
    }

    /// Class index reserved for non-keyword words.
    pub fn unknown_class(&self) -> usize {
        self.num_keywords
    }

    /// Frequency bins of the magnitude spectrogram.
    pub fn freq_bins(&self) -> usize {
        self.filter_length / 2 + 1
    }

    /// Samples in one model input.
    pub fn input_samples(&self) -> usize {
        (self.input_len_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Rate of the detector's output grid: frame index = seconds * rate.
    pub fn frames_per_second(&self) -> f64 {
        self.temporal_resolution as f64 / self.input_len_s
    }

    /// Hex SHA-256 over the keys that determine model compatibility.
    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        for key in MODEL_KEYS {
            h.update(key.as_bytes());
            h.update(b"=");
            h.update(self.get(key).expect("known key").as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Splits a config document into trimmed `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

/// Reads and validates a config file; absent keys keep their defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::parse_str(&text)
}

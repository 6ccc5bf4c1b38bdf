//! Audio ingestion, STFT magnitude features, length normalization and
//! training-time augmentation.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::scalar::Matrix;

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    /// Contiguous sub-clip `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self::new(
            self.samples[start..start + len].to_vec(),
            self.sample_rate_hz,
        )
    }
}

/// Magnitude spectrogram, `frames x freq_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Matrix<f64>,
    /// Frame index = (seconds - origin_offset_s) * frames_per_second.
    pub frames_per_second: f64,
    pub origin_offset_s: f64,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn freq_bins(&self) -> usize {
        self.data.cols()
    }

    pub fn time_of_frame(&self, frame: f64) -> f64 {
        self.origin_offset_s + frame / self.frames_per_second
    }

    pub fn frame_of_time(&self, t: f64) -> f64 {
        (t - self.origin_offset_s) * self.frames_per_second
    }
}

/// Reads a 16-bit PCM mono WAV at the configured rate.
pub fn read_wav(path: impl AsRef<Path>, expected_rate_hz: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Data(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Data(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    if spec.sample_rate != expected_rate_hz {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, expected {} Hz (resample first)",
            path.display(),
            spec.sample_rate,
            expected_rate_hz
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::wav(path, e))?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Duration of a WAV file without decoding its samples.
pub fn wav_duration_s(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    Ok(reader.duration() as f64 / reader.spec().sample_rate as f64)
}

/// Writes 16-bit PCM mono, clipping to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| Error::wav(path, e))?;
    }
    w.finalize().map_err(|e| Error::wav(path, e))
}

fn check_rate(clip: &AudioClip, cfg: &PipelineConfig) -> Result<()> {
    if clip.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::InvalidInput(format!(
            "clip sample rate {} Hz does not match configured {} Hz",
            clip.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    Ok(())
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitude; frames are not centered, so a clip of
/// `n` samples yields `1 + (n - win) / hop` frames.
pub fn stft_magnitude(clip: &AudioClip, cfg: &PipelineConfig) -> Result<Spectrogram> {
    check_rate(clip, cfg)?;
    let (hop, win, nfft) = (cfg.hop_length, cfg.win_length, cfg.filter_length);
    if clip.len() < win {
        return Err(Error::InvalidInput(format!(
            "clip too short: {} samples < win_length {}",
            clip.len(),
            win
        )));
    }
    let frames = 1 + (clip.len() - win) / hop;
    let bins = nfft / 2 + 1;
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Matrix::zeros(frames, bins);
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex::new(clip.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, z) in buf.iter().take(bins).enumerate() {
            data.set(f, k, z.norm());
        }
    }
    Ok(Spectrogram {
        data,
        frames_per_second: frames as f64 / clip.duration_s(),
        origin_offset_s: 0.0,
    })
}

/// Average-pools the time axis down to exactly `t` frames.
///
/// The pool kernel is `ceil(frames / t)`; the last pool may be partially
/// filled. The frame rate scales by `t / frames`.
pub fn reduce_to_t(spec: &Spectrogram, t: usize) -> Result<Spectrogram> {
    let frames = spec.frames();
    if t == 0 || frames < t {
        return Err(Error::InvalidInput(format!(
            "cannot reduce {frames} frames to {t}"
        )));
    }
    if frames == t {
        return Ok(spec.clone());
    }
    let kernel = frames.div_ceil(t);
    let bins = spec.freq_bins();
    let bounds = |j: usize| -> (usize, usize) {
        if (t - 1) * kernel < frames {
            (j * kernel, ((j + 1) * kernel).min(frames))
        } else {
            // fixed kernel would leave trailing pools empty
            (j * frames / t, ((j + 1) * frames).div_ceil(t))
        }
    };
    let mut data = Matrix::zeros(t, bins);
    for j in 0..t {
        let (lo, hi) = bounds(j);
        let inv = 1.0 / (hi - lo) as f64;
        for f in lo..hi {
            for (k, &v) in spec.data.row(f).iter().enumerate() {
                data.set(j, k, data.get(j, k) + v * inv);
            }
        }
    }
    Ok(Spectrogram {
        data,
        frames_per_second: spec.frames_per_second * t as f64 / frames as f64,
        origin_offset_s: spec.origin_offset_s,
    })
}

/// Full model input: STFT, reduction to T frames, then the configured
/// log compression and normalization.
pub fn extract_features(clip: &AudioClip, cfg: &PipelineConfig) -> Result<Spectrogram> {
    let spec = stft_magnitude(clip, cfg)?;
    let mut spec = reduce_to_t(&spec, cfg.temporal_resolution)?;
    if cfg.log_spectrogram {
        spec.data.as_mut_slice().iter_mut().for_each(|v| *v = v.ln_1p());
    }
    if cfg.normalize_spectrogram {
        let vals = spec.data.as_mut_slice();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-8).sqrt();
        vals.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Ok(spec)
}

/// Features on the model's frame grid for audio of any length, with origin
/// at the start of the audio.
///
/// Audio up to one input length is repeat-padded to it (frames past the end
/// describe the repetition). Longer audio is cut into consecutive input-length
/// chunks, the last one aligned to the end of the audio, and only the frames
/// of the last chunk that start after the previous chunk are kept.
pub fn extract_features_long(clip: &AudioClip, cfg: &PipelineConfig) -> Result<Spectrogram> {
    let chunk = cfg.input_samples();
    if clip.len() <= chunk {
        let padded = normalize_length(clip, cfg.input_len_s, LengthMode::RepeatPad, 0)?;
        return extract_features(&padded, cfg);
    }
    let bins = cfg.freq_bins();
    let fps = cfg.frames_per_second();
    let mut rows: Vec<f64> = Vec::new();
    let mut frames = 0usize;
    let mut start = 0usize;
    loop {
        let last = start + chunk >= clip.len();
        let s = if last { clip.len() - chunk } else { start };
        let spec = extract_features(&clip.slice(s, chunk), cfg)?;
        let chunk_origin = s as f64 / clip.sample_rate_hz as f64;
        for f in 0..spec.frames() {
            let t = chunk_origin + f as f64 / fps;
            if t + 1e-9 >= frames as f64 / fps {
                rows.extend_from_slice(spec.data.row(f));
                frames += 1;
            }
        }
        if last {
            break;
        }
        start += chunk;
    }
    Ok(Spectrogram {
        data: Matrix::from_vec(frames, bins, rows),
        frames_per_second: fps,
        origin_offset_s: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthMode {
    RepeatPad,
    RandomCrop,
    CenterCrop,
}

/// First sample of the window selected from a clip of `len` samples when
/// cropping to `target` samples (0 when no crop is needed).
pub fn crop_start(len: usize, target: usize, mode: LengthMode, rng_seed: u64) -> usize {
    if len <= target {
        return 0;
    }
    let slack = len - target;
    match mode {
        LengthMode::RepeatPad => 0,
        LengthMode::CenterCrop => slack / 2,
        LengthMode::RandomCrop => ChaCha8Rng::seed_from_u64(rng_seed).random_range(0..=slack),
    }
}

/// Produces exactly `round(target_s * rate)` samples: shorter clips are
/// tiled, longer clips are cropped according to `mode`.
pub fn normalize_length(
    clip: &AudioClip,
    target_s: f64,
    mode: LengthMode,
    rng_seed: u64,
) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty clip".into()));
    }
    let target = (target_s * clip.sample_rate_hz as f64).round() as usize;
    let samples = if clip.len() <= target {
        clip.samples.iter().copied().cycle().take(target).collect()
    } else {
        let start = crop_start(clip.len(), target, mode, rng_seed);
        clip.samples[start..start + target].to_vec()
    };
    Ok(AudioClip::new(samples, clip.sample_rate_hz))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    /// White Gaussian noise at the given signal-to-noise ratio in dB.
    AdditiveNoise { snr_db: f64 },
    /// Pitch shift in semitones, duration preserved. Range [-2, 2].
    PitchShift { semitones: f64 },
}

pub fn augment(clip: &AudioClip, kind: Augmentation, rng_seed: u64) -> Result<AudioClip> {
    match kind {
        Augmentation::AdditiveNoise { snr_db } => {
            if snr_db.is_nan() {
                return Err(Error::InvalidInput("SNR must not be NaN".into()));
            }
            let power = clip.power();
            if snr_db == f64::INFINITY || power == 0.0 {
                return Ok(clip.clone());
            }
            let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let samples = clip
                .samples
                .iter()
                .map(|&x| {
                    let n: f64 = rng.sample(StandardNormal);
                    x + noise_std * n
                })
                .collect();
            Ok(AudioClip::new(samples, clip.sample_rate_hz))
        }
        Augmentation::PitchShift { semitones } => {
            if !(-2.0..=2.0).contains(&semitones) {
                return Err(Error::InvalidInput(format!(
                    "pitch shift {semitones} semitones outside [-2, 2]"
                )));
            }
            if semitones == 0.0 {
                return Ok(clip.clone());
            }
            let ratio = 2f64.powf(semitones / 12.0);
            let stretched = time_stretch(&clip.samples, ratio);
            let mut out = resample_linear(&stretched, ratio);
            out.resize(clip.len(), 0.0);
            Ok(AudioClip::new(out, clip.sample_rate_hz))
        }
    }
}

/// Overlap-add time stretch; output is about `factor` times longer.
fn time_stretch(x: &[f64], factor: f64) -> Vec<f64> {
    const FRAME: usize = 1024;
    const HOP_IN: usize = 256;
    let hop_out = (HOP_IN as f64 * factor).round() as usize;
    let window = hann_window(FRAME);
    let out_len = (x.len() as f64 * factor).ceil() as usize + FRAME;
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut m = 0;
    while m * HOP_IN < x.len() {
        let (src, dst) = (m * HOP_IN, m * hop_out);
        for n in 0..FRAME {
            let s = x.get(src + n).copied().unwrap_or(0.0);
            if let Some(o) = out.get_mut(dst + n) {
                *o += s * window[n];
                norm[dst + n] += window[n];
            }
        }
        m += 1;
    }
    out.iter()
        .zip(&norm)
        .map(|(&o, &w)| if w > 1e-3 { o / w } else { o })
        .collect()
}

/// Reads `x` at `rate` samples per output sample (rate > 1 raises pitch).
fn resample_linear(x: &[f64], rate: f64) -> Vec<f64> {
    let n = (x.len() as f64 / rate).floor() as usize;
    (0..n)
        .map(|i| {
            let pos = i as f64 * rate;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

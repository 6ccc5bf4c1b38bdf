//! Word alignments, keyword classes, corpus layout and the synthetic
//! tone-pattern corpus generator.
//!
//! Corpus directory layout:
//!
//! ```text
//! <root>/keywords.txt          one keyword (or key phrase) per line, class order
//! <root>/alignments.tsv        utterance_id \t audio_path \t word \t start_s \t end_s
//! <root>/audio/*.wav           16-bit PCM mono
//! <root>/splits/{train,dev,test}.txt
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{augment, wav_duration_s, write_wav, AudioClip, Augmentation};

/// Ordered keyword list; class `c` is `names[c]`, class `C` is "unknown".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSet {
    names: Vec<String>,
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl KeywordSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("keyword set is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let norm = normalize_text(n.as_ref());
            if norm.is_empty() {
                return Err(Error::InvalidInput("empty keyword".into()));
            }
            if !seen.insert(norm.clone()) {
                return Err(Error::InvalidInput(format!("duplicate keyword {norm:?}")));
            }
            out.push(norm);
        }
        Ok(Self { names: out })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, cls: usize) -> Option<&str> {
        self.names.get(cls).map(String::as_str)
    }

    pub fn unknown_class(&self) -> usize {
        self.names.len()
    }

    /// Case-insensitive full-text match; unknown words map to `C`.
    pub fn class_of(&self, text: &str) -> usize {
        let norm = normalize_text(text);
        self.names
            .iter()
            .position(|n| *n == norm)
            .unwrap_or(self.unknown_class())
    }

    fn max_tokens(&self) -> usize {
        self.names
            .iter()
            .map(|n| n.split(' ').count())
            .max()
            .unwrap_or(1)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        Self::new(&names)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.names.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// A word occurrence in frame coordinates of the detector grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedWord {
    pub text: String,
    /// Keyword class, or `C` for unknown.
    pub cls: usize,
    /// Precise center, in frames.
    pub loc_pc: f64,
    /// Length, in frames.
    pub len: f64,
}

impl AlignedWord {
    pub fn from_interval(text: &str, cls: usize, start_s: f64, end_s: f64, fps: f64) -> Self {
        Self {
            text: text.to_string(),
            cls,
            loc_pc: 0.5 * (start_s + end_s) * fps,
            len: (end_s - start_s) * fps,
        }
    }

    /// Integer center frame.
    pub fn loc(&self) -> usize {
        self.loc_pc.floor().max(0.0) as usize
    }

    /// Sub-frame part of the center, in [0, 1).
    pub fn ofs(&self) -> f64 {
        self.loc_pc - self.loc_pc.floor()
    }

    pub fn start_frame(&self) -> f64 {
        self.loc_pc - 0.5 * self.len
    }

    pub fn end_frame(&self) -> f64 {
        self.loc_pc + 0.5 * self.len
    }

    pub fn start_s(&self, fps: f64) -> f64 {
        self.start_frame() / fps
    }

    pub fn end_s(&self, fps: f64) -> f64 {
        self.end_frame() / fps
    }

    /// Checks the clip-level invariants for a grid of `t` frames.
    pub fn check(&self, t: usize) -> Result<()> {
        let t = t as f64;
        if !(self.len > 0.0) {
            return Err(Error::InvalidInput(format!("word {:?}: non-positive length", self.text)));
        }
        if !(self.loc_pc >= 0.0 && self.loc_pc < t) {
            return Err(Error::InvalidInput(format!(
                "word {:?}: center {} outside [0, {t})",
                self.text, self.loc_pc
            )));
        }
        if self.start_frame() < -1.5 || self.end_frame() > t + 0.5 {
            return Err(Error::InvalidInput(format!(
                "word {:?}: extent exceeds clip bounds",
                self.text
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio_path: PathBuf,
    /// Sorted by `loc_pc`; frames relative to the start of the audio.
    pub words: Vec<AlignedWord>,
    pub duration_s: f64,
}

impl Utterance {
    /// Words of the `clip_s`-long model input cut from this utterance at
    /// `crop_start_s`, re-expressed in clip frames. Utterances shorter than
    /// the input are tiled, matching repeat padding of the audio.
    pub fn clip_words(&self, crop_start_s: f64, cfg: &PipelineConfig) -> Vec<AlignedWord> {
        let fps = cfg.frames_per_second();
        let t = cfg.temporal_resolution;
        let mut out = Vec::new();
        let copies = if self.duration_s < cfg.input_len_s {
            (cfg.input_len_s / self.duration_s).ceil() as usize
        } else {
            1
        };
        for k in 0..copies {
            let shift = (k as f64 * self.duration_s - crop_start_s) * fps;
            for w in &self.words {
                let moved = AlignedWord {
                    loc_pc: w.loc_pc + shift,
                    ..w.clone()
                };
                if moved.check(t).is_ok() {
                    out.push(moved);
                }
            }
        }
        out.sort_by(|a, b| a.loc_pc.total_cmp(&b.loc_pc));
        out
    }

    pub fn keyword_count(&self, keywords: &KeywordSet) -> usize {
        self.words.iter().filter(|w| w.cls < keywords.len()).count()
    }
}

/// One line of the alignment file.
#[derive(Debug, Clone, PartialEq)]
pub struct WordRecord {
    pub utterance_id: String,
    pub audio_path: String,
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

pub fn parse_alignment_records(text: &str) -> Result<Vec<WordRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "alignment line {}: expected 5 tab-separated fields, found {}",
                i + 1,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Data(format!("alignment line {}: bad time {s:?}", i + 1))
            })
        };
        let rec = WordRecord {
            utterance_id: fields[0].to_string(),
            audio_path: fields[1].to_string(),
            word: fields[2].to_string(),
            start_s: num(fields[3])?,
            end_s: num(fields[4])?,
        };
        if rec.start_s == rec.end_s {
            return Err(Error::Data(format!(
                "alignment line {}: degenerate interval for {:?}",
                i + 1,
                rec.word
            )));
        }
        if rec.start_s > rec.end_s {
            return Err(Error::Data(format!(
                "alignment line {}: start after end for {:?}",
                i + 1,
                rec.word
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn format_alignment_records(records: &[WordRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.utterance_id, r.audio_path, r.word, r.start_s, r.end_s
        );
    }
    s
}

/// Groups records by utterance (first-appearance order) and assigns classes,
/// merging runs of words that spell a multi-word key phrase.
fn records_to_utterances(
    records: &[WordRecord],
    base_dir: &Path,
    keywords: &KeywordSet,
    cfg: &PipelineConfig,
    duration_of: &mut dyn FnMut(&Path) -> Result<f64>,
) -> Result<Vec<Utterance>> {
    let fps = cfg.frames_per_second();
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&WordRecord>> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.utterance_id.clone()).or_default();
        if g.is_empty() {
            order.push(r.utterance_id.clone());
        } else if g[0].audio_path != r.audio_path {
            return Err(Error::Data(format!(
                "utterance {}: inconsistent audio paths",
                r.utterance_id
            )));
        }
        g.push(r);
    }
    let max_tokens = keywords.max_tokens();
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut recs = groups.remove(&id).expect("grouped");
        recs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let rel = Path::new(&recs[0].audio_path);
        let audio_path = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base_dir.join(rel)
        };
        if !audio_path.exists() {
            return Err(Error::Data(format!(
                "utterance {id}: audio file {} missing",
                audio_path.display()
            )));
        }
        let duration_s = duration_of(&audio_path)?;
        for r in &recs {
            if r.start_s < 0.0 || r.end_s > duration_s + 1e-6 {
                return Err(Error::Data(format!(
                    "utterance {id}: word {:?} [{}, {}] outside audio duration {duration_s}",
                    r.word, r.start_s, r.end_s
                )));
            }
        }
        let mut words = Vec::new();
        let mut i = 0;
        while i < recs.len() {
            // longest key phrase starting at record i
            let mut best: Option<(usize, usize)> = None;
            let mut joined = String::new();
            let mut tokens = 0;
            for (j, r) in recs.iter().enumerate().skip(i) {
                let norm = normalize_text(&r.word);
                tokens += norm.split(' ').count();
                if tokens > max_tokens {
                    break;
                }
                if !joined.is_empty() {
                    joined.push(' ');
                }
                joined.push_str(&norm);
                let c = keywords.class_of(&joined);
                if c < keywords.len() {
                    best = Some((j, c));
                }
            }
            let (last, cls) = best.unwrap_or((i, keywords.unknown_class()));
            let text = recs[i..=last]
                .iter()
                .map(|r| r.word.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            words.push(AlignedWord::from_interval(
                &text,
                cls,
                recs[i].start_s,
                recs[last].end_s,
                fps,
            ));
            i = last + 1;
        }
        words.sort_by(|a, b| a.loc_pc.total_cmp(&b.loc_pc));
        out.push(Utterance {
            id,
            audio_path,
            words,
            duration_s,
        });
    }
    Ok(out)
}

/// Reads an alignment TSV; relative audio paths resolve against the TSV's
/// directory.
pub fn load_alignments(
    path: impl AsRef<Path>,
    keywords: &KeywordSet,
    cfg: &PipelineConfig,
) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_alignment_records(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    records_to_utterances(&records, base, keywords, cfg, &mut |p| wav_duration_s(p))
}

/// Inverse of [`load_alignments`]: one record per aligned word, audio paths
/// written relative to `base_dir` when possible.
pub fn write_alignments(
    path: impl AsRef<Path>,
    utterances: &[Utterance],
    cfg: &PipelineConfig,
) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let fps = cfg.frames_per_second();
    let mut records = Vec::new();
    for u in utterances {
        let audio = u
            .audio_path
            .strip_prefix(base)
            .unwrap_or(&u.audio_path)
            .to_string_lossy()
            .into_owned();
        for w in &u.words {
            records.push(WordRecord {
                utterance_id: u.id.clone(),
                audio_path: audio.clone(),
                word: w.text.clone(),
                start_s: w.start_s(fps),
                end_s: w.end_s(fps),
            });
        }
    }
    fs::write(path, format_alignment_records(&records)).map_err(|e| Error::io(path, e))
}

/// Shuffles `ids` under `seed` and cuts them by cumulative rounding of
/// `fractions`, so counts always sum to `ids.len()`.
pub fn split_dataset(ids: &[String], fractions: &[f64], seed: u64) -> Result<Vec<Vec<String>>> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty corpus".into()));
    }
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::InvalidInput("split fractions must be non-negative".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len() as f64;
    let mut out = Vec::with_capacity(fractions.len());
    let (mut cum, mut prev) = (0.0, 0usize);
    for (k, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if k + 1 == fractions.len() {
            shuffled.len()
        } else {
            ((cum * n).round() as usize).min(shuffled.len())
        };
        out.push(shuffled[prev..end].to_vec());
        prev = end;
    }
    Ok(out)
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

/// A corpus directory loaded into memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub keywords: KeywordSet,
    pub utterances: Vec<Utterance>,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    pub fn load(root: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let keywords = KeywordSet::read(root.join("keywords.txt"))?;
        if keywords.len() != cfg.num_keywords {
            return Err(Error::Data(format!(
                "corpus defines {} keywords but num_keywords = {}",
                keywords.len(),
                cfg.num_keywords
            )));
        }
        let utterances = load_alignments(root.join("alignments.tsv"), &keywords, cfg)?;
        let mut splits = BTreeMap::new();
        for name in SPLIT_NAMES {
            let p = root.join("splits").join(format!("{name}.txt"));
            if p.exists() {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let ids = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect();
                splits.insert(name.to_string(), ids);
            }
        }
        Ok(Self {
            root,
            keywords,
            utterances,
            splits,
        })
    }

    /// Utterances of a named split, in split-file order.
    pub fn split(&self, name: &str) -> Result<Vec<&Utterance>> {
        let ids = self
            .splits
            .get(name)
            .ok_or_else(|| Error::Data(format!("corpus has no split {name:?}")))?;
        let by_id: BTreeMap<&str, &Utterance> =
            self.utterances.iter().map(|u| (u.id.as_str(), u)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("split {name}: unknown utterance {id}")))
            })
            .collect()
    }
}

/// Parameters of the synthetic corpus. Keywords are fixed three-tone
/// patterns; fillers are random two- or three-tone patterns from the same
/// tone vocabulary, packed back to back so the audio has no pauses.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_keywords: usize,
    pub utterances: usize,
    pub words_per_utterance: usize,
    pub utterance_s: f64,
    pub keyword_rate: f64,
    pub snr_db: f64,
    pub sample_rate_hz: u32,
    pub split_fractions: Vec<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_keywords: 3,
            utterances: 400,
            words_per_utterance: 12,
            utterance_s: 5.11,
            keyword_rate: 0.25,
            snr_db: 20.0,
            sample_rate_hz: 16_000,
            split_fractions: vec![0.75, 0.1, 0.15],
        }
    }
}

const KEYWORD_NAMES: [&str; 26] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
    "juliett", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
    "sierra", "tango", "uniform", "victor", "whiskey", "xray", "yankee", "zulu",
];

const TONES: usize = 10;

fn tone_hz(i: usize) -> f64 {
    300.0 * 10f64.powf(i as f64 / (TONES - 1) as f64)
}

/// Name, tone pattern and duration of every synthetic keyword. Depends only
/// on the class count, so corpora with different seeds share keywords.
pub fn synth_keywords(num_keywords: usize) -> Vec<(String, Vec<usize>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b77_7364);
    let mut patterns: Vec<Vec<usize>> = Vec::new();
    while patterns.len() < num_keywords {
        let p = random_pattern(&mut rng, 3);
        if !patterns.contains(&p) {
            patterns.push(p);
        }
    }
    patterns
        .into_iter()
        .enumerate()
        .map(|(c, p)| {
            let name = KEYWORD_NAMES
                .get(c)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("kw{c}"));
            (name, p, 0.30 + 0.03 * (c % 3) as f64)
        })
        .collect()
}

fn random_pattern(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    let mut p: Vec<usize> = Vec::with_capacity(len);
    while p.len() < len {
        let t = rng.random_range(0..TONES);
        if p.last() != Some(&t) {
            p.push(t);
        }
    }
    p
}

/// Summary returned by [`generate_synthetic_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusInfo {
    pub utterances: usize,
    pub words: usize,
    pub keywords: usize,
    pub total_word_s: f64,
    pub split_sizes: Vec<usize>,
}

fn synth_word(
    out: &mut [f64],
    start: usize,
    len: usize,
    pattern: &[usize],
    pitch: f64,
    amp: f64,
    rate: f64,
) {
    let fade = ((0.01 * rate) as usize).min(len / 4).max(1);
    let seg = len as f64 / pattern.len() as f64;
    let mut phase = 0.0;
    for n in 0..len {
        let tone = pattern[((n as f64 / seg) as usize).min(pattern.len() - 1)];
        phase += 2.0 * PI * tone_hz(tone) * pitch / rate;
        let env = if n < fade {
            0.5 - 0.5 * (PI * n as f64 / fade as f64).cos()
        } else if n >= len - fade {
            0.5 - 0.5 * (PI * (len - 1 - n) as f64 / fade as f64).cos()
        } else {
            1.0
        };
        if let Some(o) = out.get_mut(start + n) {
            *o = amp * env * phase.sin();
        }
    }
}

/// Writes a deterministic synthetic corpus to `dir`.
pub fn generate_synthetic_corpus(spec: &SynthSpec, dir: impl AsRef<Path>, seed: u64) -> Result<CorpusInfo> {
    if spec.num_keywords == 0 {
        return Err(Error::InvalidInput("synthetic corpus needs at least one keyword".into()));
    }
    if spec.utterances == 0 || spec.words_per_utterance == 0 {
        return Err(Error::InvalidInput("synthetic corpus needs utterances and words".into()));
    }
    if !(0.0..=1.0).contains(&spec.keyword_rate) {
        return Err(Error::InvalidInput("keyword_rate outside [0, 1]".into()));
    }
    let dir = dir.as_ref();
    let audio_dir = dir.join("audio");
    let split_dir = dir.join("splits");
    for d in [dir, &audio_dir, &split_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let kws = synth_keywords(spec.num_keywords);
    let names: Vec<&str> = kws.iter().map(|(n, _, _)| n.as_str()).collect();
    KeywordSet::new(&names)?.write(dir.join("keywords.txt"))?;
    let kw_patterns: Vec<&Vec<usize>> = kws.iter().map(|(_, p, _)| p).collect();

    let rate = spec.sample_rate_hz as f64;
    let n_samples = (spec.utterance_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut ids = Vec::with_capacity(spec.utterances);
    let mut info = CorpusInfo {
        utterances: spec.utterances,
        words: 0,
        keywords: 0,
        total_word_s: 0.0,
        split_sizes: Vec::new(),
    };
    for u in 0..spec.utterances {
        let id = format!("utt{u:05}");
        let rel_audio = format!("audio/{id}.wav");
        // slot plan: Some(class) for keywords, None for fillers
        let slots: Vec<Option<usize>> = (0..spec.words_per_utterance)
            .map(|_| {
                if rng.random_bool(spec.keyword_rate) {
                    Some(rng.random_range(0..spec.num_keywords))
                } else {
                    None
                }
            })
            .collect();
        let kw_total: f64 = slots.iter().flatten().map(|&c| kws[c].2).sum();
        let mut filler_lens: Vec<f64> = slots
            .iter()
            .filter(|s| s.is_none())
            .map(|_| rng.random_range(0.35..0.6))
            .collect();
        let raw: f64 = filler_lens.iter().sum();
        let target = spec.utterance_s - kw_total;
        if !filler_lens.is_empty() && target >= 0.2 * filler_lens.len() as f64 {
            filler_lens.iter_mut().for_each(|l| *l *= target / raw);
        }
        let pitch = rng.random_range(0.97..1.03);
        let mut samples = vec![0.0; n_samples];
        let mut t = 0.0;
        let mut fill_iter = filler_lens.into_iter();
        for slot in &slots {
            let (text, pattern, dur) = match slot {
                Some(c) => (kws[*c].0.clone(), kws[*c].1.clone(), kws[*c].2),
                None => {
                    let len = rng.random_range(2..=3);
                    let p = loop {
                        let p = random_pattern(&mut rng, len);
                        if !kw_patterns.contains(&&p) {
                            break p;
                        }
                    };
                    let text = format!(
                        "w{}",
                        p.iter().map(|d| d.to_string()).collect::<String>()
                    );
                    (text, p, fill_iter.next().expect("one length per filler"))
                }
            };
            let end = (t + dur).min(spec.utterance_s);
            if end - t < 0.05 {
                break;
            }
            let s0 = (t * rate).round() as usize;
            let s1 = ((end * rate).round() as usize).min(n_samples);
            let amp = rng.random_range(0.3..0.6);
            synth_word(&mut samples, s0, s1 - s0, &pattern, pitch, amp, rate);
            records.push(WordRecord {
                utterance_id: id.clone(),
                audio_path: rel_audio.clone(),
                word: text,
                start_s: (t * 1e6).round() / 1e6,
                end_s: (end * 1e6).round() / 1e6,
            });
            info.words += 1;
            info.total_word_s += end - t;
            if slot.is_some() {
                info.keywords += 1;
            }
            t = end;
        }
        let clean = AudioClip::new(samples, spec.sample_rate_hz);
        let noise_seed = rng.random::<u64>();
        let noisy = augment(&clean, Augmentation::AdditiveNoise { snr_db: spec.snr_db }, noise_seed)?;
        write_wav(dir.join(&rel_audio), &noisy)?;
        ids.push(id);
    }
    let tsv = dir.join("alignments.tsv");
    fs::write(&tsv, format_alignment_records(&records)).map_err(|e| Error::io(&tsv, e))?;
    let splits = split_dataset(&ids, &spec.split_fractions, seed)?;
    for (name, list) in SPLIT_NAMES.iter().zip(&splits) {
        let p = split_dir.join(format!("{name}.txt"));
        let mut body = list.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    info.split_sizes = splits.iter().map(Vec::len).collect();
    Ok(info)
}

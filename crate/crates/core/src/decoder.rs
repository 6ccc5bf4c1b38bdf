//! Peak decoding of prediction tensors into keyword detections.
//!
//! There is no non-maximum suppression: every local maximum of every class
//! column competes for the top-M slots.

use std::cmp::Ordering;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::KeywordSet;
use crate::error::{Error, Result};
use crate::model::PredictionTensors;
use crate::scalar::Scalar;

/// A decoded keyword occurrence on the frame grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cls: usize,
    pub score: f64,
    /// Center in frames, `t + offset`.
    pub center: f64,
    /// Length in frames.
    pub length: f64,
}

impl Detection {
    /// `[center - length/2, center + length/2]` in frames.
    pub fn interval(&self) -> (f64, f64) {
        let h = self.length.max(0.0) / 2.0;
        (self.center - h, self.center + h)
    }

    /// Interval in seconds on a grid with rate `fps` starting at `origin_s`.
    pub fn interval_s(&self, fps: f64, origin_s: f64) -> (f64, f64) {
        let (a, b) = self.interval();
        (origin_s + a / fps, origin_s + b / fps)
    }
}

/// Local maxima of one heatmap column with the default ±1 neighbourhood.
pub fn find_peaks<F: Scalar>(column: &[F]) -> Vec<(usize, F)> {
    find_peaks_radius(column, 1)
}

/// Local maxima within a ±`radius` neighbourhood.
///
/// A maximal run of equal values is a peak when every value within
/// `radius` frames outside the run is strictly smaller (out-of-range
/// neighbours count as -inf); only the run's leftmost index is emitted.
pub fn find_peaks_radius<F: Scalar>(column: &[F], radius: usize) -> Vec<(usize, F)> {
    let n = column.len();
    let radius = radius.max(1);
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let v = column[i];
        let mut j = i;
        while j + 1 < n && column[j + 1] == v {
            j += 1;
        }
        let left = i.saturating_sub(radius)..i;
        let right = (j + 1)..(j + 1 + radius).min(n);
        if left.chain(right).all(|k| column[k] < v) {
            peaks.push((i, v));
        }
        i = j + 1;
    }
    peaks
}

/// Ranking used for top-M selection: score descending, then frame, then
/// class ascending.
fn rank(a: &(usize, usize, f64), b: &(usize, usize, f64)) -> Ordering {
    b.2.partial_cmp(&a.2)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
        .then(a.1.cmp(&b.1))
}

/// Decodes predictions into at most `max_detections` keyword detections,
/// sorted by descending score.
///
/// Peaks of the unknown channel take part in the top-M selection and are
/// dropped afterwards.
pub fn decode<F: Scalar>(preds: &PredictionTensors<F>, cfg: &PipelineConfig) -> Vec<Detection> {
    let t_len = preds.heat.rows();
    let channels = preds.heat.cols();
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for c in 0..channels {
        let col = preds.heat.column(c);
        for (t, s) in find_peaks_radius(&col, cfg.peak_radius) {
            let s = s.to_f64_lossy();
            if s > 0.0 {
                cands.push((t, c, s));
            }
        }
    }
    cands.sort_by(rank);
    cands.truncate(cfg.max_detections);
    cands
        .into_iter()
        .filter(|&(_, c, _)| c < cfg.num_keywords)
        .filter(|&(t, _, _)| t < t_len)
        .map(|(t, c, s)| Detection {
            cls: c,
            score: s,
            center: t as f64 + preds.offset[t].to_f64_lossy(),
            length: preds.length[t].to_f64_lossy(),
        })
        .collect()
}

/// Keeps detections with `score >= theta`, preserving order.
pub fn score_threshold_filter(dets: &[Detection], theta: f64) -> Vec<Detection> {
    dets.iter().copied().filter(|d| d.score >= theta).collect()
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub utterance_id: String,
    pub keyword: String,
    pub score: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub center_s: f64,
}

impl DetectionRecord {
    pub fn from_detection(
        utterance_id: &str,
        det: &Detection,
        keywords: &KeywordSet,
        fps: f64,
        origin_s: f64,
    ) -> Result<Self> {
        let keyword = keywords
            .name(det.cls)
            .ok_or_else(|| Error::InvalidInput(format!("class {} has no keyword name", det.cls)))?;
        let (start_s, end_s) = det.interval_s(fps, origin_s);
        Ok(Self {
            utterance_id: utterance_id.to_string(),
            keyword: keyword.to_string(),
            score: det.score,
            start_s,
            end_s,
            center_s: origin_s + det.center / fps,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.start_s, self.end_s)
    }
}

/// Serializes records as JSON lines.
pub fn format_detections(records: &[DetectionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DetectionRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("detections line {}: {e}", i + 1)))?;
        if !(r.start_s <= r.end_s) || !r.score.is_finite() {
            return Err(Error::Data(format!("detections line {}: malformed interval or score", i + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_detections(path: impl AsRef<Path>, records: &[DetectionRecord]) -> Result<()> {
    let path = path.as_ref();
    let text = format_detections(records)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

/// Deduplicates detections from overlapping chunks of one utterance: among
/// same-keyword detections with IoU >= `iou_thr`, only the highest-scoring
/// one survives. Output is sorted by descending score, then start time.
pub fn merge_chunk_detections(mut records: Vec<DetectionRecord>, iou_thr: f64) -> Vec<DetectionRecord> {
    records.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.start_s.partial_cmp(&b.start_s).unwrap_or(Ordering::Equal))
            .then(a.keyword.cmp(&b.keyword))
    });
    let mut kept: Vec<DetectionRecord> = Vec::new();
    for r in records {
        let dup = kept.iter().any(|k| {
            k.utterance_id == r.utterance_id
                && k.keyword == r.keyword
                && crate::metrics::iou_1d(k.interval(), r.interval()).unwrap_or(0.0) >= iou_thr
        });
        if !dup {
            kept.push(r);
        }
    }
    kept
}

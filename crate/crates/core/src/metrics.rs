//! Detection metrics (1D IoU, AP, mAP over an IoU sweep, FRR at fixed false
//! alarm rates) and classification metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{KeywordSet, Utterance};
use crate::decoder::DetectionRecord;
use crate::error::{Error, Result};

/// IoU thresholds 0.05, 0.10, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// False alarm budgets (per hour) at which FRR is reported.
pub const FA_TARGETS: [f64; 3] = [5.0, 15.0, 25.0];

/// Intersection over union of two closed intervals; 0 when disjoint or when
/// both have zero length.
pub fn iou_1d(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if !(a.0 <= a.1) || !(b.0 <= b.1) {
        return Err(Error::InvalidInput(format!("malformed interval {a:?} or {b:?}")));
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok(inter / union)
}

/// A scored detection for matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInterval {
    pub utterance: String,
    pub cls: usize,
    pub score: f64,
    pub interval: (f64, f64),
}

/// A ground-truth keyword occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub utterance: String,
    pub cls: usize,
    pub interval: (f64, f64),
}

/// Greedy matching. Detections are visited by descending score (stable for
/// ties); each takes the unmatched same-class ground truth of its utterance
/// with the highest IoU (earliest on ties) if that IoU reaches `iou_thr`.
///
/// Returns, in visiting order, `(detection index, is_tp)`.
pub fn greedy_match(dets: &[ScoredInterval], gts: &[GroundTruth], iou_thr: f64) -> Vec<(usize, bool)> {
    let mut by_key: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_key.entry((g.utterance.as_str(), g.cls)).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
        .into_iter()
        .map(|di| {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            if let Some(cands) = by_key.get(&(d.utterance.as_str(), d.cls)) {
                for &gi in cands {
                    if matched[gi] {
                        continue;
                    }
                    let iou = iou_1d(d.interval, gts[gi].interval).unwrap_or(0.0);
                    if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((gi, iou));
                    }
                }
            }
            match best {
                Some((gi, _)) => {
                    matched[gi] = true;
                    (di, true)
                }
                None => (di, false),
            }
        })
        .collect()
}

/// Average precision of one class: area under the precision/recall curve
/// with the monotone precision envelope (all-point interpolation).
/// Returns 0 when there is no ground truth.
pub fn average_precision(dets: &[ScoredInterval], gts: &[GroundTruth], iou_thr: f64) -> f64 {
    let (prec, rec) = pr_curve(dets, gts, iou_thr);
    if rec.is_empty() {
        return 0.0;
    }
    let mut env = prec.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in rec.iter().zip(&env) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

/// Average precision without the envelope: mean precision at the rank of
/// each true positive, divided over all ground truths.
pub fn average_precision_uninterpolated(dets: &[ScoredInterval], gts: &[GroundTruth], iou_thr: f64) -> f64 {
    let (prec, rec) = pr_curve(dets, gts, iou_thr);
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in rec.iter().zip(&prec) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

fn pr_curve(dets: &[ScoredInterval], gts: &[GroundTruth], iou_thr: f64) -> (Vec<f64>, Vec<f64>) {
    if gts.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let n_gt = gts.len() as f64;
    let mut tp = 0usize;
    let mut prec = Vec::with_capacity(dets.len());
    let mut rec = Vec::with_capacity(dets.len());
    for (k, (_, hit)) in greedy_match(dets, gts, iou_thr).into_iter().enumerate() {
        if hit {
            tp += 1;
        }
        prec.push(tp as f64 / (k + 1) as f64);
        rec.push(tp as f64 / n_gt);
    }
    (prec, rec)
}

/// mAP result: the mean over thresholds and the class-mean AP per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAp {
    pub map: f64,
    pub per_threshold: Vec<f64>,
    /// `[threshold][class]`; `None` for classes without ground truth.
    pub per_class: Vec<Vec<Option<f64>>>,
}

/// Class-mean AP at each threshold, averaged over thresholds. Classes with
/// no ground truth are left out of the class mean.
pub fn mean_ap(dets: &[ScoredInterval], gts: &[GroundTruth], num_classes: usize, thresholds: &[f64]) -> MeanAp {
    let mut det_by_cls: Vec<Vec<ScoredInterval>> = vec![Vec::new(); num_classes];
    for d in dets.iter().filter(|d| d.cls < num_classes) {
        det_by_cls[d.cls].push(d.clone());
    }
    let mut gt_by_cls: Vec<Vec<GroundTruth>> = vec![Vec::new(); num_classes];
    for g in gts.iter().filter(|g| g.cls < num_classes) {
        gt_by_cls[g.cls].push(g.clone());
    }
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    let mut per_class = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let row: Vec<Option<f64>> = (0..num_classes)
            .map(|c| (!gt_by_cls[c].is_empty()).then(|| average_precision(&det_by_cls[c], &gt_by_cls[c], thr)))
            .collect();
        let vals: Vec<f64> = row.iter().flatten().copied().collect();
        per_threshold.push(if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        });
        per_class.push(row);
    }
    let map = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().sum::<f64>() / per_threshold.len() as f64
    };
    MeanAp {
        map,
        per_threshold,
        per_class,
    }
}

/// One operating point of the score-threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Detections with `score >= threshold` are accepted; `None` accepts
    /// nothing.
    pub threshold: Option<f64>,
    pub fa_per_hour: f64,
    pub frr: f64,
}

/// Every operating point, from accepting nothing down to the lowest
/// detection score.
pub fn operating_curve(
    dets: &[ScoredInterval],
    gts: &[GroundTruth],
    audio_hours: f64,
    match_iou: f64,
) -> Vec<OperatingPoint> {
    let n_gt = gts.len();
    let frr = |tp: usize| if n_gt == 0 { 0.0 } else { (n_gt - tp) as f64 / n_gt as f64 };
    let mut curve = vec![OperatingPoint {
        threshold: None,
        fa_per_hour: 0.0,
        frr: frr(0),
    }];
    // Matching is greedy in score order, so lowering the threshold only
    // appends decisions: sweep once.
    let decisions = greedy_match(dets, gts, match_iou);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(di, hit)) in decisions.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let score = dets[di].score;
        let last_of_score = decisions.get(k + 1).is_none_or(|&(dn, _)| dets[dn].score != score);
        if last_of_score {
            curve.push(OperatingPoint {
                threshold: Some(score),
                fa_per_hour: fp as f64 / audio_hours,
                frr: frr(tp),
            });
        }
    }
    curve
}

/// FRR at each false-alarm budget: the lowest FRR over thresholds whose
/// FA/h is within budget, or 1 when none is. On ties the highest threshold
/// wins.
pub fn frr_at_fa(
    dets: &[ScoredInterval],
    gts: &[GroundTruth],
    audio_hours: f64,
    fa_targets: &[f64],
    match_iou: f64,
) -> Result<Vec<OperatingPoint>> {
    if !(audio_hours > 0.0) {
        return Err(Error::InvalidInput("audio_hours must be positive".into()));
    }
    let curve = operating_curve(dets, gts, audio_hours, match_iou);
    Ok(fa_targets
        .iter()
        .map(|&fa| {
            curve
                .iter()
                .filter(|p| p.fa_per_hour <= fa)
                .min_by(|a, b| a.frr.total_cmp(&b.frr))
                .map(|p| OperatingPoint {
                    fa_per_hour: fa,
                    ..*p
                })
                .unwrap_or(OperatingPoint {
                    threshold: None,
                    fa_per_hour: fa,
                    frr: 1.0,
                })
        })
        .collect())
}

/// Real-time factor: processing time over audio time.
pub fn rtf(process_time_s: f64, audio_time_s: f64) -> Result<f64> {
    if !(audio_time_s > 0.0) {
        return Err(Error::InvalidInput("audio time must be positive".into()));
    }
    Ok(process_time_s / audio_time_s)
}

/// Fraction of equal labels; 0 for empty input.
pub fn classification_accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// TP/FP/FN counts at one IoU threshold (all classes pooled).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub keywords: Vec<String>,
    pub iou_thresholds: Vec<f64>,
    /// `[threshold][class]`; `None` where a class has no ground truth.
    pub ap_per_class: Vec<Vec<Option<f64>>>,
    pub ap_per_threshold: Vec<f64>,
    pub map: f64,
    pub ap5: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub frr: Vec<OperatingPoint>,
    pub counts: Vec<MatchCounts>,
    pub rtf: Option<f64>,
    pub classification_accuracy: Option<f64>,
    pub audio_hours: f64,
    pub num_detections: usize,
    pub num_ground_truth: usize,
    pub metadata: BTreeMap<String, String>,
}

/// Keyword occurrences of `utterances` as ground truth in seconds.
pub fn ground_truth(utterances: &[&Utterance], num_keywords: usize, fps: f64) -> Vec<GroundTruth> {
    utterances
        .iter()
        .flat_map(|u| {
            u.words.iter().filter(|w| w.cls < num_keywords).map(move |w| GroundTruth {
                utterance: u.id.clone(),
                cls: w.cls,
                interval: (w.start_s(fps).max(0.0), w.end_s(fps).min(u.duration_s)),
            })
        })
        .collect()
}

/// Converts detection records to matchable intervals, rejecting unknown
/// utterance ids and keyword names.
pub fn scored_intervals(
    records: &[DetectionRecord],
    keywords: &KeywordSet,
    utterance_ids: &[&str],
) -> Result<Vec<ScoredInterval>> {
    let known: std::collections::BTreeSet<&str> = utterance_ids.iter().copied().collect();
    records
        .iter()
        .map(|r| {
            if !known.contains(r.utterance_id.as_str()) {
                return Err(Error::Data(format!(
                    "detection for utterance {:?} which has no ground truth",
                    r.utterance_id
                )));
            }
            let cls = keywords.class_of(&r.keyword);
            if cls >= keywords.len() {
                return Err(Error::Data(format!("detection keyword {:?} is not a keyword", r.keyword)));
            }
            Ok(ScoredInterval {
                utterance: r.utterance_id.clone(),
                cls,
                score: r.score,
                interval: r.interval(),
            })
        })
        .collect()
}

/// Full evaluation of scored detections against ground truth.
pub fn evaluate(
    dets: &[ScoredInterval],
    gts: &[GroundTruth],
    keywords: &KeywordSet,
    audio_hours: f64,
    match_iou: f64,
) -> Result<EvalReport> {
    let thresholds = iou_thresholds();
    let m = mean_ap(dets, gts, keywords.len(), &thresholds);
    let at = |iou: f64| {
        thresholds
            .iter()
            .position(|&t| (t - iou).abs() < 1e-9)
            .map(|i| m.per_threshold[i])
            .unwrap_or(0.0)
    };
    let counts = thresholds
        .iter()
        .map(|&thr| {
            let tp = greedy_match(dets, gts, thr).iter().filter(|(_, hit)| *hit).count();
            MatchCounts {
                iou: thr,
                tp,
                fp: dets.len() - tp,
                fn_: gts.len() - tp,
            }
        })
        .collect();
    Ok(EvalReport {
        keywords: keywords.names().to_vec(),
        iou_thresholds: thresholds.clone(),
        ap_per_class: m.per_class.clone(),
        ap_per_threshold: m.per_threshold.clone(),
        map: m.map,
        ap5: at(0.05),
        ap50: at(0.5),
        ap75: at(0.75),
        frr: frr_at_fa(dets, gts, audio_hours, &FA_TARGETS, match_iou)?,
        counts,
        rtf: None,
        classification_accuracy: None,
        audio_hours,
        num_detections: dets.len(),
        num_ground_truth: gts.len(),
        metadata: BTreeMap::new(),
    })
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

impl EvalReport {
    /// FRR at a given FA/h budget, if it was computed.
    pub fn frr_at(&self, fa: f64) -> Option<f64> {
        self.frr.iter().find(|p| p.fa_per_hour == fa).map(|p| p.frr)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut header = vec!["AP@5", "AP@50", "AP@75", "mAP"];
        let mut row = vec![fmt4(self.ap5), fmt4(self.ap50), fmt4(self.ap75), fmt4(self.map)];
        let frr_labels: Vec<String> = self.frr.iter().map(|p| format!("FRR@{}", p.fa_per_hour)).collect();
        for (label, p) in frr_labels.iter().zip(&self.frr) {
            header.push(label);
            row.push(fmt4(p.frr));
        }
        header.push("RTF");
        row.push(self.rtf.map(fmt4).unwrap_or_else(|| "-".into()));
        if let Some(acc) = self.classification_accuracy {
            header.push("Acc");
            row.push(fmt4(acc));
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(header.iter().map(|s| s.to_string()).collect()));
        let _ = writeln!(out, "{}", line(row));
        let _ = writeln!(out);
        let _ = writeln!(out, "per-class AP@50:");
        if let Some(i) = self.iou_thresholds.iter().position(|&t| (t - 0.5).abs() < 1e-9) {
            for (name, ap) in self.keywords.iter().zip(&self.ap_per_class[i]) {
                let v = ap.map(fmt4).unwrap_or_else(|| "n/a".into());
                let _ = writeln!(out, "  {name:<12} {v}");
            }
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }
}

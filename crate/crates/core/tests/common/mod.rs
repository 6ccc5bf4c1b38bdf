//! Independent oracles and instance generators shared by the integration
//! tests and the acceptance harness. Nothing here calls the code paths it
//! is used to check.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;

use kwsdet::dataset::AlignedWord;
use kwsdet::metrics::{GroundTruth, ScoredInterval};
use kwsdet::model::{ArchSpec, DetectorParams, ParamSet};
use kwsdet::losses::PredictionGrads;
use kwsdet::{Matrix, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ------------------------------------------------------------------ losses

/// Direct summation of the focal heatmap loss, cell by cell.
pub fn focal_oracle(pred: &[f64], target: &[f64], n: usize, alpha: f64, beta: f64) -> f64 {
    let mut s = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        s += if y == 1.0 {
            (1.0 - p).powf(alpha) * p.ln()
        } else {
            (1.0 - y).powf(beta) * p.powf(alpha) * (1.0 - p).ln()
        };
    }
    -s / n.max(1) as f64
}

/// Masked L1 by definition.
pub fn l1_oracle(pred: &[f64], target: &[f64], mask: &[bool], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        if mask[i] {
            s += (pred[i] - target[i]).abs();
        }
    }
    s / n.max(1) as f64
}

/// Random heatmap prediction in `[lo, 1-lo]` and a target with some exact
/// ones and Gaussian-like soft values elsewhere.
pub fn random_heat_pair(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64) -> (Matrix<f64>, Matrix<f64>, usize) {
    let pred = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..1.0 - lo)).collect());
    let mut ones = 0;
    let target = Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| match rng.random_range(0..4) {
                0 => {
                    ones += 1;
                    1.0
                }
                1 => 0.0,
                _ => rng.random_range(0.0..0.999),
            })
            .collect(),
    );
    (pred, target, ones)
}

/// Denominator floor for backbone gradient comparisons: below it the
/// relative tolerance 1e-3 acts as an absolute tolerance of 1e-5.
pub const GRAD_FLOOR: f64 = 1e-2;

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// --------------------------------------------------------------- backbone

pub fn grad_check_arch() -> ArchSpec {
    ArchSpec {
        freq_bins: 6,
        channels: 4,
        depth: 2,
        kernel: 3,
        heat_channels: 3,
        frames: 16,
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Scalar probe `sum r*heat + sum s*length + sum u*offset` of the outputs.
pub struct Probe {
    pub grads: PredictionGrads<f64>,
}

impl Probe {
    pub fn random(rng: &mut ChaCha8Rng, t: usize, ch: usize) -> Self {
        let mut grads = PredictionGrads::<f64>::zeros(t, ch);
        grads.heat.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        grads.length.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        grads.offset.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        Self { grads }
    }

    pub fn value(&self, p: &DetectorParams<f64>, x: &Matrix<f64>) -> f64 {
        let out = p.predict(x).expect("forward");
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        dot(out.heat.as_slice(), self.grads.heat.as_slice())
            + dot(&out.length, &self.grads.length)
            + dot(&out.offset, &self.grads.offset)
    }
}

/// Largest relative error between backprop and central differences over
/// every parameter of a freshly initialised tiny detector.
pub fn backbone_grad_check(seed: u64, eps: f64) -> f64 {
    let arch = grad_check_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = DetectorParams::<f64>::init(&arch, 6.0, seed).expect("init");
    // Nudge the zero-initialised biases so every path carries gradient.
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let x = random_matrix(&mut rng, arch.frames, arch.freq_bins, -1.0, 2.0);
    let probe = Probe::random(&mut rng, arch.frames, arch.heat_channels);
    let (_, cache) = p.forward(&x).expect("forward");
    let analytic: Vec<f64> = p
        .backward(&cache, &probe.grads)
        .expect("backward")
        .tensors()
        .concat();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        let len = p.tensors()[ti].len();
        for k in 0..len {
            let orig = p.tensors()[ti][k];
            p.tensors_mut()[ti][k] = orig + eps;
            let up = probe.value(&p, &x);
            p.tensors_mut()[ti][k] = orig - eps;
            let down = probe.value(&p, &x);
            p.tensors_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[idx], numeric, GRAD_FLOOR));
            idx += 1;
        }
    }
    worst
}

/// Largest heat deviation between the prediction on a circularly shifted
/// input and the shifted prediction, over frames whose receptive fields
/// avoid both the borders and the wrap-around seam.
pub fn shift_equivariance_error(seed: u64) -> f64 {
    let arch = ArchSpec {
        frames: 128,
        ..grad_check_arch()
    };
    let shift = 1usize << arch.depth;
    let r = arch.receptive_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = DetectorParams::<f64>::init(&arch, 6.0, seed).expect("init");
    let x = random_matrix(&mut rng, arch.frames, arch.freq_bins, 0.0, 2.0);
    let t = arch.frames;
    let mut shifted = Matrix::zeros(t, arch.freq_bins);
    for i in 0..t {
        for k in 0..arch.freq_bins {
            shifted.set((i + shift) % t, k, x.get(i, k));
        }
    }
    let a = p.predict(&x).expect("forward");
    let b = p.predict(&shifted).expect("forward");
    let mut worst = 0.0f64;
    for i in (shift + r)..(t - r) {
        for c in 0..arch.heat_channels {
            worst = worst.max((b.heat.get(i, c) - a.heat.get(i - shift, c)).abs());
        }
    }
    worst
}

// ------------------------------------------------------------- word layouts

/// Random clip layout obeying the word invariants, with distinct centre
/// frames, same-class centres at least two frames apart and at most
/// `max_words` words.
pub fn random_layout(rng: &mut ChaCha8Rng, cfg: &PipelineConfig, max_words: usize) -> Vec<AlignedWord> {
    let t = cfg.temporal_resolution;
    let classes = cfg.num_keywords + 1;
    let n = rng.random_range(0..=max_words);
    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    let mut words = Vec::new();
    for _ in 0..n * 4 {
        if words.len() == n {
            break;
        }
        let cls = rng.random_range(0..classes);
        let len: f64 = rng.random_range(1.0..40.0);
        let lo = (0.5 * len - 1.5).max(0.0);
        let hi = (t as f64 + 0.5 - 0.5 * len).min(t as f64 - 1e-9);
        if lo >= hi {
            continue;
        }
        let loc_pc: f64 = rng.random_range(lo..hi);
        let loc = loc_pc.floor() as usize;
        if used.contains(&loc) || by_class[cls].iter().any(|&o| o.abs_diff(loc) < 2) {
            continue;
        }
        used.insert(loc);
        by_class[cls].push(loc);
        words.push(AlignedWord {
            text: format!("w{}", words.len()),
            cls,
            loc_pc,
            len,
        });
    }
    words
}

// ---------------------------------------------------------------- metrics

pub fn oracle_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy assignment of the detections `chosen` (already in visiting
/// order); returns the number of true positives.
fn oracle_true_positives(dets: &[ScoredInterval], chosen: &[usize], gts: &[GroundTruth], thr: f64) -> usize {
    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for &d in chosen {
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.utterance != dets[d].utterance || gt.cls != dets[d].cls {
                continue;
            }
            let iou = oracle_iou(dets[d].interval, gt.interval);
            if iou >= thr && iou > best_iou {
                best = Some(g);
                best_iou = iou;
            }
        }
        if let Some(g) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    tp
}

/// Visiting order: descending score, index order among ties.
fn oracle_order(dets: &[ScoredInterval]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && dets[order[j]].score > dets[order[j - 1]].score {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    order
}

/// Brute-force AP of one class: every prefix of the ranking is matched from
/// scratch to get its (recall, precision) point, and each recall increment
/// is weighted by the best precision reached at that recall or beyond.
pub fn oracle_ap(dets: &[ScoredInterval], gts: &[GroundTruth], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let order = oracle_order(dets);
    let points: Vec<(f64, f64)> = (1..=order.len())
        .map(|k| {
            let tp = oracle_true_positives(dets, &order[..k], gts, thr) as f64;
            (tp / gts.len() as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &(r, _) in &points {
        if r > prev {
            let best = points
                .iter()
                .filter(|&&(r2, _)| r2 >= r)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max);
            ap += (r - prev) * best;
            prev = r;
        }
    }
    ap
}

/// mAP by definition: per threshold, the mean AP over classes that have
/// ground truth; then the mean over thresholds.
pub fn oracle_map(dets: &[ScoredInterval], gts: &[GroundTruth], classes: usize, thresholds: &[f64]) -> f64 {
    let mut total = 0.0;
    for &thr in thresholds {
        let mut sum = 0.0;
        let mut count = 0;
        for c in 0..classes {
            let g: Vec<GroundTruth> = gts.iter().filter(|g| g.cls == c).cloned().collect();
            if g.is_empty() {
                continue;
            }
            let d: Vec<ScoredInterval> = dets.iter().filter(|d| d.cls == c).cloned().collect();
            sum += oracle_ap(&d, &g, thr);
            count += 1;
        }
        total += if count == 0 { 0.0 } else { sum / count as f64 };
    }
    total / thresholds.len() as f64
}

/// Exhaustive threshold sweep: at "accept nothing" and at every distinct
/// score, match the accepted detections from scratch; report the lowest
/// FRR among thresholds whose FA/h fits the budget (1 if none do).
pub fn oracle_frr(dets: &[ScoredInterval], gts: &[GroundTruth], hours: f64, budget: f64, match_iou: f64) -> f64 {
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let order = oracle_order(dets);
    let frr_of = |tp: usize| {
        if gts.is_empty() {
            0.0
        } else {
            (gts.len() - tp) as f64 / gts.len() as f64
        }
    };
    let mut best: Option<f64> = Some(frr_of(0)); // nothing accepted, FA = 0
    for theta in thresholds {
        let chosen: Vec<usize> = order.iter().copied().filter(|&i| dets[i].score >= theta).collect();
        let tp = oracle_true_positives(dets, &chosen, gts, match_iou);
        let fa = (chosen.len() - tp) as f64 / hours;
        if fa <= budget {
            let f = frr_of(tp);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
    }
    best.unwrap_or(1.0)
}

/// Random matching instance: a few utterances and classes, ≤ `max_dets`
/// detections jittered around (or far from) ≤ `max_gts` ground truths.
/// With `tied_scores`, scores are drawn from a coarse grid so ties occur.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    classes: usize,
    max_dets: usize,
    max_gts: usize,
    tied_scores: bool,
) -> (Vec<ScoredInterval>, Vec<GroundTruth>) {
    let utts = ["u0", "u1", "u2"];
    let n_gt = rng.random_range(0..=max_gts);
    let gts: Vec<GroundTruth> = (0..n_gt)
        .map(|_| {
            let s = rng.random_range(0.0..4.0);
            GroundTruth {
                utterance: utts[rng.random_range(0..utts.len())].to_string(),
                cls: rng.random_range(0..classes),
                interval: (s, s + rng.random_range(0.1..0.6)),
            }
        })
        .collect();
    let n_det = rng.random_range(0..=max_dets);
    let dets = (0..n_det)
        .map(|_| {
            let score = if tied_scores {
                rng.random_range(1..=5) as f64 / 5.0
            } else {
                rng.random_range(0.0..1.0)
            };
            if !gts.is_empty() && rng.random_bool(0.7) {
                let g = &gts[rng.random_range(0..gts.len())];
                let j = rng.random_range(-0.15..0.15);
                let w = (g.interval.1 - g.interval.0) * rng.random_range(0.6..1.4);
                let cls = if rng.random_bool(0.85) { g.cls } else { rng.random_range(0..classes) };
                ScoredInterval {
                    utterance: g.utterance.clone(),
                    cls,
                    score,
                    interval: (g.interval.0 + j, g.interval.0 + j + w),
                }
            } else {
                let s = rng.random_range(0.0..4.0);
                ScoredInterval {
                    utterance: utts[rng.random_range(0..utts.len())].to_string(),
                    cls: rng.random_range(0..classes),
                    score,
                    interval: (s, s + rng.random_range(0.1..0.6)),
                }
            }
        })
        .collect();
    (dets, gts)
}

// --------------------------------------------------------- window coverage

/// Whether every interval on a 10 ms grid inside `[0, duration]` with
/// length at most `max_x` lies entirely inside some window.
pub fn windows_cover(windows: &[(f64, f64)], duration: f64, max_x: f64) -> bool {
    let n = (duration * 100.0 + 1e-9).floor() as i64;
    let m = (max_x * 100.0 + 1e-9).floor() as i64;
    for a in 0..=n {
        for len in 0..=m {
            let b = a + len;
            if b > n {
                break;
            }
            let (s, e) = (a as f64 / 100.0, b as f64 / 100.0);
            if !windows.iter().any(|&(ws, we)| ws <= s + 1e-9 && e <= we + 1e-9) {
                return false;
            }
        }
    }
    true
}

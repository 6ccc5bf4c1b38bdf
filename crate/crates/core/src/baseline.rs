//! Sliding-window classification baseline: window planning under the
//! coverage constraints, step-size grid search, and conversion of window
//! posteriors into detections.

use std::cmp::Ordering;

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// Default step sizes searched on the dev split.
pub const STEP_GRID_S: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Windows of length `l_in` every `l_step` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub l_in: f64,
    pub l_step: f64,
    pub windows: Vec<(f64, f64)>,
}

/// Checks `l_in > max_x` and `l_step < l_in - max_x`, the conditions under
/// which every interval no longer than `max_x` lies inside some window.
/// Equality within 1e-9 s counts as a violation.
pub fn check_window_constraints(l_in: f64, l_step: f64, max_x: f64) -> Result<()> {
    if !(l_step > 0.0) || !(max_x >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "window step ({l_step}) must be positive and MAX_x ({max_x}) non-negative"
        )));
    }
    if !(l_in > max_x + EPS) {
        return Err(Error::InvalidInput(format!(
            "window length must exceed the longest keyword: L_in <= MAX_x ({l_in} <= {max_x})"
        )));
    }
    let slack = l_in - max_x;
    if !(l_step < slack - EPS) {
        return Err(Error::InvalidInput(format!(
            "window step too large: L_step >= L_in - MAX_x ({l_step} >= {slack:.6})"
        )));
    }
    Ok(())
}

/// Windows starting at `k * l_step`, plus a final window aligned to the end
/// of the audio. Audio shorter than one window gets the single window
/// `[0, l_in]`.
pub fn plan_windows(duration_s: f64, l_in: f64, l_step: f64, max_x: f64) -> Result<WindowPlan> {
    check_window_constraints(l_in, l_step, max_x)?;
    if !(duration_s > 0.0) {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration_s}")));
    }
    let mut windows = Vec::new();
    if duration_s <= l_in + EPS {
        windows.push((0.0, l_in));
    } else {
        let mut k = 0usize;
        loop {
            let start = k as f64 * l_step;
            if start + l_in >= duration_s - EPS {
                break;
            }
            windows.push((start, start + l_in));
            k += 1;
        }
        windows.push((duration_s - l_in, duration_s));
    }
    Ok(WindowPlan { l_in, l_step, windows })
}

impl WindowPlan {
    /// Index of a window containing `[a, b]`, if any.
    pub fn containing(&self, a: f64, b: f64) -> Option<usize> {
        self.windows
            .iter()
            .position(|&(s, e)| s <= a + EPS && b <= e + EPS)
    }
}

/// Picks the admissible step with the best dev score; ties go to the larger
/// step. `score` is called once per admissible step in ascending order.
pub fn grid_search_step(
    steps: &[f64],
    l_in: f64,
    max_x: f64,
    mut score: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut admissible: Vec<f64> = steps
        .iter()
        .copied()
        .filter(|&s| check_window_constraints(l_in, s, max_x).is_ok())
        .collect();
    admissible.sort_by(f64::total_cmp);
    if admissible.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no step in {steps:?} satisfies L_step < L_in - MAX_x = {:.6}",
            l_in - max_x
        )));
    }
    let mut results = Vec::with_capacity(admissible.len());
    let mut best: Option<(f64, f64)> = None;
    for s in admissible {
        let v = score(s)?;
        results.push((s, v));
        if best.is_none_or(|(_, bv)| v >= bv) {
            best = Some((s, v));
        }
    }
    Ok((best.expect("non-empty").0, results))
}

/// A detection spanning one or more windows, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanDetection {
    pub cls: usize,
    pub score: f64,
    pub start_s: f64,
    pub end_s: f64,
}

/// Turns per-window class posteriors into detections.
///
/// Posterior layout: `num_keywords` keyword classes, then unknown, then
/// background. A window whose best non-background class is a keyword with
/// probability at least `theta` becomes a candidate spanning the window;
/// runs of consecutive overlapping same-class candidates merge (union
/// interval, maximum score).
pub fn windows_to_detections(
    window_scores: &[Vec<f64>],
    plan: &WindowPlan,
    num_keywords: usize,
    theta: f64,
) -> Result<Vec<SpanDetection>> {
    if window_scores.len() != plan.windows.len() {
        return Err(Error::Shape(format!(
            "{} score vectors for {} windows",
            window_scores.len(),
            plan.windows.len()
        )));
    }
    let mut cands = Vec::new();
    for (scores, &(s, e)) in window_scores.iter().zip(&plan.windows) {
        if scores.len() != num_keywords + 2 {
            return Err(Error::Shape(format!(
                "window posterior has {} entries, expected {}",
                scores.len(),
                num_keywords + 2
            )));
        }
        let (best, &p) = scores[..=num_keywords]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
            .expect("at least one class");
        if best < num_keywords && p >= theta {
            cands.push(SpanDetection {
                cls: best,
                score: p,
                start_s: s,
                end_s: e,
            });
        }
    }
    Ok(merge_spans(&cands))
}

/// Merges runs of consecutive, overlapping, same-class detections (input
/// order is kept). Applying it to its own output changes nothing.
pub fn merge_spans(dets: &[SpanDetection]) -> Vec<SpanDetection> {
    let mut out: Vec<SpanDetection> = Vec::new();
    for d in dets {
        match out.last_mut() {
            Some(cur) if cur.cls == d.cls && d.start_s < cur.end_s && cur.start_s < d.end_s => {
                cur.start_s = cur.start_s.min(d.start_s);
                cur.end_s = cur.end_s.max(d.end_s);
                cur.score = cur.score.max(d.score);
            }
            _ => out.push(*d),
        }
    }
    out
}

/// Label of a window under full containment: the keyword lying entirely
/// inside it, else unknown if some other word does, else background.
/// `words` are `(class, start_s, end_s)` with classes `0..=num_keywords`.
pub fn window_label(words: &[(usize, f64, f64)], window: (f64, f64), num_keywords: usize) -> usize {
    let inside = |&&(_, a, b): &&(usize, f64, f64)| window.0 <= a + EPS && b <= window.1 + EPS;
    let contained: Vec<&(usize, f64, f64)> = words.iter().filter(inside).collect();
    if let Some(k) = contained
        .iter()
        .filter(|w| w.0 < num_keywords)
        .max_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1)))
    {
        return k.0;
    }
    if contained.is_empty() {
        num_keywords + 1
    } else {
        num_keywords
    }
}

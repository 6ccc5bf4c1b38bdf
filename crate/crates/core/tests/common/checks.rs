//! Property checks over many random instances. Each returns a one-line
//! summary on success and the first counterexample on failure.

use kwsdet::baseline::plan_windows;
use kwsdet::decoder::{decode, score_threshold_filter};
use kwsdet::encoder::encode_targets;
use kwsdet::losses::{focal_heatmap_loss, total_loss};
use kwsdet::metrics::{average_precision, frr_at_fa, iou_thresholds, mean_ap};
use kwsdet::model::PredictionTensors;
use kwsdet::PipelineConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = std::result::Result<String, String>;

/// Loss gradients against central differences (tolerance 1e-5) and the
/// backbone against central differences at step 1e-3 (tolerance 1e-3).
pub fn gradients(seeds: u64) -> Check {
    let mut worst_loss = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pred, target, n) = random_heat_pair(&mut rng, 8, 3, 0.05);
        let (_, grad) = focal_heatmap_loss(&pred, &target, n, 2.0, 4.0).map_err(|e| e.to_string())?;
        for i in 0..pred.as_slice().len() {
            let h = 1e-5;
            let mut up = pred.clone();
            up.as_mut_slice()[i] += h;
            let mut down = pred.clone();
            down.as_mut_slice()[i] -= h;
            let numeric = (focal_oracle(up.as_slice(), target.as_slice(), n, 2.0, 4.0)
                - focal_oracle(down.as_slice(), target.as_slice(), n, 2.0, 4.0))
                / (2.0 * h);
            worst_loss = worst_loss.max(rel_err(grad.as_slice()[i], numeric, 1e-3));
        }
        let t = 16;
        let target: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..20.0)).collect();
        let pred: Vec<f64> = target
            .iter()
            .map(|&y| y + rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let mask: Vec<bool> = (0..t).map(|_| rng.random_bool(0.4)).collect();
        let n = rng.random_range(0..5);
        let (_, g) = kwsdet::losses::masked_l1_loss(&pred, &target, &mask, n).map_err(|e| e.to_string())?;
        for i in 0..t {
            let h = 1e-3;
            let mut up = pred.clone();
            up[i] += h;
            let mut down = pred.clone();
            down[i] -= h;
            let numeric = (l1_oracle(&up, &target, &mask, n) - l1_oracle(&down, &target, &mask, n)) / (2.0 * h);
            worst_loss = worst_loss.max(rel_err(g[i], numeric, 1e-3));
        }
    }
    if worst_loss >= 1e-5 {
        return Err(format!("loss gradient relative error {worst_loss:.2e} >= 1e-5"));
    }
    let mut worst_net = 0.0f64;
    for seed in 0..seeds {
        let e = backbone_grad_check(seed, 1e-3);
        if e >= 1e-3 {
            return Err(format!("backbone seed {seed}: relative error {e:.2e} >= 1e-3"));
        }
        worst_net = worst_net.max(e);
    }
    Ok(format!(
        "{seeds} seeds; max rel err losses {worst_loss:.1e}, backbone {worst_net:.1e}"
    ))
}

/// Ground-truth tensors of random layouts decode back to exactly the
/// keywords of the layout.
pub fn round_trip(layouts: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut words_seen = 0;
    for i in 0..layouts {
        let c = rng.random_range(1..=5);
        let cfg = PipelineConfig::from_pairs([("num_keywords", c.to_string())]).map_err(|e| e.to_string())?;
        let words = random_layout(&mut rng, &cfg, cfg.max_detections);
        let y = encode_targets::<f64>(&words, &cfg).map_err(|e| format!("layout {i}: {e}"))?;
        let preds = PredictionTensors {
            heat: y.heat.clone(),
            length: y.length.clone(),
            offset: y.offset.clone(),
        };
        let mut got: Vec<(usize, f64, f64)> = score_threshold_filter(&decode(&preds, &cfg), 0.99)
            .into_iter()
            .map(|d| (d.cls, d.center, d.length))
            .collect();
        let mut want: Vec<(usize, f64, f64)> = words
            .iter()
            .filter(|w| w.cls < c)
            .map(|w| (w.cls, w.loc_pc, w.len))
            .collect();
        if got.iter().any(|d| d.0 >= c) {
            return Err(format!("layout {i}: unknown-class detection emitted"));
        }
        got.sort_by(|a, b| a.1.total_cmp(&b.1));
        want.sort_by(|a, b| a.1.total_cmp(&b.1));
        if got != want {
            return Err(format!("layout {i}: decoded {got:?}, expected {want:?}"));
        }
        words_seen += words.len();
    }
    Ok(format!("{layouts} layouts, {words_seen} words, exact class/center/length"))
}

/// AP, mAP and FRR@FA against the brute-force oracles.
pub fn metric_oracles(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let thresholds = iou_thresholds();
    let hours = 0.01;
    for i in 0..instances {
        let classes = rng.random_range(1..=3);
        let (dets, gts) = random_instance(&mut rng, classes, 20, 10, false);
        for c in 0..classes {
            let d: Vec<_> = dets.iter().filter(|d| d.cls == c).cloned().collect();
            let g: Vec<_> = gts.iter().filter(|g| g.cls == c).cloned().collect();
            for &thr in &[0.05, 0.3, 0.5, 0.75] {
                let (a, b) = (average_precision(&d, &g, thr), oracle_ap(&d, &g, thr));
                if (a - b).abs() > 1e-12 {
                    return Err(format!("instance {i} class {c} iou {thr}: AP {a} vs oracle {b}"));
                }
            }
        }
        let m = mean_ap(&dets, &gts, classes, &thresholds).map;
        let o = oracle_map(&dets, &gts, classes, &thresholds);
        if (m - o).abs() > 1e-12 {
            return Err(format!("instance {i}: mAP {m} vs oracle {o}"));
        }
        // FRR on both continuous and tied scores
        for tied in [false, true] {
            let (dets, gts) = if tied {
                random_instance(&mut rng, classes, 20, 10, true)
            } else {
                (dets.clone(), gts.clone())
            };
            let budgets = [0.0, 100.0, 250.0, 500.0, 2500.0];
            let got = frr_at_fa(&dets, &gts, hours, &budgets, 0.5).map_err(|e| e.to_string())?;
            for (p, &b) in got.iter().zip(&budgets) {
                let o = oracle_frr(&dets, &gts, hours, b, 0.5);
                if (p.frr - o).abs() > 1e-12 {
                    return Err(format!("instance {i} (tied {tied}) FA {b}: FRR {} vs oracle {o}", p.frr));
                }
            }
        }
    }
    Ok(format!("{instances} instances; AP, mAP, FRR@FA exact to 1e-12"))
}

/// Focal loss against cell-by-cell summation and the weighted total.
pub fn loss_values(instances: u64) -> Check {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (pred, target, n) = random_heat_pair(&mut rng, 8, 3, 1e-4);
        let (v, _) = focal_heatmap_loss(&pred, &target, n, 2.0, 4.0).map_err(|e| e.to_string())?;
        let o = focal_oracle(pred.as_slice(), target.as_slice(), n, 2.0, 4.0);
        if (v - o).abs() > 1e-12 {
            return Err(format!("seed {seed}: focal {v} vs direct sum {o}"));
        }
        let cfg = PipelineConfig::default();
        let (h, l, off) = (rng.random_range(0.0..5.0), rng.random_range(0.0..50.0), rng.random_range(0.0..1.0));
        let b = total_loss(h, l, off, n, &cfg);
        if cfg.lambda_len != 0.1 || cfg.lambda_offset != 1.0 {
            return Err("default loss weights are not 0.1 / 1".into());
        }
        if b.total != h + 0.1 * l + 1.0 * off {
            return Err(format!("seed {seed}: total {} != {h} + 0.1*{l} + {off}", b.total));
        }
    }
    Ok(format!("{instances} random 8x3 tensors exact to 1e-12; weights 0.1 / 1"))
}

/// Window plans cover every short interval at 10 ms resolution, and
/// constraint-violating parameters are rejected.
pub fn window_coverage(triples: usize) -> Check {
    // Durations are drawn in whole centiseconds so the constraint
    // boundaries are decided exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let duration = 5.11;
    let cs = |x: i64| x as f64 / 100.0;
    let mut checked = 0;
    while checked < triples {
        let l_in = rng.random_range(20..=200i64);
        let max_x = rng.random_range(1..l_in);
        if l_in - max_x < 2 {
            continue;
        }
        let l_step = rng.random_range(1..l_in - max_x);
        let (l_in, l_step, max_x) = (cs(l_in), cs(l_step), cs(max_x));
        let plan = plan_windows(duration, l_in, l_step, max_x)
            .map_err(|e| format!("valid triple ({l_in}, {l_step}, {max_x}) rejected: {e}"))?;
        if !windows_cover(&plan.windows, duration, max_x) {
            return Err(format!("({l_in}, {l_step}, {max_x}) leaves an interval uncovered"));
        }
        checked += 1;
    }
    let mut rejected = 0;
    while rejected < triples {
        let l_in = rng.random_range(20..=200i64);
        let (max_x, l_step) = if rng.random_bool(0.5) {
            // MAX_x at least the window length
            (rng.random_range(l_in..=l_in + 100), rng.random_range(1..=100i64))
        } else {
            let max_x = rng.random_range(1..l_in);
            (max_x, rng.random_range(l_in - max_x..=l_in + 50))
        };
        let (l_in, l_step, max_x) = (cs(l_in), cs(l_step), cs(max_x));
        if plan_windows(duration, l_in, l_step, max_x).is_ok() {
            return Err(format!("violating triple ({l_in}, {l_step}, {max_x}) accepted"));
        }
        rejected += 1;
    }
    Ok(format!("{triples} valid triples covered at 10 ms; {triples} violating triples rejected"))
}

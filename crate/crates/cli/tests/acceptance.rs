//! Acceptance run. The property checks run in-process; the toy experiment
//! drives the `kwsdet` binary through gen-data, train, detect, eval and
//! baseline. Prints one PASS/FAIL line per criterion and exits non-zero if
//! any fails.
//!
//! Artifacts are kept under `target/tmp/acceptance` for inspection.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::checks::{self, Check};
use kwsdet::features::{write_wav, AudioClip};
use kwsdet::metrics::EvalReport;

const CORPUS_SEED: &str = "7";
const TRAIN_SEEDS: [u64; 3] = [0, 1, 2];
const MIN_AP50: f64 = 0.80;
const MAX_FRR25: f64 = 0.25;
const MAX_TRAIN_S: f64 = 600.0;

fn kwsdet(args: &[&str]) -> Result<f64, String> {
    let timer = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_kwsdet"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run kwsdet: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`kwsdet {}` failed ({}): {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(timer.elapsed().as_secs_f64())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_report(path: &Path) -> Result<EvalReport, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Clone, Copy, PartialEq)]
enum Variant {
    Full,
    NoUnknown,
    ClsHead,
}

impl Variant {
    fn flag(self) -> &'static str {
        match self {
            Self::Full => "none",
            Self::NoUnknown => "no-unknown",
            Self::ClsHead => "cls-head",
        }
    }
}

struct Run {
    dir: PathBuf,
    train_s: f64,
    report: EvalReport,
}

struct Toy {
    work: PathBuf,
    corpus: PathBuf,
    config: PathBuf,
}

impl Toy {
    fn gen_data(&self, out: &Path) -> Result<(), String> {
        kwsdet(&["gen-data", "--out", s(out), "--classes", "3", "--utterances", "400", "--seed", CORPUS_SEED])
            .map(|_| ())
    }

    /// Trains one variant and scores it on the test split.
    fn run(&self, corpus: &Path, variant: Variant, seed: u64, name: &str) -> Result<Run, String> {
        let dir = self.work.join(name);
        let seed = seed.to_string();
        let train_s = kwsdet(&[
            "train",
            "--corpus",
            s(corpus),
            "--out",
            s(&dir.join("train")),
            "--config",
            s(&self.config),
            "--seed",
            &seed,
            "--ablation",
            variant.flag(),
            "--quiet",
        ])?;
        let model = dir.join("train").join("model.ckpt");
        let report = if variant == Variant::ClsHead {
            let out = dir.join("baseline");
            kwsdet(&["baseline", "--model", s(&model), "--corpus", s(corpus), "--out", s(&out)])?;
            read_report(&out.join("report.json"))?
        } else {
            let det = dir.join("detect");
            let eval = dir.join("eval");
            kwsdet(&["detect", "--model", s(&model), "--corpus", s(corpus), "--split", "test", "--out", s(&det)])?;
            kwsdet(&[
                "eval",
                "--detections",
                s(&det.join("detections.jsonl")),
                "--corpus",
                s(corpus),
                "--split",
                "test",
                "--out",
                s(&eval),
            ])?;
            read_report(&eval.join("report.json"))?
        };
        Ok(Run { dir, train_s, report })
    }
}

fn end_to_end(run: &Run, silence_hits: usize) -> Check {
    let r = &run.report;
    let frr25 = r.frr_at(25.0).ok_or("report has no FRR@25")?;
    let summary = format!(
        "mAP@0.5 {:.3}, mAP {:.3}, FRR@25 {:.3}, train {:.0}s, {} detections on silence",
        r.ap50, r.map, frr25, run.train_s, silence_hits
    );
    if r.ap50 >= MIN_AP50 && frr25 <= MAX_FRR25 && run.train_s <= MAX_TRAIN_S {
        Ok(summary)
    } else {
        Err(format!("{summary} (need mAP@0.5 >= {MIN_AP50}, FRR@25 <= {MAX_FRR25}, train <= {MAX_TRAIN_S}s)"))
    }
}

fn silence_detections(work: &Path, model: &Path) -> Result<usize, String> {
    let wav = work.join("silence.wav");
    write_wav(&wav, &AudioClip::new(vec![0.0; 81_760], 16_000)).map_err(|e| e.to_string())?;
    let out = work.join("silence");
    kwsdet(&["detect", "--model", s(model), "--audio", s(&wav), "--out", s(&out)])?;
    let text = fs::read_to_string(out.join("detections.jsonl")).map_err(|e| e.to_string())?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
}

fn ablation_order(maps: &[[f64; 3]]) -> Check {
    let n = maps.len() as f64;
    let mean = |v: usize| maps.iter().map(|m| m[v]).sum::<f64>() / n;
    let (full, no_unk, cls) = (mean(0), mean(1), mean(2));
    let per_seed: Vec<String> = maps
        .iter()
        .map(|m| format!("{:.3}/{:.3}/{:.3}", m[0], m[1], m[2]))
        .collect();
    let summary = format!(
        "mean mAP full {full:.3} >= no-unknown {no_unk:.3} >= cls-head {cls:.3} (per seed {})",
        per_seed.join(", ")
    );
    if full >= no_unk && no_unk >= cls {
        Ok(summary)
    } else {
        Err(format!("ordering violated: {summary}"))
    }
}

/// Files under `dir` (recursively) with their bytes, skipping run manifests,
/// which record wall-clock times.
fn tree(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| format!("{}: {e}", d.display()))? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                let bytes = fs::read(&p).map_err(|e| e.to_string())?;
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn determinism(toy: &Toy, first: &Run) -> Check {
    let corpus2 = toy.work.join("data-again");
    toy.gen_data(&corpus2)?;
    if tree(&toy.corpus)? != tree(&corpus2)? {
        return Err("regenerated corpus differs".into());
    }
    let again = toy.run(&corpus2, Variant::Full, TRAIN_SEEDS[0], "full-0-again")?;
    let mut same = Vec::new();
    for file in ["train/model.ckpt", "detect/detections.jsonl", "eval/report.json", "eval/report.txt"] {
        if !same_bytes(&first.dir.join(file), &again.dir.join(file))? {
            return Err(format!("{file} differs between identical runs"));
        }
        same.push(file);
    }
    Ok(format!("corpus and {} byte-identical across reruns", same.join(", ")))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let mut report = |n: usize, name: &'static str, c: Check| {
        match &c {
            Ok(msg) => println!("criterion {n} PASS  {name}: {msg}"),
            Err(msg) => println!("criterion {n} FAIL  {name}: {msg}"),
        }
        results.push((n, name, c));
    };

    report(1, "gradient correctness", checks::gradients(20));
    report(2, "encode/decode round trip", checks::round_trip(1000));
    report(3, "metric oracle equivalence", checks::metric_oracles(500));
    report(4, "loss-value oracle", checks::loss_values(200));

    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).expect("create work directory");
    let toy = Toy {
        corpus: work.join("data"),
        config: Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.cfg"),
        work,
    };

    let runs: Result<Vec<[Run; 3]>, String> = toy.gen_data(&toy.corpus).and_then(|_| {
        TRAIN_SEEDS
            .iter()
            .map(|&seed| {
                Ok([
                    toy.run(&toy.corpus, Variant::Full, seed, &format!("full-{seed}"))?,
                    toy.run(&toy.corpus, Variant::NoUnknown, seed, &format!("no-unknown-{seed}"))?,
                    toy.run(&toy.corpus, Variant::ClsHead, seed, &format!("cls-head-{seed}"))?,
                ])
            })
            .collect()
    });

    match &runs {
        Ok(runs) => {
            let first = &runs[0][0];
            let toy_check = silence_detections(&toy.work, &first.dir.join("train/model.ckpt"))
                .and_then(|hits| end_to_end(first, hits));
            report(5, "toy end-to-end", toy_check);
            let maps: Vec<[f64; 3]> = runs
                .iter()
                .map(|r| [r[0].report.map, r[1].report.map, r[2].report.map])
                .collect();
            report(6, "ablation direction", ablation_order(&maps));
        }
        Err(e) => {
            report(5, "toy end-to-end", Err(e.clone()));
            report(6, "ablation direction", Err(e.clone()));
        }
    }

    report(7, "baseline window coverage", checks::window_coverage(100));

    let det = match &runs {
        Ok(runs) => determinism(&toy, &runs[0][0]),
        Err(e) => Err(format!("no first run to compare against: {e}")),
    };
    report(8, "determinism", det);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}

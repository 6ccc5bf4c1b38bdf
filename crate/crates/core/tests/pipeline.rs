//! End-to-end behaviour on a small generated corpus: training, resuming,
//! the no-unknown variant, generation and detection determinism, and
//! evaluation of known inputs.

use std::fs;
use std::path::Path;

use kwsdet::dataset::{generate_synthetic_corpus, Corpus, SynthSpec};
use kwsdet::decoder::DetectionRecord;
use kwsdet::model::DetectorParams;
use kwsdet::pipeline::{detect_audio, evaluate_split, load_model, LoadedModel};
use kwsdet::losses::detection_loss;
use kwsdet::trainer::{mix_seed, prepare_clip, train_detector, TrainOptions, LAST_FILE, LOG_FILE};
use kwsdet::PipelineConfig;

fn small_corpus(dir: &Path, seed: u64) -> Corpus {
    let spec = SynthSpec {
        utterances: 40,
        ..SynthSpec::default()
    };
    generate_synthetic_corpus(&spec, dir, seed).unwrap();
    Corpus::load(dir, &small_config(&[])).unwrap()
}

fn small_config(extra: &[(&str, &str)]) -> PipelineConfig {
    let mut pairs = vec![("num_keywords", "3"), ("n_ch", "8"), ("batch_size", "2"), ("epochs", "1")];
    pairs.extend_from_slice(extra);
    PipelineConfig::from_pairs(pairs.into_iter().map(|(k, v)| (k, v.to_string()))).unwrap()
}

fn options(out: &Path, limit: usize) -> TrainOptions {
    TrainOptions {
        seed: 3,
        out_dir: out.to_path_buf(),
        resume: None,
        limit_utterances: Some(limit),
        stop_after_epochs: None,
        quiet: true,
    }
}

/// Mean total loss of a checkpoint over the un-augmented clips of the first
/// `n` training utterances, cropped as the trainer crops them.
fn mean_clip_loss(ckpt: &Path, corpus: &Corpus, n: usize, seed: u64) -> f64 {
    let (model, cfg) = load_model(ckpt, &[]).unwrap();
    let LoadedModel::Detector(params) = model else {
        panic!("expected a detector checkpoint");
    };
    let utts = corpus.split("train").unwrap();
    let mut sum = 0.0;
    for (i, u) in utts.iter().take(n).enumerate() {
        let clip = prepare_clip(u, &cfg, mix_seed(seed, i as u64)).unwrap();
        let (pred, _) = params.forward(&clip.features).unwrap();
        let (lb, _) = detection_loss(&pred.heat, &pred.length, &pred.offset, &clip.targets, &cfg).unwrap();
        sum += lb.total;
    }
    sum / n as f64
}

#[test]
fn one_epoch_smoke_run_lowers_the_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("data"), 1);
    let cfg = small_config(&[("n_ch", "16")]);
    let init = train_detector(
        &corpus,
        &cfg,
        &TrainOptions {
            stop_after_epochs: Some(0),
            ..options(&tmp.path().join("init"), 10)
        },
    )
    .unwrap();
    let s = train_detector(&corpus, &cfg, &options(&tmp.path().join("run"), 10)).unwrap();
    assert_eq!(s.steps, 5);
    assert!(s.step_losses.iter().all(|l| l.is_finite()));
    let log = fs::read_to_string(tmp.path().join("run").join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 5);

    // Single steps see different clips, so the loss is compared on the
    // same clips before and after the epoch.
    let before = mean_clip_loss(&init.checkpoint, &corpus, 10, 3);
    let after = mean_clip_loss(&s.checkpoint, &corpus, 10, 3);
    assert!(after.is_finite() && after < before, "loss went from {before} to {after}");
}

#[test]
fn resumed_training_tracks_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("data"), 2);
    let cfg = small_config(&[("epochs", "4"), ("batch_size", "4")]);

    let straight = train_detector(&corpus, &cfg, &options(&tmp.path().join("a"), 12)).unwrap();

    let b = tmp.path().join("b");
    let first = train_detector(
        &corpus,
        &cfg,
        &TrainOptions {
            stop_after_epochs: Some(2),
            ..options(&b, 12)
        },
    )
    .unwrap();
    assert_eq!(first.epochs_completed, 2);
    let rest = train_detector(
        &corpus,
        &cfg,
        &TrainOptions {
            resume: Some(b.join(LAST_FILE)),
            ..options(&b, 12)
        },
    )
    .unwrap();
    assert_eq!(rest.epochs_completed, 4);
    assert_eq!(rest.steps, straight.steps);

    let resumed: Vec<f64> = first.epoch_losses.iter().chain(&rest.epoch_losses).copied().collect();
    for (e, (a, b)) in straight.epoch_losses.iter().zip(&resumed).enumerate() {
        assert!((a - b).abs() <= 0.05 * a.abs(), "epoch {e}: {a} vs {b}");
    }
}

#[test]
fn no_unknown_variant_drops_the_extra_channel() {
    let with = small_config(&[]);
    let without = small_config(&[("use_unknown_class", "false")]);
    assert_eq!(with.max_detections, 30);
    assert_eq!(without.max_detections, 3);
    let a = DetectorParams::<f32>::from_config(&with, 0).unwrap();
    let b = DetectorParams::<f32>::from_config(&without, 0).unwrap();
    assert_eq!(a.arch.heat_channels, 4);
    assert_eq!(b.arch.heat_channels, 3);
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generation_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        utterances: 12,
        ..SynthSpec::default()
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    generate_synthetic_corpus(&spec, &a, 5).unwrap();
    generate_synthetic_corpus(&spec, &b, 5).unwrap();
    generate_synthetic_corpus(&spec, &c, 6).unwrap();
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert_ne!(tree_bytes(&a), tree_bytes(&c));
}

#[test]
fn detection_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("data"), 4);
    let cfg = small_config(&[("epochs", "2")]);
    let s = train_detector(&corpus, &cfg, &options(&tmp.path().join("run"), 10)).unwrap();
    let (model, cfg) = load_model(&s.checkpoint, &[("detection_threshold".into(), "0".into())]).unwrap();
    let LoadedModel::Detector(params) = model else {
        panic!("expected a detector checkpoint");
    };
    let run = || -> Vec<DetectionRecord> {
        corpus
            .split("test")
            .unwrap()
            .iter()
            .flat_map(|u| {
                let audio = kwsdet::features::read_wav(&u.audio_path, cfg.sample_rate_hz).unwrap();
                detect_audio(&params, &cfg, &corpus.keywords, &u.id, &audio).unwrap()
            })
            .collect()
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

fn truth_records(corpus: &Corpus, split: &str, cfg: &PipelineConfig) -> Vec<DetectionRecord> {
    let fps = cfg.frames_per_second();
    corpus
        .split(split)
        .unwrap()
        .iter()
        .flat_map(|u| {
            u.words.iter().filter(|w| w.cls < corpus.keywords.len()).map(move |w| {
                let (start_s, end_s) = (w.start_s(fps).max(0.0), w.end_s(fps).min(u.duration_s));
                DetectionRecord {
                    utterance_id: u.id.clone(),
                    keyword: w.text.clone(),
                    score: 1.0,
                    start_s,
                    end_s,
                    center_s: 0.5 * (start_s + end_s),
                }
            })
        })
        .collect()
}

#[test]
fn evaluation_of_known_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&tmp.path().join("data"), 5);
    let cfg = small_config(&[]);

    let truth = truth_records(&corpus, "test", &cfg);
    assert!(!truth.is_empty());
    let perfect = evaluate_split(&truth, &corpus, "test", &cfg).unwrap();
    assert_eq!(perfect.map, 1.0);
    assert!(perfect.frr.iter().all(|p| p.frr == 0.0));

    let empty = evaluate_split(&[], &corpus, "test", &cfg).unwrap();
    assert_eq!(empty.map, 0.0);
    assert!(empty.frr.iter().all(|p| p.frr == 1.0));

    let mut stray = truth.clone();
    stray[0].utterance_id = "not-an-utterance".into();
    assert!(evaluate_split(&stray, &corpus, "test", &cfg).is_err());
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use denet::nn::Parameterized;
use denet::synth::{generate_synthetic, SynthConfig};
use denet::train::{run, Batch, TrainOptions, FINAL_CHECKPOINT, METRICS_HEADER};
use denet::{Checkpoint, TrainConfig, Trainer, TrainingSet};

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        n_train_normal: 6,
        n_train_abnormal: 6,
        n_test_normal: 2,
        n_test_abnormal: 2,
        segments: 16,
        dim: 8,
        max_duration: 6,
        ..SynthConfig::default()
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        segments: 16,
        scales: 2,
        heads: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        max_iterations: 5,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn tiny_data(dir: &Path) -> TrainingSet {
    let ds = generate_synthetic(&tiny_synth(), 1, dir).unwrap();
    TrainingSet::load(&ds.train, 16, 2).unwrap()
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthetic_generation_is_reproducible() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic(&tiny_synth(), 9, a.path()).unwrap();
    generate_synthetic(&tiny_synth(), 9, b.path()).unwrap();
    generate_synthetic(&tiny_synth(), 10, c.path()).unwrap();
    let (fa, fb, fc) = (files_under(a.path()), files_under(b.path()), files_under(c.path()));
    assert!(fa.len() > 4);
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn zero_iterations_returns_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let cfg = TrainConfig {
        max_iterations: 0,
        ..tiny_config()
    };
    let init = Trainer::new(cfg.clone(), data.dim()).unwrap().checkpoint();
    let mut t = Trainer::new(cfg, data.dim()).unwrap();
    let out = run(&mut t, &data, None, &TrainOptions::default()).unwrap();
    assert_eq!(out.to_bytes().unwrap(), init.to_bytes().unwrap());
}

#[test]
fn zero_loss_weights_leave_only_weight_decay() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let cfg = TrainConfig {
        alpha1: 0.0,
        alpha2: 0.0,
        weight_decay: 0.5,
        max_iterations: 3,
        ..tiny_config()
    };
    let before = Trainer::new(cfg.clone(), data.dim()).unwrap().model;
    let mut t = Trainer::new(cfg.clone(), data.dim()).unwrap();
    let after = run(&mut t, &data, None, &TrainOptions::default()).unwrap().model;
    let shrink = cfg.learning_rate * cfg.weight_decay;
    for (p, q) in before.param_list().iter().zip(after.param_list()) {
        for (&x, &y) in p.data.iter().zip(q.data.iter()) {
            let mut expect = x;
            if p.kind.decays() {
                for _ in 0..3 {
                    expect = (expect - shrink * expect) as f32 as f64;
                }
            }
            assert_eq!(y, expect, "{}", p.name);
        }
    }
}

#[test]
fn fixed_batch_loss_trends_down() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let cfg = TrainConfig {
        classifier_dropout: 0.0,
        encoder_dropout: 0.0,
        ..tiny_config()
    };
    let mut t = Trainer::new(cfg, data.dim()).unwrap();
    let abnormal: Vec<usize> = (0..data.videos.len()).filter(|&i| data.videos[i].is_abnormal()).take(2).collect();
    let normal: Vec<usize> = (0..data.videos.len()).filter(|&i| !data.videos[i].is_abnormal()).take(2).collect();
    let losses: Vec<f64> = (0..200)
        .map(|_| {
            let batch = Batch {
                abnormal: abnormal.clone(),
                normal: normal.clone(),
            };
            t.step_on(&data, batch).unwrap().report.total
        })
        .collect();
    let means: Vec<f64> = losses.chunks(20).map(|c| c.iter().sum::<f64>() / 20.0).collect();
    assert!(means.last().unwrap() < &(0.5 * means[0]), "block means {means:?}");
    let rises = means.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 2, "block means {means:?}");
}

#[test]
fn resumed_run_appends_metrics_and_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let out = dir.path().join("run");
    let opts = TrainOptions {
        output_dir: Some(out.clone()),
        audit_erase: true,
    };
    let mut first = Trainer::new(TrainConfig { max_iterations: 2, ..tiny_config() }, data.dim()).unwrap();
    run(&mut first, &data, None, &opts).unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&out.join(FINAL_CHECKPOINT)).unwrap()).unwrap();
    resumed.config.max_iterations = 5;
    let resumed = run(&mut resumed, &data, None, &opts).unwrap();

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    let iterations: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["1", "2", "3", "4", "5"]);
    let audit = fs::read_to_string(out.join("erase_audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 5 * 2);

    let mut straight = Trainer::new(tiny_config(), data.dim()).unwrap();
    let straight = run(&mut straight, &data, None, &TrainOptions::default()).unwrap();
    assert_eq!(resumed.to_bytes().unwrap(), straight.to_bytes().unwrap());
}

#[test]
fn checkpoint_schedule_writes_intermediate_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let out = dir.path().join("run");
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..tiny_config()
    };
    let mut t = Trainer::new(cfg, data.dim()).unwrap();
    run(&mut t, &data, None, &TrainOptions { output_dir: Some(out.clone()), audit_erase: false }).unwrap();
    let mut names: Vec<String> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["ckpt_000002.dnck", "ckpt_000004.dnck"]);
    let mid = Checkpoint::load(&out.join("checkpoints/ckpt_000004.dnck")).unwrap();
    assert_eq!(mid.iteration, 4);
}

#[test]
fn mismatched_data_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(dir.path());
    let mut t = Trainer::new(tiny_config(), data.dim() + 2).unwrap();
    let err = t.step(&data).unwrap_err();
    assert!(matches!(err, denet::Error::Shape(_)), "{err}");
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lace_core::corpus::{load_corpus, read_examples, write_examples, Entity, ProcessExample};
use lace_core::TopicGroup;

fn lace(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lace"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates a small corpus and trains a quick model in `dir`.
fn trained(dir: &Path) -> PathBuf {
    let gen = lace(
        &[
            "gen",
            "--out-dir",
            "data",
            "--seed",
            "4",
            "--train-topics",
            "4",
            "--dev-topics",
            "2",
            "--test-topics",
            "2",
        ],
        dir,
    );
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));
    let train = lace(
        &[
            "train",
            "--train",
            "data/train.jsonl",
            "--dev",
            "data/dev.jsonl",
            "--checkpoint",
            "model.json",
            "--epochs",
            "5",
            "--hidden",
            "4",
            "--emb-dim",
            "4",
        ],
        dir,
    );
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    dir.join("model.json")
}

fn topics(path: &Path) -> BTreeSet<String> {
    load_corpus(path)
        .unwrap()
        .into_iter()
        .map(|g| g.topic)
        .collect()
}

#[test]
fn gen_writes_disjoint_deterministic_splits() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = lace(
            &["gen", "--out-dir", out, "--seed", "9", "--noise", "0.2"],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let split = |d: &str, s: &str| dir.path().join(d).join(format!("{s}.jsonl"));
    for s in ["train", "dev", "test"] {
        assert_eq!(
            std::fs::read(split("a", s)).unwrap(),
            std::fs::read(split("b", s)).unwrap()
        );
    }
    let (tr, dv, te) = (
        topics(&split("a", "train")),
        topics(&split("a", "dev")),
        topics(&split("a", "test")),
    );
    assert_eq!((tr.len(), dv.len(), te.len()), (18, 6, 6));
    assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
}

#[test]
fn gen_noise_reaches_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    for (out, noise) in [("clean", "0"), ("noisy", "1")] {
        let o = lace(&["gen", "--out-dir", out, "--noise", noise], dir.path());
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(dir.path().join("clean/train.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("noisy/train.jsonl")).unwrap();
    assert_ne!(a, b);
    let bad = lace(&["gen", "--out-dir", "x", "--noise", "1.5"], dir.path());
    assert_eq!(code(&bad), 1);
}

#[test]
fn predictions_load_back_and_ignore_topics() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = lace(
        &[
            "predict",
            "--checkpoint",
            "model.json",
            "--corpus",
            "data/test.jsonl",
            "--out",
            "pred.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let preds = read_examples(&dir.path().join("pred.jsonl")).unwrap();
    let inputs = read_examples(&dir.path().join("data/test.jsonl")).unwrap();
    assert_eq!(preds.len(), inputs.len());
    assert!(preds.iter().all(ProcessExample::is_labeled));

    // scrambled topics must not change any prediction
    let scrambled: Vec<ProcessExample> = inputs
        .iter()
        .enumerate()
        .map(|(i, ex)| ProcessExample {
            topic: format!("shuffled-{}", (i * 7) % 5),
            ..ex.clone()
        })
        .collect();
    write_examples(&dir.path().join("scrambled.jsonl"), &scrambled).unwrap();
    let o = lace(
        &[
            "predict",
            "--checkpoint",
            "model.json",
            "--corpus",
            "scrambled.jsonl",
            "--out",
            "pred2.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let again = read_examples(&dir.path().join("pred2.jsonl")).unwrap();
    for (a, b) in preds.iter().zip(&again) {
        assert_eq!(a.gold, b.gold);
    }

    let line = std::fs::read_to_string(dir.path().join("pred.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert!(first["summary_sets"].is_array());
}

#[test]
fn single_ungrouped_paragraph_with_absent_entity() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let mut ex = read_examples(&dir.path().join("data/test.jsonl"))
        .unwrap()
        .remove(0);
    ex.topic = String::new();
    ex.gold = None;
    ex.entities.push(Entity {
        name: "unmentioned thing".into(),
        mentions: vec![],
    });
    write_examples(&dir.path().join("one.jsonl"), [&ex]).unwrap();
    let o = lace(
        &[
            "predict",
            "--checkpoint",
            "model.json",
            "--corpus",
            "one.jsonl",
            "--out",
            "one.pred.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pred = read_examples(&dir.path().join("one.pred.jsonl"))
        .unwrap()
        .remove(0);
    let grid = pred.gold.unwrap();
    assert_eq!(
        (grid.rows(), grid.cols()),
        (ex.num_steps(), ex.num_entities())
    );
}

#[test]
fn eval_prints_metrics_json() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = lace(
        &[
            "eval",
            "--checkpoint",
            "model.json",
            "--corpus",
            "data/dev.jsonl",
            "--report",
            "m.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(printed, written);
    for key in [
        "precision",
        "recall",
        "f1",
        "consistency_score",
        "per_topic",
    ] {
        assert!(printed.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained(dir.path());
    let d = dir.path();

    assert_eq!(code(&lace(&["--help"], d)), 0);
    assert_eq!(code(&lace(&["train", "--no-such-flag"], d)), 1);
    assert_eq!(
        code(&lace(
            &[
                "train",
                "--train",
                "missing.jsonl",
                "--checkpoint",
                "m.json"
            ],
            d
        )),
        1
    );
    assert_eq!(
        code(&lace(
            &[
                "train",
                "--train",
                "data/train.jsonl",
                "--checkpoint",
                "m.json",
                "--lambda",
                "2"
            ],
            d
        )),
        1
    );
    assert_eq!(
        code(&lace(
            &[
                "train",
                "--train",
                "data/train.jsonl",
                "--checkpoint",
                "m.json",
                "--label-fraction",
                "0"
            ],
            d
        )),
        1
    );

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = lace(
        &[
            "eval",
            "--checkpoint",
            "model.json",
            "--corpus",
            "empty.jsonl",
        ],
        d,
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    std::fs::write(d.join("broken.jsonl"), "{not json}\n").unwrap();
    assert_eq!(
        code(&lace(
            &[
                "eval",
                "--checkpoint",
                "model.json",
                "--corpus",
                "broken.jsonl"
            ],
            d
        )),
        2
    );

    // checkpoint whose tensors do not fit its declared dimensions
    let mut ckpt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    ckpt["dims"]["hidden_size"] = serde_json::json!(6);
    std::fs::write(d.join("bad_model.json"), ckpt.to_string()).unwrap();
    assert_eq!(
        code(&lace(
            &[
                "eval",
                "--checkpoint",
                "bad_model.json",
                "--corpus",
                "data/dev.jsonl"
            ],
            d
        )),
        2
    );

    let o = lace(
        &[
            "train",
            "--train",
            "data/train.jsonl",
            "--checkpoint",
            "m.json",
            "--lr",
            "1e300",
            "--epochs",
            "3",
            "--hidden",
            "4",
            "--emb-dim",
            "4",
        ],
        d,
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    std::fs::write(
        d.join("run.toml"),
        "train = \"data/train.jsonl\"\ncheckpoint = \"cfg_model.json\"\nreport = \"cfg_report.json\"\n\
         epochs = 2\nhidden_size = 4\nembedding_dim = 4\nlambda = 0.3\nlabel_fraction = 0.5\n",
    )
    .unwrap();
    let o = lace(
        &[
            "train",
            "--config",
            "run.toml",
            "--lambda",
            "0.7",
            "--no-consistency",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("cfg_report.json")).unwrap()).unwrap();
    let cfg = &report["config"];
    assert_eq!(cfg["lambda"], 0.7);
    assert_eq!(cfg["epochs"], 2);
    assert_eq!(cfg["consistency_enabled"], false);
    assert_eq!(cfg["sup_threshold"], 0.2);
    assert_eq!(cfg["learning_rate"], 0.1);
    assert!(report["labels"]["dropped"].as_u64().unwrap() > 0);

    std::fs::write(d.join("typo.toml"), "lamda = 0.3\n").unwrap();
    assert_eq!(code(&lace(&["train", "--config", "typo.toml"], d)), 1);
}

#[test]
fn pretrained_embeddings_are_frozen_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let groups: Vec<TopicGroup> = load_corpus(&d.join("data/train.jsonl")).unwrap();
    let vocab =
        lace_core::corpus::Vocabulary::from_examples(groups.iter().flat_map(TopicGroup::members));
    let text: String = vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{t} {} {} {}\n", i as f64 * 0.01, -0.5, 0.25))
        .collect();
    std::fs::write(d.join("vectors.txt"), text).unwrap();
    let o = lace(
        &[
            "train",
            "--train",
            "data/train.jsonl",
            "--checkpoint",
            "e.json",
            "--report",
            "e_report.json",
            "--embeddings",
            "vectors.txt",
            "--epochs",
            "2",
            "--hidden",
            "4",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let params = lace_core::model::load_checkpoint(&d.join("e.json")).unwrap();
    assert!(!params.embedding_trainable);
    assert_eq!(params.dims.embedding_dim, 3);
    let row = &params.embedding.values()[3..6];
    assert_eq!(row, &[0.01, -0.5, 0.25]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("e_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["embedding_dim"], 3);
}

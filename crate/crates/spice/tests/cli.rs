use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spice"))
        .args(args)
        .env_remove("SPICE_THREADS")
        .output()
        .expect("spawn spice")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const MANIFEST: &str = "utterance_id,audio_path,speaker_id,label,etiology,percent\n\
    a1,a1.wav,sa,TYPICAL,control,98\n\
    a2,a2.wav,sa,TYPICAL,control,98\n\
    b1,b1.wav,sb,MILD,als,85\n\
    c1,c1.wav,sc,MODERATE,als,55\n\
    d1,d1.wav,sd,SEVERE,pd,45\n\
    e1,e1.wav,se,PROFOUND,pd,10\n";

fn one_hot_predictions(labels: &[(&str, &str, usize)]) -> String {
    let mut s = String::from("utterance_id,speaker_id,p0,p1,p2,p3,p4\n");
    for (u, spk, k) in labels {
        let probs: Vec<&str> = (0..5).map(|c| if c == *k { "1" } else { "0" }).collect();
        s.push_str(&format!("{u},{spk},{}\n", probs.join(",")));
    }
    s
}

const TRUTH: [(&str, &str, usize); 6] =
    [("a1", "sa", 0), ("a2", "sa", 0), ("b1", "sb", 1), ("c1", "sc", 2), ("d1", "sd", 3), ("e1", "se", 4)];

#[test]
fn usage_errors_exit_one() {
    assert_eq!(spice(&[]).status.code(), Some(1));
    assert_eq!(spice(&["--version"]).status.code(), Some(0));
    let out = spice(&["evaluate", "--manifest", "m.csv", "--task", "3", "--predictions", "p.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--task"));
    let out = Command::new(env!("CARGO_BIN_EXE_spice"))
        .args(["report", "--input", "x.json"])
        .env("SPICE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("SPICE_THREADS"));
}

#[test]
fn data_errors_exit_two_and_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "utterance_id,audio_path,speaker_id,label\nu1,a.wav,s1,MILD\nu2,b.wav,s2,SOMEWHAT\n").unwrap();
    let out = spice(&["split", "--manifest", p(&m), "--out", p(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("row 3") && err.contains("SOMEWHAT"), "{err}");
}

#[test]
fn perfect_predictions_score_one_and_inputs_are_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let preds = dir.path().join("p.csv");
    let report = dir.path().join("r.json");
    fs::write(&m, MANIFEST).unwrap();
    fs::write(&preds, one_hot_predictions(&TRUTH)).unwrap();
    let out = spice(&[
        "evaluate", "--manifest", p(&m), "--predictions", p(&preds), "--ref-percent-column", "percent",
        "--out", p(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["accuracy"], 1.0);
    assert_eq!(r["macro_f1"], 1.0);
    assert_eq!(r["mean_ovr_auc"], 1.0);
    assert_eq!(r["speakers"].as_array().unwrap().len(), 5);
    assert!(r["intelligibility"]["pearson"].as_f64().unwrap() > 0.9);
    assert_eq!(serde_json::from_slice::<Value>(&fs::read(&report).unwrap()).unwrap(), r);
    assert_eq!(fs::read_to_string(&m).unwrap(), MANIFEST);
    assert_eq!(fs::read_to_string(&preds).unwrap(), one_hot_predictions(&TRUTH));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);

    let table = spice(&["report", "--input", p(&report)]);
    assert_eq!(table.status.code(), Some(0));
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("accuracy 1.0000") && text.contains("sa"));
}

#[test]
fn binary_task_from_five_class_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let preds = dir.path().join("p.csv");
    fs::write(&m, MANIFEST).unwrap();
    let mut s = String::from("utterance_id,speaker_id,p0,p1\n");
    for (u, spk, k) in TRUTH {
        s.push_str(&format!("{u},{spk},{}\n", if k == 0 { "0.9,0.1" } else { "0.2,0.8" }));
    }
    fs::write(&preds, s).unwrap();
    let out = spice(&["evaluate", "--manifest", p(&m), "--predictions", p(&preds)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["task"], "2-class");
    assert_eq!(r["accuracy"], 1.0);
    assert!(r["intelligibility"].is_null());
    let out = spice(&["evaluate", "--manifest", p(&m), "--predictions", p(&preds), "--task", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_prediction_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let preds = dir.path().join("p.csv");
    fs::write(&m, MANIFEST).unwrap();
    fs::write(&preds, one_hot_predictions(&TRUTH[..5])).unwrap();
    let out = spice(&["evaluate", "--manifest", p(&m), "--predictions", p(&preds)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("\"e1\""), "{}", stderr(&out));
}

#[test]
fn head_pipeline_predicts_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    assert!(spice(&["synth", "--out", p(&corpus), "--speakers-per-class", "3", "--utts", "2", "--seed", "5"])
        .status
        .success());
    let split = d.join("split.csv");
    assert!(spice(&["split", "--manifest", p(&corpus.join("manifest.csv")), "--out", p(&split), "--seed", "5"])
        .status
        .success());

    // Embeddings that encode the label, written with the core encoder.
    let text = fs::read_to_string(&split).unwrap();
    let records: Vec<spice_core::embed::EmbeddingRecord> = text
        .lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            let level = ["TYPICAL", "MILD", "MODERATE", "SEVERE", "PROFOUND"].iter().position(|l| *l == cols[3]).unwrap();
            let jitter = (i % 7) as f32 * 0.01;
            spice_core::embed::EmbeddingRecord::new(cols[0], vec![level as f32 + jitter, 1.0 - jitter, jitter * jitter])
        })
        .collect();
    let spce = d.join("e.spce");
    fs::write(&spce, spice_core::embed::encode_embeddings(&records, 3).unwrap()).unwrap();

    let model = d.join("lda.spck");
    let out = spice(&[
        "embed-train", "--manifest", p(&split), "--embeddings", p(&spce), "--task", "5", "--head", "lda", "--out",
        p(&model),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary[0]["head"], "lda");

    let out = spice(&["predict", "--manifest", p(&split), "--model", p(&model), "--out", p(&d.join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1), "head model without embeddings");

    let preds = d.join("preds.csv");
    let out = spice(&[
        "predict", "--manifest", p(&split), "--model", p(&model), "--embeddings", p(&spce), "--split", "test",
        "--out", p(&preds),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(fs::read_to_string(&preds).unwrap().starts_with("utterance_id,speaker_id,p0,p1,p2,p3,p4\n"));

    let via_csv = spice(&["evaluate", "--manifest", p(&split), "--predictions", p(&preds), "--split", "test"]);
    let direct = spice(&[
        "evaluate", "--manifest", p(&split), "--model", p(&model), "--embeddings", p(&spce), "--split", "test",
    ]);
    assert_eq!(via_csv.status.code(), Some(0), "{}", stderr(&via_csv));
    let a: Value = serde_json::from_slice(&via_csv.stdout).unwrap();
    let b: Value = serde_json::from_slice(&direct.stdout).unwrap();
    assert_eq!(a["accuracy"], b["accuracy"]);
    assert_eq!(a["accuracy"], 1.0);
    assert_eq!(a["n_utterances"], 10);
}

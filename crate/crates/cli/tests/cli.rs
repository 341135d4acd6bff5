use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use apood::corpus::{load_corpus, write_corpus, Corpus, EmbeddingSequence, Label};
use apood::model::{load_model, ScoreKind};
use apood::metrics::{read_scores, EvalReport};
use serde_json::Value;
use tempfile::TempDir;

fn apood(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apood"))
        .args(args)
        .env("APOOD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).expect("error is JSON")
}

fn corpus(dim: usize, n: usize, shift: f32, seed: u32) -> Corpus {
    let seqs = (0..n)
        .map(|i| {
            let len = 2 + (i % 4);
            let values = (0..len * dim)
                .map(|k| {
                    let h = (k as u32).wrapping_mul(2654435761).wrapping_add(seed.wrapping_mul(97)).wrapping_add((i as u32).wrapping_mul(40503));
                    let x = (h % 1000) as f32;
                    x / 500.0 - 1.0 + shift
                })
                .collect();
            EmbeddingSequence::new(dim, values).unwrap()
        })
        .collect();
    Corpus::from_sequences(dim, seqs, Label::Id).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn corpus(&self, name: &str, c: &Corpus) -> PathBuf {
        let path = self.path(name);
        write_corpus(c, &path).unwrap();
        path
    }

    fn text(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn trained(&self) -> (PathBuf, PathBuf) {
        let id = self.corpus("id.embsq", &corpus(3, 40, 0.0, 1));
        let model = self.path("model.json");
        let out = apood(&[
            "train", "--id", p(&id), "--out", p(&model), "--steps", "20", "--heads", "2", "--queries", "2",
            "--batch-size", "8",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (id, model)
    }
}

#[test]
fn missing_id_is_io_error() {
    let f = Fixture::new();
    let out = apood(&["train", "--id", p(&f.path("nope.embsq")), "--out", p(&f.path("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "io");
}

#[test]
fn train_prints_loss_and_time() {
    let f = Fixture::new();
    let id = f.corpus("id.embsq", &corpus(3, 20, 0.0, 1));
    let model = f.path("m.json");
    let out = apood(&["train", "--id", p(&id), "--out", p(&model), "--steps", "5"]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["final_loss"].as_f64().unwrap().is_finite());
    assert!(summary["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(load_model(&model).unwrap().is_frozen());
}

#[test]
fn inert_aux_warns() {
    let f = Fixture::new();
    let id = f.corpus("id.embsq", &corpus(3, 20, 0.0, 1));
    let aux = f.corpus("aux.embsq", &corpus(3, 20, 1.0, 2));
    let out = apood(&[
        "train", "--id", p(&id), "--aux", p(&aux), "--lambda", "0", "--out", p(&f.path("m.json")), "--steps", "3",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn config_file_and_flag_override() {
    let f = Fixture::new();
    let id = f.corpus("id.embsq", &corpus(3, 20, 0.0, 1));
    let model = f.path("m.json");
    let cfg = f.text(
        "run.json",
        &serde_json::json!({
            "id_corpus": id,
            "model_out": model,
            "hyperparams": {"heads": 3, "queries_per_head": 1, "steps": 4, "beta": 0.5}
        })
        .to_string(),
    );
    let out = apood(&["--config", p(&cfg), "train", "--heads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = load_model(&model).unwrap();
    assert_eq!(m.num_heads(), 2);
    assert_eq!(m.beta(), 0.5);

    let bad = f.text("bad.json", r#"{"hyperparams": {"bta": 1}}"#);
    let out = apood(&["--config", p(&bad), "train"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn score_matches_library_and_is_repeatable() {
    let f = Fixture::new();
    let (id, model) = f.trained();
    let a = f.path("a.csv");
    let b = f.path("b.csv");
    for (dst, kind) in [(&a, "sum"), (&b, "sum")] {
        let out = apood(&["score", "--model", p(&model), "--corpus", p(&id), "--out", p(dst), "--score", kind]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let lib = load_model(&model).unwrap().score_corpus(&load_corpus(&id).unwrap(), ScoreKind::Sum).unwrap();
    let rows = read_scores(&a).unwrap();
    assert_eq!(rows.len(), lib.len());
    for (r, s) in rows.iter().zip(&lib) {
        assert_eq!(r.score.to_bits(), s.to_bits());
        assert_eq!(r.label, Label::Id);
    }

    let out = apood(&["score", "--model", p(&model), "--corpus", p(&id), "--score", "min", "--label", "ood"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with(",OOD"));
}

#[test]
fn score_empty_corpus_is_header_only() {
    let f = Fixture::new();
    let (_, model) = f.trained();
    let empty = f.corpus("empty.embsq", &Corpus::new(3, Label::Id).unwrap());
    let out = apood(&["score", "--model", p(&model), "--corpus", p(&empty)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "sequence_index,score,label\n");
}

#[test]
fn score_dimension_mismatch_exits_3() {
    let f = Fixture::new();
    let (_, model) = f.trained();
    let wide = f.corpus("wide.embsq", &corpus(5, 4, 0.0, 3));
    let out = apood(&["score", "--model", p(&model), "--corpus", p(&wide)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "shape");
}

#[test]
fn corrupt_model_exits_4() {
    let f = Fixture::new();
    let id = f.corpus("id.embsq", &corpus(3, 4, 0.0, 1));
    let model = f.text("m.json", r#"{"format": "apood-model-v1", "dim": 3}"#);
    let out = apood(&["score", "--model", p(&model), "--corpus", p(&id)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_fixtures() {
    let f = Fixture::new();
    let id = f.text("id.csv", "sequence_index,score,label\n0,5,ID\n1,6,ID\n2,7,ID\n");
    let ood = f.text("ood.csv", "sequence_index,score,label\n0,1,OOD\n1,2,OOD\n");
    let out = apood(&["eval", "--id-scores", p(&id), "--ood-scores", p(&ood)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["auroc"], 1.0);
    assert_eq!(v["fpr95"], 0.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("AUROC 100.00"));

    let out = apood(&["eval", "--id-scores", p(&id), "--ood-scores", p(&id)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["auroc"], 0.5);

    let report = EvalReport::compute(&[5.0, 6.0, 7.0], &[1.0, 2.0]).unwrap();
    let written = f.path("eval.json");
    apood(&["eval", "--id-scores", p(&id), "--ood-scores", p(&ood), "--out", p(&written)]);
    assert_eq!(std::fs::read_to_string(&written).unwrap(), report.to_json());
}

#[test]
fn eval_malformed_csv_exits_4() {
    let f = Fixture::new();
    let good = f.text("id.csv", "sequence_index,score,label\n0,5,ID\n");
    let bad = f.text("bad.csv", "sequence_index,score,label\n0,five,ID\n");
    let out = apood(&["eval", "--id-scores", p(&good), "--ood-scores", p(&bad)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["kind"], "format");
}

#[test]
fn baseline_fit_and_score() {
    let f = Fixture::new();
    let id = f.corpus("id.embsq", &corpus(3, 30, 0.0, 1));
    let aux = f.corpus("aux.embsq", &corpus(3, 30, 1.5, 2));
    for method in ["maha", "knn", "svdd", "sad", "logit", "relmaha"] {
        let model = f.path(&format!("{method}.json"));
        let out = apood(&[
            "baseline", "fit", "--method", method, "--id", p(&id), "--aux", p(&aux), "--out", p(&model), "--steps",
            "20",
        ]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let out = apood(&["baseline", "score", "--model", p(&model), "--corpus", p(&aux)]);
        assert!(out.status.success(), "{method}");
        assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 31);
        // the generic score command detects the baseline format too
        assert!(apood(&["score", "--model", p(&model), "--corpus", p(&id)]).status.success());
    }
    let out = apood(&["baseline", "fit", "--method", "logit", "--id", p(&id), "--out", p(&f.path("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toy_plot_schema_and_budget() {
    let f = Fixture::new();
    let plot = f.path("plot.json");
    let report = f.path("report.json");
    let start = Instant::now();
    let out = apood(&["toy", "--plot", p(&plot), "--out", p(&report)]);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed < 30.0, "toy took {elapsed:.1} s");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&plot).unwrap()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["histograms", "landscape", "scatter", "w_final"]);
    assert_eq!(v["landscape"]["loss_grid"].as_array().unwrap().len(), 100);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["apood_auroc"].as_f64().unwrap() >= 0.99);
}

#[test]
fn selfcheck_passes_deterministically() {
    let a = apood(&["selfcheck"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = apood(&["selfcheck"]);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(apood(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(apood(&["--help"]).status.code(), Some(0));
    assert_eq!(apood(&["train", "--steps", "many"]).status.code(), Some(1));
}

#[test]
fn bad_thread_count_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_apood"))
        .args(["selfcheck"])
        .env("APOOD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

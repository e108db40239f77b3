use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::SystemTime;

use factorspan::stages::Extraction;
use factorspan::RunConfig;
use factorspan_model::load_checkpoint;
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/notes.jsonl")
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"run_id = "t"
[paths]
workspace = "ws"
fixtures = "{}"
[generate]
offline = true
[encoder]
hidden = 16
layers = 1
heads = 2
intermediate = 32
[train.token]
epochs = 1
batch_size = 32
[train.sentence]
epochs = 1
batch_size = 32
[train.span]
epochs = 2
batch_size = 32
{extra}
"#,
        fixtures().display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn cli(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factorspan"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn mtimes(dir: &Path) -> BTreeMap<PathBuf, SystemTime> {
    files(dir).into_iter().map(|p| {
        let t = std::fs::metadata(&p).unwrap().modified().unwrap();
        (p, t)
    }).collect()
}

/// The hash an artifact records, whatever its format.
fn recorded_hash(path: &Path) -> Option<String> {
    let name = path.file_name().unwrap().to_string_lossy();
    if name.ends_with(".safetensors") {
        return load_checkpoint(path).unwrap().meta.config_hash;
    }
    let text = std::fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap_or("");
    if let Some(h) = first.strip_prefix("# config_hash: ") {
        return Some(h.to_string());
    }
    let v: Value = if name.ends_with(".jsonl") { serde_json::from_str(first).ok()? } else { serde_json::from_str(&text).ok()? };
    v.get("config_hash").and_then(Value::as_str).map(str::to_string)
}

#[test]
fn offline_generation_writes_requested_count_behind_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = cli(&cfg, &["generate", "--offline", "--n", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let path = dir.path().join("ws/t/generate/standard.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    let header: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["format"], "factorspan.raw_notes.v1");
    assert_eq!(header["config_hash"].as_str().unwrap(), RunConfig::load(&cfg).unwrap().hash());
    for l in &lines[1..] {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["prompt_kind"], "standard");
    }

    let before = mtimes(dir.path());
    let again = cli(&cfg, &["generate", "--offline", "--n", "5"]);
    assert_eq!(code(&again), 0);
    assert!(stderr(&again).contains("up to date"), "{}", stderr(&again));
    assert_eq!(before, mtimes(dir.path()));

    let more = cli(&cfg, &["generate", "--offline", "--n", "7"]);
    assert_eq!(code(&more), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 8);
}

#[test]
fn missing_upstream_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    for args in [&["parse"][..], &["analyze"], &["build"], &["train", "--model", "span"], &["evaluate", "--model", "token"]] {
        let out = cli(&cfg, args);
        assert_eq!(code(&out), 3, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains("first"), "{}", stderr(&out));
    }
}

#[test]
fn configuration_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[eval]\nnot_a_field = 1\n");
    assert_eq!(code(&cli(&cfg, &["parse"])), 2);

    let invalid = dir.path().join("invalid.toml");
    for body in ["run_id = \"a/b\"\n", "[train.span]\nlr = -1.0\n", "[eval]\noverlap_threshold = 0.0\n"] {
        std::fs::write(&invalid, body).unwrap();
        let out = cli(&invalid, &["parse"]);
        assert_eq!(code(&out), 2, "{body}: {}", stderr(&out));
    }

    assert_eq!(code(&cli(&dir.path().join("absent.toml"), &["parse"])), 2);

    let live = dir.path().join("live.toml");
    std::fs::write(
        &live,
        "run_id = \"live\"\n[paths]\nworkspace = \"ws\"\n[generate]\napi_key_env = \"FACTORSPAN_TEST_UNSET_KEY\"\ncounts = { standard = 2 }\n",
    )
    .unwrap();
    let out = cli(&live, &["generate", "--prompt-kind", "standard"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("FACTORSPAN_TEST_UNSET_KEY"), "{}", stderr(&out));

    let bad_fixture = dir.path().join("nofix.toml");
    std::fs::write(&bad_fixture, "[paths]\nworkspace = \"ws\"\nfixtures = \"nowhere.jsonl\"\n").unwrap();
    assert_eq!(code(&cli(&bad_fixture, &["generate", "--offline"])), 2);
}

#[test]
fn full_run_stamps_every_artifact_and_reruns_as_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = cli(&cfg, &["run", "--offline"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("macro-F1")).count(), 3, "{stdout}");

    let hash = RunConfig::load(&cfg).unwrap().hash();
    let run = dir.path().join("ws/t");
    let all = files(&run);
    for stage in ["generate", "parse", "analyze", "build", "train", "evaluate"] {
        assert!(all.iter().any(|p| p.starts_with(run.join(stage))), "nothing under {stage}");
    }
    for p in &all {
        assert_eq!(recorded_hash(p).as_deref(), Some(hash.as_str()), "{}", p.display());
    }
    for kind in ["token", "sentence", "span"] {
        assert!(run.join(format!("train/{kind}/final.safetensors")).exists());
        assert!(!run.join(format!("train/{kind}/last.safetensors")).exists());
        let eval = run.join(format!("evaluate/{kind}/test_label_set_tau0"));
        for f in ["report.json", "report.txt", "confusion.csv", "confusion.txt", "baseline.json", "high_confidence.json", "predictions.jsonl"] {
            assert!(eval.join(f).exists(), "{kind}/{f}");
        }
    }
    let metrics = std::fs::read_to_string(run.join("train/span/metrics.jsonl")).unwrap();
    let summary: Value = serde_json::from_slice(&std::fs::read(run.join("train/span/summary.json")).unwrap()).unwrap();
    assert_eq!(metrics.lines().count(), 1 + summary["steps"].as_u64().unwrap() as usize);
    assert_eq!(summary["dev_history"].as_array().unwrap().len(), 2);

    let before = mtimes(dir.path());
    let again = cli(&cfg, &["run", "--offline"]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert_eq!(before, mtimes(dir.path()), "a second run rewrote artifacts");
    assert_eq!(String::from_utf8_lossy(&again.stdout), stdout);

    // A training change leaves the data stages alone.
    let build_before: Vec<_> = before.iter().filter(|(p, _)| p.starts_with(run.join("build"))).collect();
    let cfg2 = tiny_config(dir.path(), "").with_file_name("run2.toml");
    std::fs::write(&cfg2, std::fs::read_to_string(&cfg).unwrap().replacen("epochs = 2", "epochs = 1", 1)).unwrap();
    let out = cli(&cfg2, &["train", "--model", "span"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("train span: done"));
    let after = mtimes(dir.path());
    for (p, t) in build_before {
        assert_eq!(after[p], *t);
    }

    // Forced re-runs do the work again.
    let forced = cli(&cfg, &["--force", "parse"]);
    assert_eq!(code(&forced), 0);
    assert!(stderr(&forced).contains("parse: "), "{}", stderr(&forced));
}

#[test]
fn extract_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    for args in [&["generate", "--offline"][..], &["parse"], &["build"], &["train", "--model", "span"]] {
        let out = cli(&cfg, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "{\"id\": \"a\", \"text\": \"She denies any suicidal ideation.\"}\nHe has a long history of alcohol abuse.\n\n").unwrap();
    let output = dir.path().join("out/spans.jsonl");
    let out = cli(&cfg, &["extract", "--model", "span", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&output).unwrap();
    let rows: Vec<Extraction> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].id, "a");
    assert_eq!(rows[1].id, "2");
    assert_eq!(rows[1].text, "He has a long history of alcohol abuse.");
    for r in &rows {
        for s in &r.spans {
            let chars: String = r.text.chars().skip(s.start_char).take(s.end_char - s.start_char).collect();
            assert_eq!(chars, s.text);
            assert!((0.0..=1.0).contains(&s.confidence));
        }
    }

    let missing = cli(&cfg, &["extract", "--model", "span", "--input", "nope.txt"]);
    assert_eq!(code(&missing), 2);

    assert_eq!(code(&cli(&cfg, &["evaluate", "--model", "span", "--checkpoint", "latest"])), 2);
    assert_eq!(code(&cli(&cfg, &["evaluate", "--model", "span", "--tau", "1.5"])), 2);

    let run = dir.path().join("ws/t/train/span");
    std::fs::write(run.join("final.safetensors"), b"not a checkpoint").unwrap();
    let _ = std::fs::remove_file(run.join("best.safetensors"));
    let out = cli(&cfg, &["evaluate", "--model", "span", "--checkpoint", "final"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    use factorspan::Pipeline;
    use factorspan_core::genclient::PromptKind;
    use factorspan_model::ModelKind;

    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let whole = Pipeline::new(RunConfig::load(&cfg).unwrap());
    for kind in PromptKind::ALL {
        whole.generate(kind, None, true).unwrap();
    }
    whole.parse().unwrap();
    whole.build().unwrap();
    whole.train(ModelKind::Span).unwrap();
    let whole_metrics = std::fs::read_to_string(whole.metrics_path(ModelKind::Span)).unwrap();

    let mut cut_cfg = RunConfig::load(&cfg).unwrap();
    cut_cfg.paths.checkpoints = Some(dir.path().join("ck"));
    let cut = Pipeline::new(cut_cfg);
    cut.train_until(ModelKind::Span, Some(1)).unwrap();
    let ckdir = dir.path().join("ck/t/span");
    assert!(ckdir.join("last.safetensors").exists());
    assert!(!ckdir.join("final.safetensors").exists());
    cut.train(ModelKind::Span).unwrap();
    assert!(!ckdir.join("last.safetensors").exists());

    for name in ["final.safetensors", "best.safetensors"] {
        let a = load_checkpoint(&whole.checkpoint_dir_for(ModelKind::Span).join(name)).unwrap();
        let b = load_checkpoint(&ckdir.join(name)).unwrap();
        assert_eq!(a.meta.step, b.meta.step, "{name}");
        assert_eq!(a.meta.dev_history, b.meta.dev_history, "{name}");
        for p in 0..a.store.len() {
            let id = factorspan_model::autodiff::ParamId(p);
            assert_eq!(a.store.get(id), b.store.get(id), "{name}: {}", a.store.param(id).name);
        }
    }
    let a = whole_metrics;
    let b = std::fs::read_to_string(cut.metrics_path(ModelKind::Span)).unwrap();
    assert_eq!(a.lines().skip(1).collect::<Vec<_>>(), b.lines().skip(1).collect::<Vec<_>>());
    let summary: Value =
        serde_json::from_slice(&std::fs::read(cut.stage_dir("train").join("span/summary.json")).unwrap()).unwrap();
    assert!(summary["resumed_from_step"].as_u64().unwrap() > 0);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn avcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avcap"))
        .args(args)
        .env_remove("AVCAP_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic corpus plus a checkpoint trained for `steps` updates.
fn trained(dir: &Path, steps: &str, modality: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let synth = dir.join("synth");
    let o = avcap(&["make-synth", "--out", p(&synth), "--n", "2", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = synth.join("manifest.jsonl");
    let run = dir.join(format!("run{steps}{modality}"));
    let o = avcap(&[
        "train", "--manifest", p(&manifest), "--out", p(&run), "--steps", steps, "--modality", modality,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (manifest, run)
}

#[test]
fn zero_step_training_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path(), "0", "A+V");
    for f in ["model.avcp", "vocab.txt", "config.json", "loss.csv", "run.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("loss.csv")).unwrap().trim(), "step,lr,loss");
}

#[test]
fn audio_only_training_reports_no_video_frontend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("s");
    assert!(avcap(&["make-synth", "--out", p(&synth), "--n", "2"]).status.success());
    let o = avcap(&[
        "train", "--manifest", p(&synth.join("manifest.jsonl")), "--out", p(&dir.path().join("r")), "--steps", "1",
        "--modality", "A",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("video frontend calls 0"), "{}", stdout(&o));
}

#[test]
fn configuration_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = avcap(&["train", "--manifest", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"schema_version\": 99}").unwrap();
    let o = avcap(&["train", "--config", p(&bad), "--manifest", p(&missing)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_avcap"))
        .args(["gradcheck"])
        .env("AVCAP_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(avcap(&["train", "--modality", "AV"]).status.code(), Some(2));
}

#[test]
fn caption_outputs_are_deterministic_and_beam_one_is_greedy_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, run) = trained(dir.path(), "2", "A+V");
    let ckpt = run.join("model.avcp");
    let out1 = dir.path().join("c1.jsonl");
    let out2 = dir.path().join("c2.jsonl");
    for out in [&out1, &out2] {
        let o = avcap(&["caption", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(out), "--beam", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&out1).unwrap();
    assert_eq!(text, fs::read_to_string(&out2).unwrap());
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string() && v["caption"].is_string() && v["score"].is_number());
    }
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("none.jsonl");
    let o = avcap(&["caption", "--checkpoint", p(&ckpt), "--manifest", p(&empty), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn incompatible_checkpoint_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, run) = trained(dir.path(), "0", "A+V");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    cfg["decoder"]["max_positions"] = serde_json::json!(40);
    let other = dir.path().join("other.json");
    fs::write(&other, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = avcap(&[
        "caption", "--checkpoint", p(&run.join("model.avcp")), "--manifest", p(&manifest), "--config", p(&other),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("decoder.pos"), "{}", stderr(&o));
}

#[test]
fn eval_reports_metrics_and_rejects_id_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cands = dir.path().join("c.jsonl");
    let refs = dir.path().join("r.jsonl");
    fs::write(
        &cands,
        "{\"id\":\"1\",\"caption\":\"a dog barks at the mailman\"}\n{\"id\":\"2\",\"caption\":\"rain falls on a tin roof\"}\n",
    )
    .unwrap();
    fs::write(
        &refs,
        "{\"id\":\"1\",\"captions\":[\"a dog barks at the mailman\"]}\n{\"id\":\"2\",\"captions\":[\"rain falls on a tin roof\"]}\n",
    )
    .unwrap();
    let o = avcap(&["eval", "--candidates", p(&cands), "--references", p(&refs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for k in ["bleu1", "bleu2", "bleu3", "bleu4", "rougeL"] {
        assert_eq!(report[k].as_f64(), Some(1.0), "{k}");
    }
    assert!((report["cider"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    fs::write(&refs, "{\"id\":\"7\",\"captions\":[\"x\"]}\n{\"id\":\"8\",\"captions\":[\"y\"]}\n").unwrap();
    let o = avcap(&["eval", "--candidates", p(&cands), "--references", p(&refs)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for id in ["1", "2", "7", "8"] {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn gradcheck_command_passes() {
    let o = avcap(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("gradcheck PASSED"));
}

#[test]
fn make_synth_honours_the_seed_variable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let run = |out: &Path, seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_avcap"))
            .args(["make-synth", "--out", p(out), "--n", "1", "--seed", "1"])
            .env("AVCAP_SEED", seed)
            .output()
            .unwrap()
    };
    assert!(run(&a, "5").status.success());
    assert!(run(&b, "5").status.success());
    let wav = "audio/synth_0000.wav";
    assert_eq!(fs::read(a.join(wav)).unwrap(), fs::read(b.join(wav)).unwrap());
    let c = dir.path().join("c");
    assert!(avcap(&["make-synth", "--out", p(&c), "--n", "1", "--seed", "1"]).status.success());
    assert_ne!(fs::read(a.join(wav)).unwrap(), fs::read(c.join(wav)).unwrap());
}

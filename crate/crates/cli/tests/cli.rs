use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ced(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ced"))
        .args(args)
        .arg("--quiet")
        .env("CED_WORKDIR", dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ced(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const CONFIG: &str = r#"{
  "seed": 3,
  "synth": {
    "keywords": ["stop", "top", "go", "show", "banana", "window", "music", "camera"],
    "prototype_seed": 1,
    "frames_per_phoneme": [6, 10],
    "noise_stddev": 0.3,
    "utterances_per_keyword": 20,
    "seed": 2
  },
  "encoder": { "layers": 1, "dim": 32, "attention_heads": 4 },
  "train_ctc": { "epochs": 6, "peak_lr": 0.003, "warmup_steps": 50 },
  "fine_tune": { "epochs": 1 },
  "ced": { "epochs": 2, "lr": 0.001, "hidden": 16, "batch_keywords": 8 },
  "eval": { "per_anchor": 4 }
}"#;

fn hashes(paths: &[PathBuf]) -> Vec<Vec<u8>> {
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn confusables_print_nearby_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "confusables",
        "--keyword",
        "stop",
        "--delta",
        "1",
        "--count",
        "3",
        "--seed",
        "7",
    ];
    let out = ok(dir.path(), &args);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        let toks: Vec<&str> = line.split(' ').collect();
        let kw = ["S", "T", "AA1", "P"];
        assert_ne!(toks, kw);
        let d = ced_core::phonemes::levenshtein(&toks, &kw);
        assert!(d <= 1, "{line}");
    }
    assert_eq!(out, ok(dir.path(), &args));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ced(dir.path(), &["no-such-command"])), 1);
    assert_eq!(
        code(&ced(dir.path(), &["confusables", "--keyword", "stop"])),
        1
    );
    assert_eq!(
        code(&ced(
            dir.path(),
            &["confusables", "--keyword", "stop", "--delta", "4"]
        )),
        1
    );
    assert_eq!(
        code(&ced(
            dir.path(),
            &["verify", "--bundle", "missing", "--audio", "x.feat", "--text", "stop"]
        )),
        1
    );
    assert_eq!(
        code(&ced(
            dir.path(),
            &[
                "confusables",
                "--keyword",
                "stop",
                "--delta",
                "1",
                "--ops",
                "swap"
            ]
        )),
        1
    );
    assert_eq!(code(&ced(dir.path(), &["--help"])), 0);
}

#[test]
fn unknown_keyword_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ced(
        dir.path(),
        &["confusables", "--keyword", "qzxv", "--delta", "1"],
    );
    assert_eq!(code(&out), 2);
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.json"), CONFIG).unwrap();
    ok(
        dir,
        &["synth", "--config", "config.json", "--out", "corpus"],
    );
    for split in ["manifest", "train", "dev", "test"] {
        assert!(dir.join(format!("corpus/{split}.jsonl")).exists());
    }
    let inputs: Vec<PathBuf> = ["config.json", "corpus/train.jsonl", "corpus/test.jsonl"]
        .iter()
        .map(|p| dir.join(p))
        .collect();
    let before = hashes(&inputs);

    ok(
        dir,
        &[
            "train-encoder",
            "--config",
            "config.json",
            "--manifest",
            "corpus/train.jsonl",
            "--dev",
            "corpus/dev.jsonl",
            "--out",
            "run/encoder.ckpt",
        ],
    );
    assert!(dir.join("run/encoder.meta.json").exists());
    let log = std::fs::read_to_string(dir.join("run/encoder.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    ok(
        dir,
        &[
            "fine-tune",
            "--config",
            "config.json",
            "--encoder",
            "run/encoder.ckpt",
            "--manifest",
            "corpus/dev.jsonl",
            "--out",
            "run/tuned.ckpt",
        ],
    );

    let p2v = |out: &str| {
        ok(
            dir,
            &[
                "build-p2v",
                "--encoder",
                "run/encoder.ckpt",
                "--manifest",
                "corpus/train.jsonl",
                "--cap",
                "100",
                "--seed",
                "5",
                "--allow-fallback",
                "--out",
                out,
            ],
        )
    };
    p2v("run/p2v.json");
    p2v("run/p2v-again.json");
    assert_eq!(
        std::fs::read(dir.join("run/p2v.json")).unwrap(),
        std::fs::read(dir.join("run/p2v-again.json")).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run/p2v.report.json")).unwrap())
            .unwrap();
    assert!(report["cer_zero_utterances"].as_u64().unwrap() > 0);

    let encoder_bytes = std::fs::read(dir.join("run/encoder.ckpt")).unwrap();
    ok(
        dir,
        &[
            "train-ced",
            "--config",
            "config.json",
            "--encoder",
            "run/encoder.ckpt",
            "--p2v",
            "run/p2v.json",
            "--manifest",
            "corpus/train.jsonl",
            "--dev",
            "corpus/dev.jsonl",
            "--out",
            "run/verifier.ckpt",
        ],
    );
    assert_eq!(
        encoder_bytes,
        std::fs::read(dir.join("run/encoder.ckpt")).unwrap()
    );
    let log = std::fs::read_to_string(dir.join("run/verifier.log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "loss", "dev_auc_easy", "dev_auc_hard"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    // A P2V database from another encoder is rejected.
    let mismatch = ced(
        dir,
        &[
            "train-ced",
            "--encoder",
            "run/tuned.ckpt",
            "--p2v",
            "run/p2v.json",
            "--manifest",
            "corpus/train.jsonl",
            "--out",
            "run/bad.ckpt",
        ],
    );
    assert_eq!(code(&mismatch), 2);

    ok(
        dir,
        &[
            "bundle",
            "--encoder",
            "run/encoder.ckpt",
            "--p2v",
            "run/p2v.json",
            "--verifier",
            "run/verifier.ckpt",
            "--out",
            "bundle",
        ],
    );
    let eval = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--config",
            "config.json",
            "--bundle",
            "bundle",
            "--manifest",
            "corpus/test.jsonl",
            "--mode",
            "easy",
            "--out",
            out,
        ];
        args.extend_from_slice(extra);
        ok(dir, &args)
    };
    eval("run/easy.json", &[]);
    eval("run/easy-again.json", &["--store-threshold"]);
    let text = std::fs::read_to_string(dir.join("run/easy.json")).unwrap();
    assert_eq!(
        text,
        std::fs::read_to_string(dir.join("run/easy-again.json")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "mode",
        "n_pos",
        "n_neg",
        "auc",
        "eer",
        "threshold_at_eer",
        "infeasible_pairs",
        "bundle_hashes",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["seed"], 3);
    let threshold = report["threshold_at_eer"].as_f64().unwrap();

    let manifest = std::fs::read_to_string(dir.join("corpus/test.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let audio = format!("corpus/{}", entry["features_path"].as_str().unwrap());
    let transcript = entry["transcript"].as_str().unwrap();
    let out = ok(
        dir,
        &[
            "verify", "--bundle", "bundle", "--audio", &audio, "--text", transcript,
        ],
    );
    assert!(out.starts_with("score "), "{out}");
    assert!(out.contains(&format!("threshold {threshold:.6}")), "{out}");
    let forced = ok(
        dir,
        &[
            "verify",
            "--bundle",
            "bundle",
            "--audio",
            &audio,
            "--text",
            transcript,
            "--threshold",
            "0",
        ],
    );
    assert!(forced.contains(" match "), "{forced}");

    ok(
        dir,
        &[
            "eval",
            "--bundle",
            "bundle",
            "--manifest",
            "corpus/test.jsonl",
            "--mode",
            "hard",
            "--out",
            "run/hard.json",
        ],
    );
    assert_eq!(before, hashes(&inputs));

    // Tampering with a bundled file breaks the recorded hashes.
    let p2v_file = dir.join("bundle/p2v.json");
    let mut bytes = std::fs::read(&p2v_file).unwrap();
    bytes.push(b'\n');
    std::fs::write(&p2v_file, bytes).unwrap();
    let out = ced(
        dir,
        &[
            "verify", "--bundle", "bundle", "--audio", &audio, "--text", transcript,
        ],
    );
    assert_eq!(code(&out), 2);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn serkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_serkit"))
        .args(args)
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

fn synthetic(dir: &Path, extra: &[&str]) {
    let mut args = vec!["make-synthetic", "--out", p(dir), "--per-class", "2"];
    args.extend_from_slice(extra);
    let o = serkit(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn without_wall_time(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

#[test]
fn unknown_override_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = serkit(&[
        "train-cv", "--manifest", "/does/not/exist.jsonl", "--out", p(&out), "--set", "lr=1e-3",
        "--set", "learning_rate=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = serkit(&["train-cv", "--manifest", "/does/not/exist.jsonl", "--out", p(&out), "--set", "lr"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn snapshot_reruns_reproduce_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    synthetic(&data, &[]);
    let first = dir.path().join("a");
    let o = serkit(&[
        "train-cv", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&first),
        "--model", "mlp_pool", "--epochs", "2", "--seed", "7", "--set", "mlp_hidden=16,16",
        "--dropout", "0.1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("| MLP with pooling | lld |"), "{}", stdout(&o));
    for f in ["config.json", "report.json", "loss_trace.csv", "epoch_loss.csv", "fold3_confusion.csv", "fold5.sprm"] {
        assert!(first.join(f).exists(), "{f}");
    }

    let second = dir.path().join("b");
    let o = serkit(&["train-cv", "--config", p(&first.join("config.json")), "--out", p(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        without_wall_time(&first.join("report.json")),
        without_wall_time(&second.join("report.json"))
    );
    assert_eq!(
        fs::read(first.join("config.json")).unwrap(),
        fs::read(second.join("config.json")).unwrap()
    );
    assert_eq!(fs::read(first.join("fold2.sprm")).unwrap(), fs::read(second.join("fold2.sprm")).unwrap());

    // a snapshot is tied to its subcommand
    let o = serkit(&["scaling", "--config", p(&first.join("config.json")), "--out", p(&second), "--sizes", "8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bimodal_without_text_embeddings_fails_upfront() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    synthetic(&data, &[]);
    let out = dir.path().join("run");
    let o = serkit(&[
        "train-cv", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&out),
        "--model", "bimodal_align",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("report.json").exists());
}

#[test]
fn failed_folds_give_a_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    synthetic(&data, &[]);
    let out = dir.path().join("run");
    let o = serkit(&[
        "train-cv", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&out),
        "--per-class", "9", "--epochs", "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("failed"), "{}", stdout(&o));
    assert!(out.join("report.json").exists());
}

#[test]
fn scaling_writes_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    synthetic(&data, &["--features", "wav2vec"]);
    let out = dir.path().join("curve");
    let o = serkit(&[
        "scaling", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&out),
        "--features", "wav2vec", "--sizes", "8,16,full", "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("scaling.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "train_size,mean_ua,fold1_ua,fold2_ua,fold3_ua,fold4_ua,fold5_ua");
    let sizes: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(sizes, ["8", "16", "32"]);

    let o = serkit(&[
        "scaling", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&out), "--sizes", "16,8",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = serkit(&[
        "scaling", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&out), "--sizes", "10",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_tone(path: &Path, seconds: f64) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for n in 0..(seconds * 16_000.0) as usize {
        let v = (2.0 * std::f64::consts::PI * 220.0 * n as f64 / 16_000.0).sin();
        w.write_sample((v * 8000.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn extract_lld_lists_missing_audio_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("wav")).unwrap();
    write_tone(&dir.path().join("wav/a.wav"), 1.0);
    write_tone(&dir.path().join("wav/b.wav"), 0.5);
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(
        &manifest,
        [
            r#"{"id":"a","session":1,"speaker":"S1","label_raw":"neu","audio":"wav/a.wav"}"#,
            r#"{"id":"b","session":2,"speaker":"S2","label_raw":"exc","audio":"wav/b.wav"}"#,
            r#"{"id":"c","session":3,"speaker":"S3","label_raw":"sad","audio":"wav/c.wav"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let out = dir.path().join("emb");
    let o = serkit(&["extract-lld", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("extracted 2 of 3"), "{text}");
    assert!(text.contains("failed c"), "{text}");

    let a = out.join("lld/a.emb1");
    let first = fs::read(&a).unwrap();
    let o = serkit(&["inspect-emb", p(&a), p(&out.join("lld/b.emb1"))]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("kind lld rows 39 cols 34 hop 25 ms, checksum ok"), "{text}");
    assert!(text.contains("rows 19 cols 34"), "{text}");

    fs::remove_file(dir.path().join("wav/c.wav")).ok();
    serkit(&["extract-lld", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(fs::read(&a).unwrap(), first);
}

#[test]
fn inspect_reports_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    synthetic(&data, &[]);
    let file = data.join("emb/lld/syn2_sad_0001.emb1");
    let mut bytes = fs::read(&file).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&file, bytes).unwrap();
    let o = serkit(&["inspect-emb", p(&file)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).to_lowercase().contains("checksum"), "{}", stdout(&o));
}

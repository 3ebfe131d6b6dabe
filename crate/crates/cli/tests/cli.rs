use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spoofsmith::data::load_manifest;
use spoofsmith::eval::{load_report, load_roc_csv};

fn spoofsmith(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spoofsmith"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = spoofsmith(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_toy(dir: &Path, count: usize, seed: u64) {
    ok(&[
        "gen-toy",
        "--count",
        &count.to_string(),
        "--res",
        "32",
        "--seed",
        &seed.to_string(),
        "--out",
        p(dir),
    ]);
}

fn train_gan(manifest: &Path, out: &Path) {
    ok(&[
        "train-gan",
        "--manifest",
        p(manifest),
        "--res",
        "16",
        "--epochs",
        "1",
        "--real-per-iter",
        "8",
        "--seed",
        "2",
        "--out",
        p(out),
    ]);
}

#[test]
fn gen_toy_writes_a_manifest_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen_toy(&a, 10, 1);
    gen_toy(&b, 10, 1);
    assert_eq!(load_manifest(&a.join("manifest.jsonl")).unwrap().len(), 10);
    for e in fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        if name != "config.toml" {
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap()
            );
        }
    }
    let cfg = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(cfg.contains("seed = 1"));
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = spoofsmith(&["gen-toy", "--count", "10", "--res", "64", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        spoofsmith(&["gen-toy", "--count", "ten"]).status.code(),
        Some(2)
    );
    assert_eq!(spoofsmith(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    let out = dir.path().join("toy");
    fs::write(
        &file,
        format!(
            "count = 4\nseed = 9\n[model]\nres = 16\n[paths]\nout = {:?}\n",
            p(&out)
        ),
    )
    .unwrap();
    ok(&["gen-toy", "--config", p(&file), "--count", "6"]);
    assert_eq!(load_manifest(&out.join("manifest.jsonl")).unwrap().len(), 6);
    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(
        echoed.contains("count = 6") && echoed.contains("seed = 9") && echoed.contains("res = 16")
    );
    fs::write(&file, "unknown_key = 1\n").unwrap();
    assert_eq!(
        spoofsmith(&["gen-toy", "--config", p(&file)]).status.code(),
        Some(2)
    );
}

#[test]
fn gan_synth_pad_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    gen_toy(&d("toy"), 24, 1);
    let toy = d("toy").join("manifest.jsonl");
    train_gan(&toy, &d("gan"));
    for f in ["g.ckpt", "d.ckpt", "losses.csv", "config.toml"] {
        assert!(d("gan").join(f).exists(), "{f}");
    }
    let losses = fs::read_to_string(d("gan").join("losses.csv")).unwrap();
    assert!(losses.starts_with("iter,d_loss,g_loss\n"));
    assert_eq!(losses.lines().count(), 1 + 3);
    let echoed = fs::read_to_string(d("gan").join("config.toml")).unwrap();
    assert!(echoed.contains("real_per_iter = 8"));

    for out in ["s1", "s2"] {
        ok(&[
            "synth",
            "--ckpt",
            p(&d("gan").join("g.ckpt")),
            "--count",
            "5",
            "--seed",
            "3",
            "--out",
            p(&d(out)),
        ]);
    }
    let pngs = |dir: &Path| {
        let mut v: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        v.sort();
        v
    };
    assert_eq!(pngs(&d("s1")).len(), 5);
    for (a, b) in pngs(&d("s1")).iter().zip(pngs(&d("s2"))) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    ok(&[
        "train-pad",
        "--real-manifest",
        p(&toy),
        "--attack-manifest",
        p(&d("s1").join("manifest.jsonl")),
        "--res",
        "32",
        "--epochs",
        "1",
        "--seed",
        "4",
        "--out",
        p(&d("pad")),
    ]);
    for f in [
        "classifier.ckpt",
        "report.json",
        "roc.csv",
        "history.csv",
        "test.jsonl",
    ] {
        assert!(d("pad").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d("pad").join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,test_acc\n"));

    ok(&[
        "eval",
        "--ckpt",
        p(&d("pad").join("classifier.ckpt")),
        "--manifest",
        p(&d("pad").join("test.jsonl")),
        "--out",
        p(&d("eval")),
    ]);
    let report = load_report(&d("eval")).unwrap();
    assert_eq!(report.threshold, 0.5);
    assert_eq!(report.roc, load_roc_csv(&d("eval")).unwrap());
    let trained = load_report(&d("pad")).unwrap();
    assert_eq!(report, trained);

    // Inputs are left untouched by every command.
    assert_eq!(load_manifest(&toy).unwrap().len(), 24);
}

#[test]
fn wrong_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    gen_toy(&d("real"), 12, 1);
    gen_toy(&d("more_real"), 12, 2);
    let out = spoofsmith(&[
        "train-pad",
        "--real-manifest",
        p(&d("real").join("manifest.jsonl")),
        "--attack-manifest",
        p(&d("more_real").join("manifest.jsonl")),
        "--res",
        "32",
        "--epochs",
        "1",
        "--out",
        p(&d("pad")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient data"));

    let out = spoofsmith(&[
        "synth",
        "--ckpt",
        p(&d("missing.ckpt")),
        "--out",
        p(&d("s")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = spoofsmith(&[
        "train-gan",
        "--manifest",
        p(&d("real").join("manifest.jsonl")),
        "--res",
        "16",
        "--epochs",
        "1",
        "--batch-size",
        "13",
        "--out",
        p(&d("gan")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_passes_and_flags_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(&dir.path().join("toy"), 16, 1);
    train_gan(
        &dir.path().join("toy/manifest.jsonl"),
        &dir.path().join("gan"),
    );
    let good = dir.path().join("gan/g.ckpt");
    let out = ok(&["verify", "--checkpoint", p(&good)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"), "{text}");

    let bad = dir.path().join("bad.ckpt");
    let mut bytes = fs::read(&good).unwrap();
    let n = bytes.len();
    bytes[n - 2] ^= 0x10;
    fs::write(&bad, bytes).unwrap();
    let out = spoofsmith(&["verify", "--checkpoint", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL") && text.contains("corrupt"), "{text}");
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_spoofsmith"))
            .args([
                "gen-toy",
                "--count",
                "4",
                "--res",
                "16",
                "--out",
                p(&dir.path().join(out)),
            ])
            .env("SPOOFSMITH_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("1", "a").status.success());
    assert_eq!(run("0", "b").status.code(), Some(2));
    assert!(!fs::read(dir.path().join("a/toy_00000.png"))
        .unwrap()
        .is_empty());
}

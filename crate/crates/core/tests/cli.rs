use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use encdec_ad::scoring::ScoreSeries;

const BIN: &str = env!("CARGO_BIN_EXE_encdec-ad");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ENCDEC_AD_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn preset_text(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.toml"));
    fs::read_to_string(p).unwrap()
}

#[test]
fn staged_commands_match_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let staged = tmp.path().join("staged");
    let out = ok(&["run", "--preset", "synthetic", "--out", s(&full)]);
    assert!(out.contains("TPR/FPR"));

    let prepared = ok(&["prepare", "--preset", "synthetic", "--out", s(&staged)]);
    assert!(prepared.contains("\"normal_subsequences\": 250"));
    // later stages pick the config up from the output directory
    ok(&["train", "--out", s(&staged)]);
    ok(&["fit-error-model", "--out", s(&staged)]);
    ok(&["threshold", "--out", s(&staged)]);
    ok(&["score", "--out", s(&staged)]);
    ok(&["evaluate", "--out", s(&staged)]);

    for f in ["config.json", "threshold.json", "scores.csv", "metrics.json", "models/c16/model.json"] {
        assert_eq!(read(full.join(f)), read(staged.join(f)), "{f} differs");
    }
    for f in ["prepared/windows.csv", "prepared/manifest.json", "prepared/split.json", "summary.txt",
              "models/c16/error_model.json", "models/c16/train_report.json", "validation_scores.csv"] {
        assert!(full.join(f).is_file(), "missing {f}");
    }
    let plots = fs::read_dir(full.join("plots")).unwrap().count();
    assert!(plots > 0);
}

#[test]
fn prepare_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("p");
    ok(&["prepare", "--preset", "synthetic", "--out", s(&dir)]);
    let first: Vec<Vec<u8>> = ["windows.csv", "manifest.json", "split.json"]
        .iter()
        .map(|f| read(dir.join("prepared").join(f)))
        .collect();
    ok(&["prepare", "--preset", "synthetic", "--out", s(&dir)]);
    for (k, f) in ["windows.csv", "manifest.json", "split.json"].iter().enumerate() {
        assert_eq!(first[k], read(dir.join("prepared").join(f)));
    }
}

#[test]
fn resumed_training_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(&["prepare", "--preset", "synthetic", "--out", s(d)]);
    }
    ok(&["train", "--out", s(&a)]);
    let paused = ok(&["train", "--out", s(&b), "--stop-after", "4"]);
    assert!(paused.contains("epochs 4") && paused.contains("paused"), "{paused}");
    let ck = tmp.path().join("ck.json");
    fs::copy(b.join("models/c16/checkpoint.json"), &ck).unwrap();
    ok(&["train", "--out", s(&b), "--resume", s(&ck)]);
    assert_eq!(read(a.join("models/c16/model.json")), read(b.join("models/c16/model.json")));
    assert_eq!(
        read(a.join("models/c16/train_report.json")),
        read(b.join("models/c16/train_report.json"))
    );
}

#[test]
fn unsupervised_threshold_matches_score_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("unsup.toml");
    let text = preset_text("synthetic")
        .replace("threshold = \"supervised\"", "threshold = \"unsupervised\"")
        .replace("hidden_sizes = [16]", "hidden_sizes = [8, 16]");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("o");
    ok(&["run", "--config", s(&cfg), "--out", s(&out), "--no-plots"]);

    let sel: serde_json::Value = serde_json::from_slice(&read(out.join("threshold.json"))).unwrap();
    let scores = ScoreSeries::load_csv(out.join("validation_scores.csv")).unwrap().scores();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let tau = sel["threshold"]["tau"].as_f64().unwrap();
    assert!((tau - (mean + sd)).abs() <= 1e-12 * tau.abs().max(1.0), "{tau} vs {}", mean + sd);

    // c chosen by the lowest v_N1 loss
    let cands = sel["candidates"].as_array().unwrap();
    let best = cands
        .iter()
        .min_by(|x, y| {
            x["validation_loss"].as_f64().unwrap().total_cmp(&y["validation_loss"].as_f64().unwrap())
        })
        .unwrap();
    assert_eq!(sel["hidden_size"], best["hidden_size"]);
}

#[test]
fn errors_map_to_categories() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("e");

    let out = run(&["prepare", "--preset", "synthetic", "--hidden-sizes", "0", "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));

    let out = run(&["train", "--out", s(&tmp.path().join("nothing"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["prepare", "--preset", "power", "--data-dir", s(tmp.path()), "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("power_data.txt"));

    ok(&["prepare", "--preset", "synthetic", "--out", s(&dir)]);
    let out = run(&["train", "--preset", "synthetic", "--seed", "99", "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(8));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[artifact]:"));

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,x\n").unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(
        &cfg,
        format!(
            "[dataset]\nname = \"bad\"\nseries = [{{ id = \"b\", path = \"{}\" }}]\nwindow_length = 1\nwindow_step = 1\n\
             [model]\nhidden_sizes = [2]\n[detection]\nthreshold = \"unsupervised\"\n",
            s(&bad)
        ),
    )
    .unwrap();
    let out = run(&["prepare", "--config", s(&cfg), "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn csv_dataset_with_interval_file() {
    let tmp = tempfile::tempdir().unwrap();
    let series: String = (0..600)
        .map(|i| {
            let x = (i as f64 * 2.0 * std::f64::consts::PI / 20.0).sin();
            let spike = if (305..310).contains(&i) || (505..510).contains(&i) || (105..110).contains(&i) { 3.0 } else { 0.0 };
            format!("{},{}\n", i, x + spike)
        })
        .collect();
    fs::write(tmp.path().join("series.csv"), format!("t,value\n{series}")).unwrap();
    fs::write(tmp.path().join("labels.csv"), "series_id,start,end\ns,105,110\ns,305,310\ns,505,510\n").unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "seed = 3\n[dataset]\nname = \"toy\"\nseries = [{ id = \"s\", path = \"series.csv\" }]\n\
         schema = { channels = [1] }\nintervals = \"labels.csv\"\ndownsample = 2\nwindow_length = 10\nwindow_step = 10\n\
         [split]\nnormal = [0.5, 0.2, 0.1, 0.2]\nanomalous = [0.34, 0.66]\n\
         [model]\nhidden_sizes = [4]\n[train]\nmax_epochs = 5\n[detection]\nthreshold = \"supervised\"\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let text = ok(&["prepare", "--config", s(&cfg), "--out", s(&out), "--data-dir", s(tmp.path())]);
    assert!(text.contains("\"anomalous_subsequences\": 3"), "{text}");
    assert!(text.contains("\"normal_subsequences\": 27"), "{text}");
    ok(&["run", "--config", s(&cfg), "--out", s(&out), "--data-dir", s(tmp.path()), "--no-plots"]);
    assert!(out.join("metrics.json").is_file());
}

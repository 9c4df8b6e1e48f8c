use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const CONFIG: &str = r#"{
  "grids": {"fine": [32], "coarse": [4]},
  "phases": {"lam_lo": 1.0, "lam_hi": 10.0},
  "bc": {"kind": "fixed", "a": [0.0, 100.0, 0.0, 0.0]},
  "grf": {"length_scale": 0.05},
  "data": {"n_train": 6, "n_test": 4},
  "features": {"registry": {"named": "default-1d"}},
  "training": {"max_epochs": 8, "n_svi_steps": 20},
  "prediction": {"n_mc": 10, "var_uf_samples": 16},
  "seed": 11
}"#;

fn cgrom(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cgrom"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = cgrom(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn read_f64(p: &Path) -> Vec<f64> {
    fs::read(p)
        .unwrap()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[test]
fn gen_data_is_reproducible_and_consistent() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), CONFIG);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&b)]);
    for split in ["train", "test"] {
        assert_eq!(files(&a.join(split)), files(&b.join(split)));
    }
    let m = json(&a.join("train/manifest.json"));
    assert_eq!(m["n_samples"], 6);
    assert_eq!(m["ids"].as_array().unwrap().len(), 6);
    assert_eq!(
        json(&a.join("train/u_f.bin.json"))["shape"],
        serde_json::json!([6, 33])
    );
    assert_eq!(
        json(&a.join("train/lam_f.bin.json"))["shape"],
        serde_json::json!([6, 32])
    );
    for f in [
        "train/manifest.json",
        "train/u_f.bin.json",
        "test/lam_f.bin.json",
    ] {
        let v = json(&a.join(f));
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 16);
    }
    // a different seed changes the data
    let c = t.path().join("c");
    ok(&[
        "gen-data",
        "--config",
        s(&cfg),
        "--out",
        s(&c),
        "--seed",
        "12",
    ]);
    assert_ne!(files(&a.join("train")), files(&c.join("train")));
}

#[test]
fn unit_contrast_gives_identical_solutions() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &CONFIG.replace("\"lam_hi\": 10.0", "\"lam_hi\": 1.0"),
    );
    ok(&["gen-data", "--config", s(&cfg), "--out", s(t.path())]);
    let u = read_f64(&t.path().join("train/u_f.bin"));
    let (first, rest) = u.split_at(33);
    for row in rest.chunks(33) {
        assert_eq!(row, first);
    }
}

#[test]
fn train_predict_evaluate_and_dump() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), CONFIG);
    let d = t.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&d)]);
    let (m1, m2) = (t.path().join("m1"), t.path().join("m2"));
    for m in [&m1, &m2] {
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&d.join("train")),
            "--out",
            s(m),
            "--threads",
            "2",
        ]);
    }
    // checkpoints are byte-identical; the trace carries wall times and is excluded
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(n, _)| n != "trace.jsonl").collect()
    };
    assert_eq!(strip(files(&m1)), strip(files(&m2)));

    let summary = json(&m1.join("active_features.json"));
    let trace = fs::read_to_string(m1.join("trace.jsonl")).unwrap();
    assert_eq!(
        trace.lines().count() as u64,
        summary["epochs"].as_u64().unwrap()
    );
    for l in trace.lines() {
        let r: Value = serde_json::from_str(l).unwrap();
        assert_eq!(r["format_version"], 1);
        assert!(r["elbo"].as_f64().unwrap().is_finite());
    }
    let model = json(&m1.join("model.json"));
    let active: Vec<bool> = serde_json::from_value(model["active"].clone()).unwrap();
    let ids: Vec<String> = model["registry"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["id"].as_str().unwrap().to_string())
        .collect();
    let listed: Vec<String> = summary["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["id"].as_str().unwrap().to_string())
        .collect();
    let expected: Vec<String> = ids
        .iter()
        .zip(&active)
        .filter(|(_, a)| **a)
        .map(|(i, _)| i.clone())
        .collect();
    assert_eq!(listed, expected);
    assert!(listed.len() < ids.len());

    let (p1, p2) = (t.path().join("p1"), t.path().join("p2"));
    for (m, p) in [(&m1, &p1), (&m2, &p2)] {
        ok(&[
            "predict",
            "--model",
            s(m),
            "--data",
            s(&d.join("test")),
            "--out",
            s(p),
        ]);
    }
    assert_eq!(files(&p1), files(&p2));
    let csv = fs::read_to_string(p1.join("pred_0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# format_version=1 config_hash="));
    assert_eq!(lines[1], "x,y,mu_pred,sigma_pred,u_true");
    assert_eq!(lines.len() - 2, 33);
    for l in &lines[2..] {
        for v in l.split(',') {
            let x: f64 = v.parse().unwrap();
            assert_eq!(format!("{x:?}"), v);
        }
    }

    let e = t.path().join("e");
    ok(&[
        "evaluate",
        "--model",
        s(&m1),
        "--model",
        s(&m2),
        "--data",
        s(&d.join("test")),
        "--data",
        s(&d.join("train")),
        "--out",
        s(&e),
    ]);
    let r = json(&e.join("report.json"));
    let em = r["e_matrix"].as_array().unwrap();
    assert_eq!(em.len(), 2);
    assert!(em.iter().all(|row| row.as_array().unwrap().len() == 2));
    let entry = &r["entries"][0]["report"];
    assert_eq!(entry["var_uf_samples"], 16);
    assert!(entry["l_data"].as_f64().unwrap().is_finite());

    let f = t.path().join("f");
    ok(&[
        "dump-features",
        "--config",
        s(&cfg),
        "--data",
        s(&d.join("test")),
        "--out",
        s(&f),
    ]);
    let csv = fs::read_to_string(f.join("features_0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let header: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(header, ids.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(lines.len() - 2, 4);
    let c = header.iter().position(|h| *h == "const").unwrap();
    for l in &lines[2..] {
        let row: Vec<&str> = l.split(',').collect();
        assert_eq!(row.len(), ids.len());
        assert_eq!(row[c], "1.0");
    }
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let bad = write_config(
        t.path(),
        &CONFIG.replace("\"seed\"", "\"sede\": 1, \"seed\""),
    );
    let o = cgrom(&[
        "gen-data",
        "--config",
        s(&bad),
        "--out",
        s(&t.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cgrom(&[
        "gen-data",
        "--config",
        s(&t.path().join("missing.json")),
        "--out",
        s(t.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cgrom(&["gen-data", "--out", s(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = cgrom(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(t.path(), CONFIG);
    let d = t.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&d)]);
    // a grid mismatch between config and dataset is a configuration error
    let other = t.path().join("other.json");
    fs::write(&other, CONFIG.replace("\"fine\": [32]", "\"fine\": [16]")).unwrap();
    let o = cgrom(&[
        "train",
        "--config",
        s(&other),
        "--data",
        s(&d.join("train")),
        "--out",
        s(&t.path().join("m")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    // a threshold that prunes every feature is a numerical failure
    let prune = t.path().join("prune.json");
    fs::write(
        &prune,
        CONFIG.replace(
            "\"max_epochs\": 8",
            "\"max_epochs\": 8, \"gamma_prune_threshold\": 1e12",
        ),
    )
    .unwrap();
    let o = cgrom(&[
        "train",
        "--config",
        s(&prune),
        "--data",
        s(&d.join("train")),
        "--out",
        s(&t.path().join("m")),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

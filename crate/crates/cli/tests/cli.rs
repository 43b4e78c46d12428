use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn corrnqs(task: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrnqs"))
        .arg(task)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("CORRNQS_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(output: Output) {
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}

fn write(dir: &Path, name: &str, value: Value) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn ising_4x4() -> Value {
    serde_json::json!({"kind": "ising", "lattice": {"kind": "square-sites", "Lx": 4, "Ly": 4, "boundary": "periodic"}})
}

#[test]
fn ed_then_fourier_on_the_stored_vector() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ed.json", serde_json::json!({ "model": ising_4x4() }));
    let ed = tmp.path().join("ed");
    ok(corrnqs("ed", &cfg, &ed, &[]));
    let report = json(&ed.join("ed.json"));
    assert!((report["energy"].as_f64().unwrap() + 32.0).abs() < 1e-9);
    let manifest = json(&ed.join("manifest.json"));
    for f in manifest["files"].as_array().unwrap() {
        assert!(ed.join(f.as_str().unwrap()).exists());
    }
    assert!(!ed.join(".lock").exists());

    let cfg = write(tmp.path(), "fourier.json", serde_json::json!({ "input": ed.join("ground_state.bin") }));
    let out = tmp.path().join("fourier");
    ok(corrnqs("fourier", &cfg, &out, &[]));
    let csv = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[..2], ["65535", "16"]);
    assert!(out.join("degree_profile.svg").exists());
    let odd: f64 = fs::read_to_string(out.join("degree_profile.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .filter(|r| r[0] as usize % 2 == 1)
        .map(|r| r[1])
        .sum();
    assert!(odd < 1e-20);
}

#[test]
fn training_is_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "train.json",
        serde_json::json!({
            "model": {"kind": "tfim", "hx": 1.0, "lattice": {"kind": "square-sites", "Lx": 6, "Ly": 1, "boundary": "periodic"}},
            "ansatz": {"family": "ffnn", "n_hidden": 4, "activation": "cosh", "bias": true},
            "sampler": {"n_chains": 4, "samples": 64, "burn_in": 5},
            "sr": {"iterations": 15, "learning_rate": 0.05},
            "seed": 3
        }),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(corrnqs("train", &cfg, &a, &[]));
    ok(corrnqs("train", &cfg, &b, &["--no-plot"]));
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log, fs::read_to_string(b.join("train_log.csv")).unwrap());
    let header = log.lines().next().unwrap();
    for col in ["iteration", "energy", "variance", "acceptance", "rel_error", "excluded_samples"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    assert_eq!(log.lines().count(), 16);
    assert!(a.join("energy.svg").exists() && !b.join("energy.svg").exists());

    let ma = json(&a.join("manifest.json"));
    assert_eq!(ma["config_hash"], json(&b.join("manifest.json"))["config_hash"]);
    let listed: Vec<&str> = ma["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    for f in ["config.json", "train_log.csv", "params.bin", "params.json", "summary.json", "energy.svg"] {
        assert!(listed.contains(&f), "{f} missing from {listed:?}");
    }
    let summary = json(&a.join("summary.json"));
    assert!(summary["exact_energy"].as_f64().unwrap() >= summary["reference_energy"].as_f64().unwrap() - 1e-9);

    // the parameter blob reloads into the same wave function
    let cfg = write(tmp.path(), "f.json", serde_json::json!({ "input": a.join("params.bin") }));
    ok(corrnqs("fourier", &cfg, &tmp.path().join("f"), &["--no-plot"]));
    assert_eq!(json(&tmp.path().join("f/fourier.json"))["num_vars"], 6);

    let cfg = tmp.path().join("train.json");
    ok(corrnqs("train", &cfg, &tmp.path().join("c"), &["--seed", "4"]));
    assert_ne!(log, fs::read_to_string(tmp.path().join("c/train_log.csv")).unwrap());
}

#[test]
fn floors_and_sector() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "floors.json",
        serde_json::json!({
            "model": {"kind": "tfim", "hx": 0.5, "lattice": {"kind": "square-sites", "Lx": 6, "Ly": 1, "boundary": "periodic"}},
            "orders": [0, 2, 6]
        }),
    );
    ok(corrnqs("ed-corr", &cfg, &tmp.path().join("floors"), &[]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(tmp.path().join("floors/floors.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0][2] >= rows[1][2] && rows[1][2] >= rows[2][2]);
    assert!(rows[2][3] < 1e-9);

    let cfg = write(
        tmp.path(),
        "sector.json",
        serde_json::json!({"model": {"kind": "toric", "hx": 0.2, "lattice": {"kind": "square-links", "Lx": 2, "Ly": 2}}}),
    );
    ok(corrnqs("sector", &cfg, &tmp.path().join("sector"), &[]));
    let report = json(&tmp.path().join("sector/sector.json"));
    assert_eq!(report["dimension"], 32);
    assert_eq!(report["num_independent"], 5);
    assert_eq!(report["projection_bijective"], true);
}

#[test]
fn rejects_bad_configs_and_locked_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.json", serde_json::json!({ "model": ising_4x4(), "iterations": 3 }));
    let out = corrnqs("ed", &bad, &tmp.path().join("x"), &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    let wrong_task = write(tmp.path(), "t.json", serde_json::json!({ "task": "ed", "model": ising_4x4() }));
    assert!(!corrnqs("sector", &wrong_task, &tmp.path().join("y"), &[]).status.success());

    let locked = tmp.path().join("locked");
    fs::create_dir_all(&locked).unwrap();
    fs::write(locked.join(".lock"), "").unwrap();
    let out = corrnqs("ed", &wrong_task, &locked, &[]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn figure_merges_its_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "fig.json",
        serde_json::json!({ "figure": "fig4b", "sr": {"iterations": 2}, "sampler": {"n_chains": 8, "samples": 64, "burn_in": 2} }),
    );
    let out = tmp.path().join("fig");
    ok(corrnqs("figure", &cfg, &out, &[]));
    let merged = fs::read_to_string(out.join("figure.csv")).unwrap();
    for series in ["relu", "C1", "C16"] {
        assert_eq!(merged.lines().filter(|l| l.starts_with(&format!("{series},"))).count(), 2);
    }
    let manifest = json(&out.join("manifest.json"));
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert!(files.contains(&"relu/train_log.csv") && files.contains(&"figure.svg") && files.contains(&"ed/ed.json"));
    for f in files {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = json(&out.join("figure.json"));
    assert!(summary["runs"]["relu"]["support_states"].as_u64().is_some());
}

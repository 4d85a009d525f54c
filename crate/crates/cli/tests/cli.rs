use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ssdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdm"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ssdm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small noisy dataset: one trace per 2-state test matrix at SNR 3.
fn dataset(dir: &Path, name: &str, seed: &str) -> PathBuf {
    ok(ssdm(
        dir,
        &[
            "generate",
            "--catalog",
            "test",
            "--k",
            "2",
            "--traces-per-matrix",
            "1",
            "--length",
            "1000",
            "--snr",
            "3",
            "--seed",
            seed,
            "--out",
            name,
        ],
    ));
    dir.join(name)
}

fn first_pair(ds: &Path) -> (PathBuf, PathBuf) {
    let manifest = read_json(&ds.join("manifest.json"));
    let e = &manifest["entries"][0];
    (
        ds.join(e["file"].as_str().unwrap()),
        ds.join(e["clean_file"].as_str().unwrap()),
    )
}

#[test]
fn generate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = dataset(tmp.path(), "a", "11");
    let b = dataset(tmp.path(), "b", "11");
    let c = dataset(tmp.path(), "c", "12");
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
    let (na, _) = first_pair(&a);
    let (nb, _) = first_pair(&b);
    let (nc, _) = first_pair(&c);
    assert_eq!(fs::read(&na).unwrap(), fs::read(&nb).unwrap());
    assert_ne!(fs::read(&na).unwrap(), fs::read(&nc).unwrap());

    let ra = read_json(&a.join("repro.json"));
    let rb = read_json(&b.join("repro.json"));
    assert_eq!(ra["config_hash"], rb["config_hash"]);
    assert_eq!(ra["seeds"]["master"], 11);
    assert!(ra["versions"]["rustc"]
        .as_str()
        .unwrap()
        .starts_with("rustc"));
    assert_eq!(ra["versions"]["ssdm_core"], ra["versions"]["ssdm_cli"]);
}

#[test]
fn eval_of_identical_traces_is_clamped() {
    let tmp = TempDir::new().unwrap();
    let ds = dataset(tmp.path(), "ds", "3");
    let (_, clean) = first_pair(&ds);
    let clean = clean.to_str().unwrap();
    ok(ssdm(
        tmp.path(),
        &[
            "eval", "--pred", clean, "--gt", clean, "--k", "2", "--out", "r.json",
        ],
    ));
    let r = read_json(&tmp.path().join("r.json"));
    assert_eq!(r["mse"], 0.0);
    assert_eq!(r["f1"], 1.0);
    assert_eq!(r["clamped"], true);
    assert!(tmp.path().join("r.json.repro.json").is_file());
}

#[test]
fn baselines_write_outputs_and_records() {
    let tmp = TempDir::new().unwrap();
    let ds = dataset(tmp.path(), "ds", "4");
    let (noisy, clean) = first_pair(&ds);
    let (noisy, clean) = (noisy.to_str().unwrap(), clean.to_str().unwrap());

    ok(ssdm(
        tmp.path(),
        &[
            "baseline", "lowpass", "--input", noisy, "--gt", clean, "--k", "2", "--out", "lp.csv",
        ],
    ));
    let rec = read_json(&tmp.path().join("lp.csv.repro.json"));
    let fc = rec["details"]["cutoff"].as_f64().unwrap();
    assert!((0.01..=0.08 + 1e-12).contains(&fc));
    assert_eq!(rec["inputs"].as_array().unwrap().len(), 2);

    ok(ssdm(
        tmp.path(),
        &[
            "baseline", "lowpass", "--input", noisy, "--cutoff", "0.05", "--out", "lp2.csv",
        ],
    ));
    ok(ssdm(
        tmp.path(),
        &["baseline", "hmm", "--input", noisy, "--out", "hmm.csv"],
    ));
    let rec = read_json(&tmp.path().join("hmm.csv.repro.json"));
    assert_eq!(rec["details"]["k"], 2);

    for f in ["lp.csv", "lp2.csv", "hmm.csv"] {
        let text = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1001, "{f}");
    }
}

#[test]
fn corrupt_matches_requested_noise() {
    let tmp = TempDir::new().unwrap();
    let ds = dataset(tmp.path(), "ds", "5");
    let (_, clean) = first_pair(&ds);
    let clean = clean.to_str().unwrap();
    for kind in ["white", "pink"] {
        let out = format!("{kind}.csv");
        ok(ssdm(
            tmp.path(),
            &[
                "corrupt", "--input", clean, "--k", "2", "--snr", "2", "--noise", kind, "--seed",
                "9", "--out", &out,
            ],
        ));
        let rec = read_json(&tmp.path().join(format!("{out}.repro.json")));
        assert!((rec["details"]["noise_rms"].as_f64().unwrap() - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(rec["seeds"]["noise"], 9);
    }
}

#[test]
fn benchmark_without_network_methods() {
    let tmp = TempDir::new().unwrap();
    ok(ssdm(
        tmp.path(),
        &[
            "benchmark",
            "--methods",
            "raw,lowpass",
            "--catalog",
            "test",
            "--k",
            "2",
            "--traces-per-matrix",
            "1",
            "--snr",
            "1,5",
            "--out",
            "bench",
        ],
    ));
    let dir = tmp.path().join("bench");
    let csv = fs::read_to_string(dir.join("benchmark.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,K,snr,mse_mean,f1_mean,score_mean_of_traces,score_pooled,n_traces"
    );
    assert_eq!(lines.count(), 4);
    for f in [
        "per_trace.csv",
        "score_vs_snr.csv",
        "lowpass_cutoffs.csv",
        "examples.csv",
        "repro.json",
    ] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn train_denoise_and_analyze_roundtrip() {
    let tmp = TempDir::new().unwrap();
    let ds = dataset(tmp.path(), "ds", "6");
    ok(ssdm(
        tmp.path(),
        &[
            "train",
            "--data",
            "ds",
            "--epochs",
            "1",
            "--batch",
            "4",
            "--base-channels",
            "16",
            "--seed",
            "2",
            "--out",
            "m.ssdm",
        ],
    ));
    let rec = read_json(&tmp.path().join("m.ssdm.repro.json"));
    assert_eq!(rec["details"]["epochs_completed"], 1);
    assert_eq!(rec["details"]["traces"], 8);

    let (noisy, _) = first_pair(&ds);
    let noisy = noisy.to_str().unwrap();
    let run = |out: &str| {
        ok(ssdm(
            tmp.path(),
            &[
                "denoise",
                "--checkpoint",
                "m.ssdm",
                "--input",
                noisy,
                "--t-start",
                "3",
                "--seed",
                "1",
                "--out",
                out,
            ],
        ));
        fs::read(tmp.path().join(out)).unwrap()
    };
    assert_eq!(run("d1.csv"), run("d2.csv"));
    let rec = read_json(&tmp.path().join("d1.csv.repro.json"));
    assert_eq!(rec["details"]["t_start"], 3);
    assert_eq!(rec["inputs"].as_array().unwrap().len(), 2);
    ok(ssdm(
        tmp.path(),
        &[
            "denoise",
            "--checkpoint",
            "m.ssdm",
            "--input",
            noisy,
            "--t-start",
            "3",
            "--sampler",
            "ancestral",
            "--out",
            "d3.csv",
        ],
    ));
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &[
                "denoise",
                "--checkpoint",
                "m.ssdm",
                "--input",
                noisy,
                "--sampler",
                "ddim",
                "--out",
                "d4.csv"
            ]
        )),
        2
    );

    ok(ssdm(
        tmp.path(),
        &[
            "analyze",
            "fret",
            "--input",
            noisy,
            "--dt",
            "0.1",
            "--checkpoint",
            "m.ssdm",
            "--t-start",
            "3",
            "--out",
            "fret",
        ],
    ));
    assert!(tmp.path().join("fret/kinetics.json").is_file());
    assert!(tmp.path().join("fret/denoised.csv").is_file());

    ok(ssdm(
        tmp.path(),
        &[
            "analyze",
            "nanopore",
            "--input",
            noisy,
            "--dt",
            "0.1",
            "--threshold",
            "0.5",
            "--baseline-level",
            "0",
            "--out",
            "np",
        ],
    ));
    let ev = read_json(&tmp.path().join("np/events.json"));
    assert_eq!(ev["baseline"], 0.0);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let ds = dataset(tmp.path(), "ds", "7");
    let (_, clean) = first_pair(&ds);
    let clean = clean.to_str().unwrap();
    fs::write(tmp.path().join("bad.csv"), "value\nabc\n").unwrap();
    fs::write(tmp.path().join("bad.ssdm"), b"not a checkpoint").unwrap();

    assert_eq!(code(&ssdm(tmp.path(), &["eval", "--pred", clean])), 2);
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &["generate", "--noise", "brown", "--out", "x"]
        )),
        2
    );
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &["eval", "--pred", clean, "--gt", clean, "--k", "9"]
        )),
        3
    );
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &["benchmark", "--methods", "ssdm", "--out", "b"]
        )),
        3
    );
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &["eval", "--pred", "missing.csv", "--gt", clean, "--k", "2"]
        )),
        4
    );
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &["eval", "--pred", "bad.csv", "--gt", clean, "--k", "2"]
        )),
        5
    );
    assert_eq!(
        code(&ssdm(
            tmp.path(),
            &[
                "denoise",
                "--checkpoint",
                "bad.ssdm",
                "--input",
                clean,
                "--out",
                "d.csv"
            ]
        )),
        5
    );
    let diverged = ssdm(
        tmp.path(),
        &[
            "train",
            "--data",
            "ds",
            "--epochs",
            "1",
            "--batch",
            "4",
            "--base-channels",
            "16",
            "--lr0",
            "1e35",
            "--lr-min",
            "1e35",
            "--weight-decay",
            "0",
            "--out",
            "div.ssdm",
        ],
    );
    assert_eq!(
        code(&diverged),
        7,
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
    assert_eq!(code(&ssdm(tmp.path(), &["--help"])), 0);
}

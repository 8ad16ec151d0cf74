use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sidetune::attention;

fn sidetune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidetune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sidetune(args);
    assert!(
        out.status.success(),
        "sidetune {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_train_eval_and_dump_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let data_s = data.to_str().unwrap();
    let run_s = run.to_str().unwrap();

    ok(&["gen-data", "--out", data_s, "--seed", "3", "--train", "12", "--val", "4"]);
    for f in ["train.srds", "val.srds", "manifest.json"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    let stdout = ok(&[
        "train", "--data", data_s, "--out-dir", run_s,
        "--set", "regime=frozen_vl_only",
        "--set", "train.steps=3",
        "--set", "train.batch_size=4",
        "--set", "eval.every=3",
    ]);
    assert!(stdout.contains("frozen_vl_only"), "{stdout}");
    let report = json(&run.join("report.json"));
    assert_eq!(report["regime_report"]["metrics"]["steps"], 3);
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["regime"], "frozen_vl_only");
    assert_eq!(manifest["data"], data_s);
    assert_eq!(manifest["config_hash"], report["config_hash"]);

    let ckpt = run.join("checkpoint.srck");
    let ckpt_s = ckpt.to_str().unwrap();
    let eval = ok(&["eval", "--checkpoint", ckpt_s, "--data", data_s]);
    assert!(eval.contains("samples           4"), "{eval}");

    let attn = tmp.path().join("attn.txt");
    ok(&["dump-attention", "--checkpoint", ckpt_s, "--data", data_s, "--index", "1", "--out", attn.to_str().unwrap()]);
    let text = fs::read_to_string(&attn).unwrap();
    assert!(text.starts_with("# "));
    let layers = attention::parse(&text).unwrap();
    assert_eq!(layers.len(), 2);
    for (i, l) in layers.iter().enumerate() {
        assert_eq!(l.layer, i);
        let (r, c) = l.matrix.dims2();
        assert_eq!(r, c);
        for row in 0..r {
            let s: f64 = l.matrix.row(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    let out = sidetune(&["dump-attention", "--checkpoint", ckpt_s, "--data", data_s, "--index", "9"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
}

#[test]
fn compare_accounting_only_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("cmp");
    ok(&["gen-data", "--out", data.to_str().unwrap(), "--train", "2", "--val", "1"]);
    let stdout = ok(&[
        "compare", "--accounting-only",
        "--regimes", "full,side_m2ist",
        "--data", data.to_str().unwrap(),
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("side_m2ist"));
    let csv = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert_eq!(json(&out.join("manifest.json"))["accounting_only"], true);
}

#[test]
fn ablate_density_lists_three_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("abl");
    ok(&["gen-data", "--out", data.to_str().unwrap(), "--train", "1", "--val", "1"]);
    let stdout = ok(&[
        "ablate", "density", "--accounting-only",
        "--data", data.to_str().unwrap(),
        "--out-dir", out.to_str().unwrap(),
    ]);
    for label in ["2 pairs", "4 pairs", "6 pairs"] {
        assert!(stdout.contains(label), "{stdout}");
    }
}

#[test]
fn count_params_reference() {
    let stdout = ok(&["count-params", "--reference"]);
    assert!(stdout.contains("3161088") || stdout.contains("3,161,088"), "{stdout}");
}

#[test]
fn bad_override_and_config_file_errors() {
    let out = sidetune(&["count-params", "--set", "no.such.key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\nadapter.c_i = 1000\n").unwrap();
    let out = sidetune(&["count-params", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("c_i"));

    fs::write(&cfg, "adapter.c_i = 32\n").unwrap();
    ok(&["count-params", "--config", cfg.to_str().unwrap(), "--benchmark", "2"]);
}

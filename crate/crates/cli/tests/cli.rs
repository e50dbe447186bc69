use std::path::Path;
use std::process::{Command, Output};

fn insens(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_insens"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = insens(&["insensitize-linear", "--config", "missing.cfg"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn unknown_key_and_subcommand_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("typo.toml"), "[grid]\nnt = 200\nnn = 64\n").unwrap();
    let out = insens(&["convergence", "--config", "typo.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nn"));
    assert_eq!(insens(&["frobnicate"], tmp.path()).status.code(), Some(1));
}

#[test]
fn s_below_threshold_fails_the_check() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("low.toml"), "[carleman]\ns = 1.0\n").unwrap();
    let out = insens(&["weights-check", "--config", "low.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("4T/|M0|") && err.contains("s-below-threshold"), "{err}");
    let m = manifest(&tmp.path().join("o"));
    assert_eq!(m["all_pass"], false);
}

#[test]
fn manifest_lists_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = insens(&["insensitize-linear", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("o");
    let m = manifest(&dir);
    let mut listed: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    listed.sort();
    assert_eq!(listed, listing(&dir));
    assert_eq!(m["command"], "insensitize-linear");
    assert_eq!(m["config"]["grid"]["n"], 64);
}

#[test]
fn field_dump_header_matches_grid() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("small.toml"), "[grid]\nn = 32\nnt = 32\n").unwrap();
    let out = insens(
        &["insensitize-linear", "--config", "small.toml", "--out", "o"],
        tmp.path(),
    );
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    let bytes = std::fs::read(tmp.path().join("o/control.ins4fld")).unwrap();
    assert_eq!(&bytes[..8], b"INS4FLD\0");
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    assert_eq!((u32_at(8), u32_at(12), u32_at(16), u32_at(20)), (1, 32, 32, 0));
    let len = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    assert_eq!(len, 32 * 31 * 8);
    assert_eq!(bytes.len() as u64, 32 + len);
}

#[test]
fn identical_seed_gives_identical_tables() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let out = insens(&["insensitize-semilinear", "--seed", "11", "--out", d], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in listing(&tmp.path().join("a")) {
        if f == "manifest.json" {
            continue;
        }
        let a = std::fs::read(tmp.path().join("a").join(&f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn csv_values_carry_17_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let out = insens(&["convergence", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(tmp.path().join("o/convergence.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("nt,dt,error,order"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mantissa = row[2].split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17);
}

#[test]
fn quick_selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = insens(&["selftest", "--quick", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("o/selftest.csv").exists());
}

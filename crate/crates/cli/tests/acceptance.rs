//! Runs `wtmoments validate` twice with the same seed and reports one line
//! per acceptance criterion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn validate(out: &Path) -> (i32, Value) {
    let output = Command::new(env!("CARGO_BIN_EXE_wtmoments"))
        .args(["validate", "--seed", "42", "--out"])
        .arg(out)
        .env_remove("WTMOMENTS_CONFIG")
        .env_remove("WTMOMENTS_TOLERANCE_PROFILE")
        .output()
        .expect("binary runs");
    let text = fs::read_to_string(out.join("manifest.json")).expect("manifest written");
    (output.status.code().unwrap_or(-1), serde_json::from_str(&text).expect("manifest parses"))
}

/// Artifact path to bytes, manifest excluded.
fn artifacts(dir: &Path, manifest: &Value) -> BTreeMap<String, Vec<u8>> {
    manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let p = a["path"].as_str().unwrap().to_string();
            let bytes = fs::read(dir.join(&p)).unwrap();
            (p, bytes)
        })
        .collect()
}

#[test]
fn acceptance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (code_a, man_a) = validate(a.path());
    let (code_b, man_b) = validate(b.path());

    let checks = man_a["checks"].as_array().unwrap();
    let mut verdicts = Vec::new();
    for n in 1..=10u64 {
        let found: Vec<&Value> = checks.iter().filter(|c| c["criterion"].as_u64() == Some(n)).collect();
        let passed = !found.is_empty() && found.iter().all(|c| c["passed"].as_bool() == Some(true));
        let detail: Vec<String> = found
            .iter()
            .map(|c| {
                let mut s = format!("{} {}", c["name"].as_str().unwrap(), c["measured"]);
                if let Some(d) = c["detail"].as_str().filter(|d| !d.is_empty()) {
                    s.push_str(" -- ");
                    s.push_str(d);
                }
                s
            })
            .collect();
        verdicts.push((n, passed, detail.join("; ")));
    }

    let fa = artifacts(a.path(), &man_a);
    let fb = artifacts(b.path(), &man_b);
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let same_set = fa.keys().eq(fb.keys());
    let in_process = checks
        .iter()
        .any(|c| c["criterion"].as_u64() == Some(11) && c["passed"].as_bool() == Some(true));
    let det = same_set && differing.is_empty() && in_process && code_a == code_b;
    verdicts.push((
        11,
        det,
        format!("{} artifacts compared, {} differ, in-process rerun identical: {in_process}", fa.len(), differing.len()),
    ));

    for (n, ok, detail) in &verdicts {
        println!("{} criterion {n}: {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    let failed: Vec<u64> = verdicts.iter().filter(|v| !v.1).map(|v| v.0).collect();
    assert_eq!(code_a, if failed.is_empty() { 0 } else { 1 }, "exit code matches the check outcome");
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

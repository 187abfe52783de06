use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn windcoh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windcoh")).args(args).output().expect("spawn windcoh")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Every file under `dir` except the timings sidecar.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timings.json" {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn validate_bundled_case() {
    let o = windcoh(&["validate"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("68 buses"));
}

#[test]
fn coherency_prints_and_writes_the_partition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = windcoh(&["coherency", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("13,10,11,12"));
    for f in ["manifest.json", "partition.json", "timings.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn report_reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = windcoh(&["report", "--farm", "66:650", "--out", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    for f in ["traj.csv", "pca.csv", "modes.csv", "ledger/l_eq.csv"] {
        assert!(ta.contains_key(f), "{f}");
    }
    assert_eq!(ta, tb);
}

#[test]
fn unknown_farm_bus_is_a_validation_error() {
    let o = windcoh(&["coherency", "--farm", "999:100"]);
    assert_eq!(code(&o), 2);
    let o = windcoh(&["validate", "--case", "/nonexistent/case.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    std::fs::write(&cfg, r#"{"name": "x", "gama": 1}"#).unwrap();
    let o = windcoh(&["coherency", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_power_flow_is_a_numerical_error() {
    let o = windcoh(&["coherency", "--farm", "37:5000"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_with_a_failing_point_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = windcoh(&["sweep", "--points", "66:650,37:5000", "--jobs", "2", "--out", out]);
    assert_eq!(code(&o), 4);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("bus66_gamma650/partition.json").exists());
}

#[test]
fn empty_sweep_succeeds() {
    let o = windcoh(&["sweep"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 1);
}

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_piezo"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("piezo-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

const STATIC: &str = "[potential]\nfamily = \"static\"\namplitude = 0.5\n[discretization]\nn_cut = 4\nk_mesh = 8\nt_mesh = 4\n";

#[test]
fn symmetry_subcommand_writes_a_passing_report() {
    let dir = scratch("sym");
    std::fs::write(dir.join("run.toml"), STATIC).unwrap();
    let out = dir.join("out");
    let status = bin()
        .args(["symmetry", "--config"])
        .arg(dir.join("run.toml"))
        .arg("--out")
        .arg(&out)
        .args(["--threads", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["analyses"].as_object().unwrap().keys().collect::<Vec<_>>(), ["symmetry"]);
    assert_eq!(report["pass"], true);
    assert!(out.join("timings.json").exists());
}

#[test]
fn bands_subcommand_writes_csv() {
    let dir = scratch("bands");
    std::fs::write(dir.join("run.toml"), STATIC).unwrap();
    let out = dir.join("out");
    let status = bin().arg("bands").arg("--config").arg(dir.join("run.toml")).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,k_0,E_0,E_1"));
    assert_eq!(lines.count(), 32);
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = scratch("bad");
    std::fs::write(dir.join("run.toml"), "[potential]\nfamily = \"nope\"\n").unwrap();
    let o = bin().arg("all").arg("--config").arg(dir.join("run.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("potential.family") && err.contains("sliding_cosine"), "{err}");
}

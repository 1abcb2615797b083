#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SAMPLE_CONFIG: &str = r#"[target]
kind = "gaussian"
b = 1.0

[dynamics]
variant = "corrected"

[ensemble]
J = 4
d = 1

[step]
dt = 0.01
n_steps = 200
seed = 7
record_every = 10

[output]
trajectory = "trajectory.csv"
summary = "summary.json"
kl_window = 10
"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ipsampler"))
}

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn regression_data() -> PathBuf {
    manifest_dir().join("tests/data/regression_n50_d2.csv")
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Drops `wall_time_s` so summaries compare byte for byte.
pub fn normalize_json(text: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).expect("valid JSON");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_time_s");
    }
    serde_json::to_string_pretty(&v).unwrap() + "\n"
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Artifacts produced by one golden run, as `(golden file name, contents)`.
pub type Artifacts = Vec<(&'static str, String)>;

pub fn golden_sample(dir: &Path) -> Artifacts {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SAMPLE_CONFIG).unwrap();
    let out = run(bin().arg("sample").arg("--config").arg(&cfg));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    vec![
        ("sample_trajectory.csv", read(&dir.join("trajectory.csv"))),
        ("sample_summary.json", normalize_json(&read(&dir.join("summary.json")))),
    ]
}

pub fn golden_bias_study(dir: &Path) -> Artifacts {
    let path = dir.join("bias.json");
    let out = run(bin()
        .args([
            "bias-study",
            "--J-list",
            "3,5",
            "--dt",
            "0.01",
            "--n-steps",
            "2000",
            "--record-every",
            "5",
            "--seed",
            "7",
            "--out",
        ])
        .arg(&path));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    vec![("bias_study.json", read(&path))]
}

pub fn golden_verify_divergence(dir: &Path) -> Artifacts {
    let path = dir.join("divergence.json");
    let out = run(bin()
        .args(["verify-divergence", "--cases", "1:2,1:4,2:6", "--trials", "3", "--out"])
        .arg(&path));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    vec![
        ("verify_divergence.json", read(&path)),
        ("verify_divergence.txt", String::from_utf8(out.stdout).unwrap()),
    ]
}

pub fn golden_regression_demo(dir: &Path) -> Artifacts {
    let path = dir.join("regression.json");
    let out = run(bin()
        .arg("regression-demo")
        .arg("--data")
        .arg(regression_data())
        .args([
            "--gamma",
            "0.5",
            "--sigma0",
            "10",
            "--J",
            "8",
            "--n-steps",
            "4000",
            "--out",
        ])
        .arg(&path));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    vec![("regression_demo.json", normalize_json(&read(&path)))]
}

pub type GoldenRun = (&'static str, fn(&Path) -> Artifacts);

pub const GOLDEN_RUNS: [GoldenRun; 4] = [
    ("sample", golden_sample),
    ("bias-study", golden_bias_study),
    ("verify-divergence", golden_verify_divergence),
    ("regression-demo", golden_regression_demo),
];

/// Runs a command twice in fresh directories and compares both runs with each
/// other and with the stored golden files. Setting `IPSAMPLER_BLESS=1`
/// rewrites the golden files instead.
pub fn check_golden(run: fn(&Path) -> Artifacts) -> Result<(), String> {
    let first = run(tempfile::tempdir().unwrap().path());
    let second = run(tempfile::tempdir().unwrap().path());
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        if a != b {
            return Err(format!("{name}: two identical invocations differ"));
        }
    }
    let bless = std::env::var_os("IPSAMPLER_BLESS").is_some();
    for (name, text) in &first {
        let path = golden_dir().join(name);
        if bless {
            std::fs::write(&path, text).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if &expected != text {
            return Err(format!("{name}: output differs from golden file"));
        }
    }
    Ok(())
}

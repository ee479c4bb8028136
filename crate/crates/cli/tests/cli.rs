use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lacmas_core::config::ExperimentConfig;

fn lacmas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lacmas"))
        .args(args)
        .env_remove("LACMAS_LLM_URL")
        .env_remove("LACMAS_LLM_MODEL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_with(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_one_trace_per_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lacmas(&[
        "run", "--suite", "sphere", "--seeds", "3", "--variant", "full", "--max-iterations", "300", "--output-dir", out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = files_with(dir.path(), ".csv");
    assert_eq!(csv.len(), 3, "{csv:?}");
    for (seed, path) in csv.iter().enumerate() {
        assert!(path.ends_with(format!("sphere_full_seed{seed}.csv")));
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "iteration,global_fitness_mean_state,disagreement,comm_cost,stage,gate_int,gate_ext"
        );
        assert_eq!(text.lines().count(), 302);
    }
    let summaries = files_with(dir.path(), ".json");
    assert_eq!(summaries.len(), 1);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summaries[0]).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 0);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    assert_eq!(summary["runs"][2]["summary"]["master_seed"], 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = lacmas(&[
            "run", "--suite", "ackley", "--seeds", "2", "--master-seed", "9", "--max-iterations", "200",
            "--output-dir", d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = files_with(a.path(), ".csv");
    let fb = files_with(b.path(), ".csv");
    assert_eq!(fa.len(), 2);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn baseline_ignores_llm_provider_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacmas(&[
        "run", "--variant", "baseline", "--provider", "llm", "--suite", "sphere", "--seeds", "1",
        "--max-iterations", "50", "--output-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    assert!(stderr(&o).contains("ignoring provider"));
}

#[test]
fn unreachable_llm_falls_back_and_completes() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lacmas"))
        .args([
            "run", "--provider", "llm", "--suite", "sphere", "--seeds", "1", "--horizon", "40", "--max-iterations", "60",
            "--output-dir", dir.path().to_str().unwrap(),
        ])
        .env("LACMAS_LLM_URL", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = &files_with(dir.path(), ".json")[0];
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    let s = &v["runs"][0]["summary"];
    assert!(s["fallbacks"].as_u64().unwrap() > 0);
    assert_eq!(s["fallbacks"], s["act_calls"].as_u64().unwrap() + s["coop_calls"].as_u64().unwrap());
}

#[test]
fn suite_table_has_four_rows_per_function() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacmas(&[
        "suite", "--suite", "sphere,rastrigin", "--variants", "baseline,coop,act,full", "--seeds", "2",
        "--max-iterations", "150", "--log-every", "50", "--output-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("ablation_seed0.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("function,variant,master_seed,runs,"));
    assert_eq!(lines.len(), 1 + 8);
    for (f, chunk) in ["sphere", "rastrigin"].iter().zip(lines[1..].chunks(4)) {
        let variants: Vec<&str> = chunk.iter().map(|l| l.split(',').nth(1).unwrap()).collect();
        assert!(chunk.iter().all(|l| l.starts_with(&format!("{f},"))));
        assert_eq!(variants, ["baseline", "coop-only", "act-only", "full"]);
    }
}

#[test]
fn wsn_writes_error_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacmas(&[
        "wsn", "-n", "8", "--targets", "2", "--noise", "0.5", "--master-seed", "3", "--max-iterations", "100",
        "--output-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("wsn_nt2_full_seed3.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,err,disagreement"));
    let errs: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 101);
    assert!(errs.iter().all(|e| e.is_finite() && *e >= 0.0));
    assert!(stdout(&o).contains("mean final Err"));
}

#[test]
fn calibrate_prints_positive_horizon() {
    let o = lacmas(&["calibrate", "--function", "sphere"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: usize = stdout(&o).trim().parse().expect("integer horizon");
    assert!(t > 0);
}

#[test]
fn verify_accepts_recorded_run_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacmas(&[
        "run", "--suite", "sphere", "--seeds", "1", "--max-iterations", "200", "--record-matrices", "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = dir.path().join("sphere_full_seed0_matrices.json");
    let v = lacmas(&["verify", log.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", stderr(&v));
    assert!(stdout(&v).contains("admissible: true"));

    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&log).unwrap()).unwrap();
    json["matrices"][0]["rows"][0][0] = serde_json::json!(-0.5);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, json.to_string()).unwrap();
    let v = lacmas(&["verify", bad.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(3));
    assert!(stdout(&v).contains("admissible: false"));
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run.pcg]\nhorizon = 100\nrho_extt = 0.2\n").unwrap();
    let o = lacmas(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rho_extt"), "{}", stderr(&o));

    let o = lacmas(&["run", "--suite", "no-such-function"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lacmas(&["run", "--max-iterations", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lacmas(&["run", "--not-a-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_fault() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "").unwrap();
    let o = lacmas(&[
        "run", "--suite", "sphere", "--seeds", "1", "--max-iterations", "10", "--output-dir", file.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!(
            "output_dir = {:?}\n[run]\nvariant = \"coop-only\"\nnum_runs = 1\nmax_iterations = 30\n[suite]\nfunctions = [\"griewank\"]\n",
            dir.path().join("from_file")
        ),
    )
    .unwrap();
    let o = lacmas(&["run", "--config", cfg.to_str().unwrap(), "--master-seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from_file/griewank_coop-only_seed5.csv").exists());
    let o = lacmas(&["run", "--config", cfg.to_str().unwrap(), "--variant", "act-only"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from_file/griewank_act-only_seed0.csv").exists());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = ExperimentConfig::load(&root.join("default.toml")).unwrap();
    assert_eq!(default, ExperimentConfig::default());
    for name in ["wsn.toml", "ablation.toml"] {
        ExperimentConfig::load(&root.join(name)).unwrap();
    }
}

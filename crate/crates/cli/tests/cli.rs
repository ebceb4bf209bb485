use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rampflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rampflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

/// Value of a `key = value` line.
fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn discharge_at_cruise_speed_has_no_discount() {
    let o = rampflow(&["discharge", "--v-merge-kmh", "105", "--samples", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "theta"), 0.0);
    assert!(out.contains("x_m,mu_eff_vph"));
}

#[test]
fn discharge_from_aggregates() {
    let f = fixture("ngsim_dataset1.json");
    let o = rampflow(&["discharge", "--aggregates", f.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mu = field(&stdout(&o), "mu_eff_vph");
    assert!((1162.0..=1186.0).contains(&mu), "{mu}");
}

#[test]
fn profile_file_has_header_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("profile.csv");
    let o = rampflow(&[
        "discharge",
        "--samples",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("x_m,mu_eff_vph\n"));
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("profile.csv.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["master_seed"], 42);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["tool_version"].is_string());
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"b_max_mps2": 0}"#).unwrap();
    let o = rampflow(&["discharge", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("b_max_mps2"), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"aux_lenght_m": 120}"#).unwrap();
    let o = rampflow(&["optimize", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("aux_lenght_m"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"v_merge_kmh": 40}"#).unwrap();
    let o = rampflow(&[
        "discharge",
        "--config",
        cfg.to_str().unwrap(),
        "--v-merge-kmh",
        "105",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "theta"), 0.0);
}

#[test]
fn over_saturation_exits_with_two() {
    let o = rampflow(&["discharge", "--ramp-ratio", "0.6", "--v-merge-kmh", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("over-saturated"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one_and_help_with_zero() {
    assert_eq!(rampflow(&["nonsense"]).status.code(), Some(1));
    assert_eq!(
        rampflow(&["sweep", "--param", "demand"]).status.code(),
        Some(1)
    );
    assert_eq!(rampflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn calibrate_aggregates_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let f = fixture("ngsim_dataset1.json");
    let o = rampflow(&[
        "calibrate",
        "--aggregates",
        f.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let ape = r["ape_mu_eff"].as_f64().unwrap();
    assert!((ape - 4.8).abs() <= 0.7, "{ape}");
    assert!(dir.path().join("report.json.meta.json").exists());
}

#[test]
fn calibrate_dataset2_matches_library() {
    let f = fixture("ngsim_dataset2.json");
    let o = rampflow(&["calibrate", "--aggregates", f.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let agg = rampflow_core::calibration::Aggregates::load(&f).unwrap();
    let lib = rampflow_core::calibration::validate_discharge(&agg).unwrap();
    assert_eq!(r["ape_mu_eff"].as_f64(), lib.ape_mu_eff);
    assert_eq!(r["mu_eff"].as_f64(), lib.mu_eff);
}

#[test]
fn calibrate_missing_file_fails() {
    let o = rampflow(&["calibrate", "--trajectories", "/definitely/not/here.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let o = rampflow(&["calibrate", "--aggregates", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn calibrate_trajectories_round_trip() {
    use rampflow_core::calibration::{write_trajectories, TrajectoryRecord};
    // a stop wave moving upstream at 5 m/s through a jam at 8 m spacing
    let mut recs = Vec::new();
    for i in 0..12u64 {
        let x = 400.0 - 8.0 * i as f64;
        let t_stop = 10.0 + (400.0 - x) / 5.0;
        let mut t = 0.0;
        while t <= 80.0 {
            let (v, pos) = if t < t_stop {
                (12.0, x - 12.0 * (t_stop - t))
            } else {
                (0.0, x)
            };
            recs.push(TrajectoryRecord {
                vehicle_id: i,
                t,
                x: pos,
                lane: 1,
                v,
                length: 5.0,
            });
            t += 0.5;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    write_trajectories(std::fs::File::create(&path).unwrap(), &recs).unwrap();
    let o = rampflow(&["calibrate", "--trajectories", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let w = r["w_est"].as_f64().unwrap();
    assert!((w - 5.0).abs() < 0.1, "{w}");
    assert!((r["k_j_est"].as_f64().unwrap() - 0.125).abs() < 1e-9);
}

#[test]
fn optimize_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = rampflow(&[
            "optimize",
            "--runs",
            "6",
            "--seed",
            "9",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "runs.csv",
        "runs.csv.meta.json",
        "summary.json",
        "summary.json.meta.json",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let runs = std::fs::read_to_string(a.join("runs.csv")).unwrap();
    assert!(runs.starts_with("run_id,policy,t_M,x_M,v_M,delay,delay_at_mu,risk,weighted_cost,"));
    assert_eq!(runs.lines().count(), 1 + 3 * 6);
}

#[test]
fn optimize_single_policy_and_zero_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampflow(&[
        "optimize",
        "--runs",
        "3",
        "--policy",
        "late",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
    assert!(runs
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("late")));

    let o = rampflow(&[
        "optimize",
        "--runs",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("runs"));
}

fn sweep_rows(param: &str, from: &str, to: &str, step: &str) -> Vec<Vec<String>> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = rampflow(&[
        "sweep",
        "--param",
        param,
        "--from",
        from,
        "--to",
        to,
        "--step",
        step,
        "--runs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("sweep.csv.meta.json").exists());
    let text = std::fs::read_to_string(&out).unwrap();
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn sweep_grids_have_expected_shape() {
    for (param, from, to, step, n) in [
        ("demand", "1200", "2200", "100", 11),
        ("aux-length", "100", "200", "10", 11),
        ("ramp-ratio", "5", "20", "5", 4),
    ] {
        let rows = sweep_rows(param, from, to, step);
        assert_eq!(rows.len(), n + 1, "{param}");
        let reductions = rows[0]
            .iter()
            .filter(|h| h.starts_with("reduction_"))
            .count();
        assert_eq!(reductions, 6, "{param}: {:?}", rows[0]);
        assert!(rows.iter().all(|r| r.len() == rows[0].len()));
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
        .args(args)
        .env_remove("MFG_SOLVER__TOL_W")
        .output()
        .expect("run mfg")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfg-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const UNCOUPLED: &str = r#"
[model]
template = "uncoupled"
params = { atoms = 4 }

[grid]
steps = 32

[nplayer]
n_list = [2, 4]
seeds = [1]
"#;

fn solved_uncoupled(name: &str) -> (PathBuf, String, String) {
    let dir = scratch(name);
    let cfg = write_config(&dir, UNCOUPLED);
    let out = dir.join("result").to_string_lossy().into_owned();
    let o = mfg(&["solve", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    (dir, cfg, out)
}

fn diagnostics(out: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(Path::new(out).join("diagnostics.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn uncoupled_solve_converges() {
    let (_, _, out) = solved_uncoupled("solve");
    let d = diagnostics(&out);
    assert!(d["converged"].as_bool().unwrap());
    assert!(d["residual"].as_f64().unwrap() <= d["solver"]["tol_w"].as_f64().unwrap());
    for f in ["flow.json", "flow.csv", "value.csv", "bundle.csv"] {
        assert!(Path::new(&out).join(f).exists(), "{f} missing");
    }
}

#[test]
fn negative_tolerance_is_a_config_error() {
    let dir = scratch("badtol");
    let cfg = write_config(&dir, &format!("{UNCOUPLED}\n[solver]\ntol_w = -1.0\n"));
    let o = mfg(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver.tol_w"));
}

#[test]
fn syntax_errors_report_the_line() {
    let dir = scratch("syntax");
    let cfg = write_config(&dir, "[model]\ntemplate = \"lq1d\"\n[grid]\nsteps = = 3\n");
    let o = mfg(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

#[test]
fn environment_overrides_reach_the_solver() {
    let (_, cfg, _) = solved_uncoupled("env");
    let out = scratch("env-out").join("r").to_string_lossy().into_owned();
    let o = Command::new(env!("CARGO_BIN_EXE_mfg"))
        .args(["solve", &cfg, "--out", &out])
        .env("MFG_SOLVER__MAX_ITER", "7")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(diagnostics(&out)["solver"]["max_iter"].as_u64(), Some(7));
}

#[test]
fn check_passes_on_fresh_result_and_has_every_section() {
    let (_, cfg, out) = solved_uncoupled("check");
    let o = mfg(&["check", &cfg, &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = std::fs::read_to_string(Path::new(&out).join("check.json")).unwrap();
    let r: serde_json::Value = serde_json::from_str(&text).unwrap();
    for s in ["terminal", "viability", "upper_hadamard", "lower_hadamard", "bellman", "equilibrium"] {
        assert!(r[s]["defect"].is_number(), "section {s} missing");
    }
}

#[test]
fn tampered_terminal_value_fails_the_check() {
    let (_, cfg, out) = solved_uncoupled("tamper");
    let path = Path::new(&out).join("value.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let last = lines.last_mut().unwrap();
    let (head, v) = last.rsplit_once(',').unwrap();
    *last = format!("{head},{}", v.parse::<f64>().unwrap() + 0.5);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = mfg(&["check", &cfg, &out]);
    assert_eq!(o.status.code(), Some(2));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("check.json")).unwrap()).unwrap();
    assert!(r["terminal"]["defect"].as_f64().unwrap() >= 0.5 - 1e-12);
    assert_eq!(r["terminal"]["pass"].as_bool(), Some(false));
}

#[test]
fn corrupt_result_is_an_error() {
    let (_, cfg, out) = solved_uncoupled("corrupt");
    std::fs::write(Path::new(&out).join("flow.json"), "{\"grid\":").unwrap();
    assert_eq!(mfg(&["check", &cfg, &out]).status.code(), Some(1));
    assert_eq!(mfg(&["check", &cfg, "/nonexistent/result"]).status.code(), Some(1));
}

#[test]
fn uncoupled_nash_gap() {
    let (_, cfg, out) = solved_uncoupled("nash");
    let o = mfg(&["nash-gap", &cfg, &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(Path::new(&out).join("nash_gap.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("N,seed,w_emp,d_max,gain,bound,converged"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    // With one player per atom the sites are the atoms, the bound is zero
    // and the equilibrium controls are best responses up to the DP error.
    assert_eq!(rows[1][0], "4");
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 0.0);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("nash_gap.json")).unwrap()).unwrap();
    let slack = m["slack"].as_f64().unwrap();
    assert!(rows[1][4].parse::<f64>().unwrap() <= slack, "{csv}");
}

#[test]
fn seed_flag_selects_a_single_seed() {
    let (_, cfg, out) = solved_uncoupled("seed");
    let o = mfg(&["nash-gap", &cfg, &out, "--seed", "17"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(Path::new(&out).join("nash_gap.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("17")));
}

#[test]
fn w1_between_files() {
    let dir = scratch("w1");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    std::fs::write(&a, "x1,weight\n0,0.5\n1,0.5\n").unwrap();
    std::fs::write(&b, "x1,weight\n0.25,1\n").unwrap();
    let o = mfg(&["w1", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let d: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!((d - 0.5).abs() < 1e-15);
    std::fs::write(&b, "x1,weight\n0.25,0.5\n").unwrap();
    assert_eq!(mfg(&["w1", a.to_str().unwrap(), b.to_str().unwrap()]).status.code(), Some(1));
}

const LQ1D: &str = r#"
[model]
template = "lq1d"
params = { c = 0.1 }

[nplayer]
n_list = [8, 32, 128]
seeds = [1, 2]
"#;

#[test]
fn lq1d_pipeline_is_deterministic_and_gaps_shrink() {
    let dir = scratch("lq1d");
    let cfg = write_config(&dir, LQ1D);
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|r| {
            let out = dir.join(r).to_string_lossy().into_owned();
            let o = mfg(&["--threads", "2", "solve", &cfg, "--out", &out]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for f in ["flow.csv", "value.csv", "bundle.csv", "flow.json"] {
        let a = std::fs::read(Path::new(&runs[0]).join(f)).unwrap();
        let b = std::fs::read(Path::new(&runs[1]).join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    assert_eq!(mfg(&["check", &cfg, &runs[0]]).status.code(), Some(0));
    let o = mfg(&["nash-gap", &cfg, &runs[0]]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(Path::new(&runs[0]).join("nash_gap.csv")).unwrap();
    for seed in ["1", "2"] {
        let gains: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|r| r[1] == seed)
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(gains.len(), 3);
        assert!(gains.windows(2).all(|w| w[1] <= w[0]), "{gains:?}");
    }
}

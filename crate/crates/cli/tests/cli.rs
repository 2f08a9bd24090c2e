use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn poolparty(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolparty"))
        .args(args)
        .env_remove("POOLPARTY_SEED")
        .output()
        .expect("binary runs")
}

fn run_scenario(dir: &Path, name: &str, text: &str, extra: &[&str]) -> (Output, String, String) {
    let scenario = dir.join(format!("{name}.txt"));
    let csv = dir.join(format!("{name}.csv"));
    let json = dir.join(format!("{name}.json"));
    fs::write(&scenario, text).unwrap();
    let mut args = vec![
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--summary",
        json.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = poolparty(&args);
    let csv = fs::read_to_string(&csv).unwrap_or_default();
    let json = fs::read_to_string(&json).unwrap_or_default();
    (out, csv, json)
}

#[test]
fn chrome_rows_match_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, json) = run_scenario(dir.path(), "chrome", "preset=chrome-ws\ntrials=3\n", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "trial,success,setup_s,send_s,total_s,bits_correct,failure_kind"
    );
    assert_eq!(
        &lines[1..],
        [
            "0,1,0.100,0.500,0.600,35,None",
            "1,1,0.100,0.500,0.600,35,None",
            "2,1,0.100,0.500,0.600,35,None"
        ]
    );
    let summary: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(summary["success_rate"], 1.0);
    assert_eq!(summary["trials"], 3);
}

#[test]
fn partition_rows_are_channel_dead() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, _) = run_scenario(
        dir.path(),
        "part",
        "preset=chrome-ws\ndefense=partition_site\ntrials=4\n",
        &[],
    );
    assert!(out.status.success());
    for row in csv.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "0");
        assert_eq!(cols[6], "ChannelDead");
    }
}

#[test]
fn summary_agrees_with_csv_and_rows_match_trials() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset=firefox-ws\ntrials=40\nnoise_tabs=10\nnoise_rate_hz=1.0\n";
    let (out, csv, json) = run_scenario(dir.path(), "noisy", text, &[]);
    assert!(out.status.success());
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    let ok = rows.iter().filter(|r| r.split(',').nth(1) == Some("1")).count();
    let summary: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(summary["success_rate"].as_f64().unwrap(), ok as f64 / 40.0);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset=firefox-ws\ntrials=25\ndrift_prob=0.05\nnoise_tabs=10\nnoise_rate_hz=0.5\n";
    let (_, a, _) = run_scenario(dir.path(), "a", text, &[]);
    let (_, b, _) = run_scenario(dir.path(), "b", text, &[]);
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset=firefox-ws\ntrials=20\ndrift_prob=0.1\n";
    let (_, base, _) = run_scenario(dir.path(), "base", text, &["--seed", "5"]);
    let (_, flag, _) = run_scenario(dir.path(), "flag", &format!("{text}seed=9\n"), &["--seed", "5"]);
    assert_eq!(base, flag, "--seed beats the file");

    let scenario = dir.path().join("env.txt");
    fs::write(&scenario, text).unwrap();
    let csv = dir.path().join("env.csv");
    let json = dir.path().join("env.json");
    let out = Command::new(env!("CARGO_BIN_EXE_poolparty"))
        .args([
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
        ])
        .args(["--summary", json.to_str().unwrap()])
        .env("POOLPARTY_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(csv).unwrap(),
        base,
        "environment seed applies when nothing else does"
    );
}

#[test]
fn validation_and_io_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _, _) = run_scenario(dir.path(), "bad", "pool_size=6\npkt_size=5\n", &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let (out, _, _) = run_scenario(dir.path(), "typo", "preset=chrome-ws\npool_szie=3\n", &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = poolparty(&[
        "run",
        "--scenario",
        "/nonexistent/x.txt",
        "--out",
        "/tmp/x.csv",
        "--summary",
        "/tmp/x.json",
    ]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn presets_listing() {
    let out = poolparty(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (name, size, scope) in [
        ("chrome-ws", "255", "Profile"),
        ("firefox-ww", "512", "Profile"),
        ("brave-sse", "1350", "Profile"),
    ] {
        let row = text.lines().find(|l| l.starts_with(name)).unwrap();
        assert!(row.contains(size) && row.contains(scope), "{row}");
    }
}

#[test]
fn sweep_defenses_and_calibrate() {
    let out = poolparty(&[
        "sweep",
        "--preset",
        "chrome-ws",
        "--trials",
        "10",
        "--param",
        "pulse_interval",
        "--values",
        "0.1,0.3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("0.1,1.0000"));

    let out = poolparty(&["sweep", "--preset", "chrome-ws", "--param", "moon", "--values", "1"]);
    assert!(!out.status.success());

    let out = poolparty(&["defenses", "--preset", "chrome-ws", "--trials", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text
        .lines()
        .any(|l| l.starts_with("partition_site") && l.contains(" 0.00 ")));

    let out = poolparty(&[
        "calibrate",
        "--preset",
        "firefox-ws",
        "--trials",
        "200",
        "--target",
        "0.71",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let p: f64 = text
        .lines()
        .next()
        .unwrap()
        .strip_prefix("drift_prob=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(p > 0.0 && p < 1.0);
}

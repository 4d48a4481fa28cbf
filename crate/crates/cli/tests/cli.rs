//! End-to-end checks of the `qfc` binary: exit codes, determinism, and the
//! consistency contracts between the backtest report files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn qfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two constant forecasters around a constant truth: every delivery reports
/// the same quantiles, so SQRA's shift anchors cleanly at zero.
fn constant_scenario(dir: &Path, deliveries: usize) -> (PathBuf, PathBuf) {
    let mut fc = String::from("model,delivery_date,region,value_type,target_date,quantile,value\n");
    let day = |offset: usize| {
        chrono::NaiveDate::from_ymd_opt(2020, 7, 1).unwrap() + chrono::Days::new(offset as u64)
    };
    for d in 0..deliveries {
        for t in d..d + 14 {
            for (model, values) in [("low", [85.0, 90.0, 95.0]), ("high", [105.0, 110.0, 115.0])] {
                for (level, value) in [0.25, 0.5, 0.75].iter().zip(values) {
                    fc.push_str(&format!(
                        "{model},{},Testshire,cases,{},{level},{value}\n",
                        day(d),
                        day(t),
                    ));
                }
            }
        }
    }
    let mut obs = String::from("region,value_type,date,value\n");
    for t in 0..deliveries {
        obs.push_str(&format!("Testshire,cases,{},100\n", day(t)));
    }
    let fc_path = dir.join("forecasts.csv");
    let obs_path = dir.join("observations.csv");
    fs::write(&fc_path, fc).unwrap();
    fs::write(&obs_path, obs).unwrap();
    (fc_path, obs_path)
}

fn synth_demo(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let fc = dir.join(format!("fc{seed}.csv"));
    let obs = dir.join(format!("obs{seed}.csv"));
    let out = qfc(&[
        "synth",
        "--seed",
        seed,
        "--out-forecasts",
        path(&fc),
        "--out-observations",
        path(&obs),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (fc, obs)
}

#[test]
fn missing_input_file_exits_one() {
    let out = qfc(&[
        "score",
        "--forecasts",
        "/nonexistent/forecasts.csv",
        "--observations",
        "/nonexistent/observations.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
    assert!(stderr.contains("/nonexistent/forecasts.csv"));
}

#[test]
fn unknown_method_exits_two() {
    let dir = TempDir::new().unwrap();
    let (fc, obs) = constant_scenario(dir.path(), 3);
    let out = qfc(&[
        "combine",
        "--forecasts",
        path(&fc),
        "--observations",
        path(&obs),
        "--method",
        "nonsense",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_row_exits_one_with_location() {
    let dir = TempDir::new().unwrap();
    let fc = dir.path().join("bad.csv");
    fs::write(
        &fc,
        "model,delivery_date,region,value_type,target_date,quantile,value\n\
         m1,2020-07-01,Testshire,cases,2020-07-01,1.5,10\n",
    )
    .unwrap();
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, "region,value_type,date,value\n").unwrap();
    let out = qfc(&[
        "score",
        "--forecasts",
        path(&fc),
        "--observations",
        path(&obs),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn combine_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let (fc, obs) = synth_demo(dir.path(), "5");
    let run = |out_name: &str| {
        let out_path = dir.path().join(out_name);
        let out = qfc(&[
            "combine",
            "--forecasts",
            path(&fc),
            "--observations",
            path(&obs),
            "--method",
            "stacked-ti",
            "--seed",
            "9",
            "--out",
            path(&out_path),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(&out_path).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn sqra_matches_qra_when_shifts_are_zero() {
    let dir = TempDir::new().unwrap();
    // 26 daily deliveries: a full 20-day window before t0, and the current
    // delivery repeats its predecessors, so every shift is exactly zero.
    let (fc, obs) = constant_scenario(dir.path(), 26);
    let run = |method: &str, params: Option<&Path>| {
        let out_path = dir.path().join(format!("{method}.csv"));
        let mut args = vec![
            "combine".to_string(),
            format!("--forecasts={}", fc.display()),
            format!("--observations={}", obs.display()),
            format!("--method={method}"),
            "--label=fused".to_string(),
            format!("--out={}", out_path.display()),
        ];
        if let Some(p) = params {
            args.push(format!("--params={}", p.display()));
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = qfc(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(&out_path).unwrap()
    };

    let sidecar = dir.path().join("sqra.json");
    let qra_csv = run("qra", None);
    let sqra_csv = run("sqra", Some(&sidecar));
    assert_eq!(qra_csv, sqra_csv, "zero-shift SQRA must reproduce QRA bytes");

    let params: serde_json::Value =
        serde_json::from_slice(&fs::read(&sidecar).unwrap()).unwrap();
    assert_eq!(params["method"], "sqra");
    let series = params["parameters"].as_object().unwrap();
    assert!(!series.is_empty());
    for fitted in series.values() {
        let shifts = fitted["shifts"].as_object().unwrap();
        assert_eq!(shifts.len(), 2);
        for shift in shifts.values() {
            assert_eq!(shift["delta"], 0.0);
            assert_eq!(shift["anchor"], "at-start");
        }
    }
}

#[test]
fn incomplete_windows_suggest_the_fallback() {
    let dir = TempDir::new().unwrap();
    // Only 3 deliveries: nobody has 20 training days behind t0.
    let (fc, obs) = constant_scenario(dir.path(), 3);
    let run = |method: &str, relax: bool| {
        let mut args = vec![
            "combine",
            "--forecasts",
            path(&fc),
            "--observations",
            path(&obs),
            "--method",
            method,
        ];
        if relax {
            args.push("--include-incomplete");
        }
        qfc(&args)
    };

    let out = run("qra", false);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stacked-equal"), "stderr was: {stderr}");

    // Regression still needs complete windows even when short ones are
    // admitted; stacking can run on whatever history exists.
    let out = run("qra", true);
    assert_eq!(out.status.code(), Some(1));
    let out = run("stacked-ti", true);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn score_reports_one_row_per_matched_pair() {
    let dir = TempDir::new().unwrap();
    let fc = dir.path().join("fc.csv");
    // Two deliveries of a 2-day horizon; observations stop at day 1, so
    // the day-2 target of the second delivery goes unmatched.
    let mut text =
        String::from("model,delivery_date,region,value_type,target_date,quantile,value\n");
    for (delivery, target, base) in [
        ("2020-07-01", "2020-07-01", 10.0),
        ("2020-07-01", "2020-07-02", 11.0),
        ("2020-07-02", "2020-07-02", 12.0),
        ("2020-07-02", "2020-07-03", 13.0),
    ] {
        for (i, level) in [0.05, 0.25, 0.5, 0.75, 0.95].iter().enumerate() {
            text.push_str(&format!(
                "m1,{delivery},Testshire,cases,{target},{level},{}\n",
                base + i as f64
            ));
        }
    }
    fs::write(&fc, text).unwrap();
    let obs = dir.path().join("obs.csv");
    fs::write(
        &obs,
        "region,value_type,date,value\n\
         Testshire,cases,2020-07-01,10\n\
         Testshire,cases,2020-07-02,12\n",
    )
    .unwrap();
    let report = dir.path().join("report.csv");
    let out = qfc(&[
        "score",
        "--forecasts",
        path(&fc),
        "--observations",
        path(&obs),
        "--out",
        path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 3, "header plus three matched pairs: {text}");
    assert!(lines[0].starts_with("model,region,value_type,delivery_date,target_date"));
}

#[test]
fn empty_forecast_file_gives_header_only_report() {
    let dir = TempDir::new().unwrap();
    let fc = dir.path().join("fc.csv");
    fs::write(
        &fc,
        "model,delivery_date,region,value_type,target_date,quantile,value\n",
    )
    .unwrap();
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, "region,value_type,date,value\nTestshire,cases,2020-07-01,5\n").unwrap();
    let report = dir.path().join("report.csv");
    let out = qfc(&[
        "score",
        "--forecasts",
        path(&fc),
        "--observations",
        path(&obs),
        "--out",
        path(&report),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 1, "expected only the header: {text}");
}

#[test]
fn backtest_reports_agree_with_each_other() {
    let dir = TempDir::new().unwrap();
    // Two regions sharing a value type, so aggregate.csv really averages.
    let mut forecasts = String::new();
    let mut observations = String::new();
    for (region, seed) in [("North", "5"), ("South", "6")] {
        let config = dir.path().join(format!("{region}.json"));
        fs::write(
            &config,
            format!(
                r#"{{
                  "region": "{region}",
                  "value_type": "hospital_inc",
                  "start": "2020-07-01",
                  "days": 60,
                  "horizon": 14,
                  "truth": {{"kind": "logistic-wave", "peak": 600, "growth_rate": 0.08,
                             "midpoint": 30, "width": 40, "noise_sd": 6}},
                  "archetypes": [
                    {{"name": "steady", "spread": 30}},
                    {{"name": "optimist", "bias": -40, "spread": 45}}
                  ]
                }}"#
            ),
        )
        .unwrap();
        let fc = dir.path().join(format!("fc-{region}.csv"));
        let obs = dir.path().join(format!("obs-{region}.csv"));
        let out = qfc(&[
            "synth",
            "--config",
            path(&config),
            "--seed",
            seed,
            "--out-forecasts",
            path(&fc),
            "--out-observations",
            path(&obs),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        append_csv(&mut forecasts, &fc);
        append_csv(&mut observations, &obs);
    }
    let fc = dir.path().join("fc.csv");
    let obs = dir.path().join("obs.csv");
    fs::write(&fc, forecasts).unwrap();
    fs::write(&obs, observations).unwrap();

    let out_dir = dir.path().join("bt");
    let out = qfc(&[
        "backtest",
        "--forecasts",
        path(&fc),
        "--observations",
        path(&obs),
        "--methods",
        "stacked-equal,stacked-ti",
        "--every",
        "14",
        "--out-dir",
        path(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // combined.csv never forecasts the past.
    let combined = fs::read_to_string(out_dir.join("combined.csv")).unwrap();
    for line in combined.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(
            cols[4] >= cols[1],
            "target {} before delivery {}",
            cols[4],
            cols[1]
        );
    }

    // aggregate.csv rows are the means of the series_metrics.csv rows.
    let series = fs::read_to_string(out_dir.join("series_metrics.csv")).unwrap();
    let mut sums: std::collections::BTreeMap<(String, String), (f64, f64, f64)> =
        std::collections::BTreeMap::new();
    for line in series.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let entry = sums
            .entry((cols[1].to_string(), cols[2].to_string()))
            .or_default();
        entry.0 += cols[8].parse::<f64>().unwrap();
        entry.1 += cols[9].parse::<f64>().unwrap();
        entry.2 += 1.0;
    }
    let aggregate = fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    let mut aggregate_rows = 0;
    for line in aggregate.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (d_sum, i_sum, n) = sums[&(cols[0].to_string(), cols[1].to_string())];
        assert_eq!(n, 2.0, "one row per region should feed each mean");
        assert!((cols[2].parse::<f64>().unwrap() - d_sum / n).abs() < 1e-9);
        assert!((cols[3].parse::<f64>().unwrap() - i_sum / n).abs() < 1e-9);
        aggregate_rows += 1;
    }
    assert_eq!(aggregate_rows, 2, "one aggregate row per (value type, method)");

    // Every series gets a leaderboard naming its best method.
    let boards: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("leaderboards.json")).unwrap()).unwrap();
    let boards = boards.as_array().unwrap();
    assert_eq!(boards.len(), 2);
    for board in boards {
        assert!(board["best"].is_string());
        assert_eq!(board["entries"].as_array().unwrap().len(), 2);
    }
}

fn append_csv(buffer: &mut String, file: &Path) {
    let text = fs::read_to_string(file).unwrap();
    if buffer.is_empty() {
        buffer.push_str(&text);
    } else {
        let body = text.splitn(2, '\n').nth(1).unwrap_or("");
        buffer.push_str(body);
    }
}

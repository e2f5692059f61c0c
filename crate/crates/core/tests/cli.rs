use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drmech(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drmech")).args(args).output().expect("spawn drmech")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sample_users_then_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let users = dir.path().join("users.csv");
    let alloc = dir.path().join("alloc.csv");
    let out = drmech(&["sample-users", "--n", "40", "--k", "10", "--seed", "11", "--out", path(&users)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&users).unwrap().lines().count(), 41);

    let out = drmech(&["mechanism", "--users", path(&users), "--m", "1.0", "--out", path(&alloc)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&alloc).unwrap();
    assert!(text.starts_with("# M=1 q=5 "));
    assert_eq!(text.lines().count(), 42);

    let out = drmech(&["mechanism", "--users", path(&users), "--m", "1.0", "--omniscient"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 42);
}

#[test]
fn infeasible_target_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let users = dir.path().join("users.csv");
    assert!(drmech(&["sample-users", "--n", "10", "--out", path(&users)]).status.success());
    let out = drmech(&["mechanism", "--users", path(&users), "--m", "1e6"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));

    let out = drmech(&["scenario", "--n", "20", "--m-grid", "1000:2000:3", "--mc-reps", "10"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_config_exits_2() {
    assert_eq!(drmech(&["scenario", "--m-grid", "0:10"]).status.code(), Some(2));
    assert_eq!(drmech(&["scenario", "--mode", "bogus"]).status.code(), Some(2));
    assert_eq!(drmech(&["sample-users", "--n", "2"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_3() {
    let out = drmech(&["mechanism", "--users", "/nonexistent/users.csv", "--m", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn scenario_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["compare", "decompose", "payments"] {
        for format in ["csv", "json"] {
            let run = |name: &str| {
                let p = dir.path().join(format!("{mode}-{name}.{format}"));
                let out = drmech(&[
                    "scenario", "--n", "60", "--m-grid", "0:6:4", "--k-set", "5,20", "--mc-reps", "20",
                    "--seed", "99", "--mode", mode, "--format", format, "--out", path(&p),
                ]);
                assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
                fs::read(&p).unwrap()
            };
            let (a, b) = (run("a"), run("b"));
            assert!(!a.is_empty());
            assert_eq!(a, b, "{mode}/{format} differs between runs");
        }
    }
}

#[test]
fn fit_and_baseline_on_meter_csv() {
    let dir = tempfile::tempdir().unwrap();
    let meter = dir.path().join("meter.csv");
    let mut csv = String::from("user_id,timestamp,kwh,dr_event\n");
    let mut day = chrono::NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
    for d in 0..60 {
        for h in 0..24 {
            let kwh = 0.3 + 0.1 * ((d * 7 + h * 3) % 11) as f64 + 0.02 * (d % 5) as f64;
            csv.push_str(&format!("u1,{}T{h:02},{kwh},0\n", day.format("%Y-%m-%d")));
        }
        day = day.succ_opt().unwrap();
    }
    fs::write(&meter, csv).unwrap();

    let out = drmech(&["fit", "--input", path(&meter), "--hour", "17"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("user_id,hour,sigma,scale,loc"));
    assert!(stdout.contains("u1,17,"));

    let out = drmech(&["baseline", "--input", path(&meter), "--date", "2016-07-29", "--hour", "17"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().nth(1).unwrap().starts_with("u1,2016-07-29,17,"));
}

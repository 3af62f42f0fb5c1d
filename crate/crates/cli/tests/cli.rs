use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wassconc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wassconc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run wassconc")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn version_names_catalog_revision() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wassconc(tmp.path(), &["--version"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("formula catalog r1"));
}

#[test]
fn wpp_on_a_line_and_in_the_plane() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("a.csv"), "0\n1\n2\n").unwrap();
    fs::write(d.join("b.csv"), "0.5\n1.5\n2.5\n").unwrap();
    let o = wassconc(d, &["--out", "line", "wpp", "--a", "a.csv", "--b", "b.csv"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("line/wpp.json")).unwrap()).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    fs::write(d.join("a2.csv"), "0,0\n3,4\n").unwrap();
    fs::write(d.join("b2.csv"), "3,4\n0,0\n").unwrap();
    let o = wassconc(
        d,
        &[
            "--out", "plane", "wpp", "--a", "a2.csv", "--b", "b2.csv", "--p", "2",
        ],
    );
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("plane/wpp.json")).unwrap()).unwrap();
    assert!(v["value"].as_f64().unwrap().abs() < 1e-12);
    assert!(d.join("plane/plan.csv").exists());
    assert!(fs::read_to_string(d.join("plane/config.toml"))
        .unwrap()
        .contains("p = 2.0"));
}

#[test]
fn malformed_csv_reports_line_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.csv"), "0,0\n1,x\n").unwrap();
    let o = wassconc(d, &["cover", "--points", "bad.csv", "--delta", "0.5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&wassconc(tmp.path(), &["no-such-command"])), 2);
    let o = wassconc(tmp.path(), &["rate", "--sampler", "uniform-cube:1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    assert_eq!(
        code(&wassconc(
            tmp.path(),
            &["asrun", "--sampler", "uniform-cube:1"]
        )),
        2
    );
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("run.toml"),
        "out = \"from-file\"\n[asrun]\nsampler = \"uniform-cube:1\"\nn-max = 64\nseed = 9\n",
    )
    .unwrap();
    let o = wassconc(d, &["--config", "run.toml", "asrun", "--n-max", "128"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echoed = fs::read_to_string(d.join("from-file/config.toml")).unwrap();
    assert!(echoed.contains("n-max = 128"));
    assert!(echoed.contains("seed = 9"));
    assert!(echoed.contains("p = 1.0"), "defaults are echoed: {echoed}");

    fs::write(d.join("typo.toml"), "[asrun]\nsede = 1\n").unwrap();
    assert_eq!(code(&wassconc(d, &["--config", "typo.toml", "asrun"])), 2);
}

#[test]
fn falsified_metric_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("m.csv"), "0,1,5\n1,0,1\n5,1,0\n").unwrap();
    let o = wassconc(d, &["validate-metric", "--matrix", "m.csv"]);
    assert_eq!(code(&o), 1);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/validate.json")).unwrap()).unwrap();
    assert_eq!(v["violation"]["kind"], "triangle");

    fs::write(d.join("ok.csv"), "0,1,2\n1,0,1\n2,1,0\n").unwrap();
    assert_eq!(
        code(&wassconc(d, &["validate-metric", "--matrix", "ok.csv"])),
        0
    );
}

#[test]
fn bound_grid_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("grid.json"),
        r#"{"formula": "hoeffding", "x": [0.05, 0.1], "n": [64, 256], "params": {"p": 1}}"#,
    )
    .unwrap();
    let o = wassconc(d, &["bound", "--grid", "grid.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("out/bound.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("n,x,applicable,value,terms,reason"));
}

#[test]
fn geometry_subcommands_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let pts: String = (0..40)
        .map(|i| format!("{},{}\n", (i % 7) as f64 * 0.3, (i / 7) as f64 * 0.5))
        .collect();
    fs::write(d.join("p.csv"), &pts).unwrap();
    fs::write(d.join("q.csv"), "0.1,0.1\n2.0,2.0\n5.0,0.0\n").unwrap();
    assert_eq!(
        code(&wassconc(
            d,
            &["--out", "c", "cover", "--points", "p.csv", "--delta", "0.4"]
        )),
        0
    );
    assert!(d.join("c/cover.json").exists());
    assert_eq!(
        code(&wassconc(d, &["--out", "m", "dim", "--points", "p.csv"])),
        0
    );
    assert!(d.join("m/dim.json").exists());
    assert_eq!(
        code(&wassconc(
            d,
            &["--out", "t", "tree", "--points", "p.csv", "--k-star", "2"]
        )),
        0
    );
    let t: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("t/tree.json")).unwrap()).unwrap();
    assert_eq!(t["verified"], true);
    let o = wassconc(d, &["--out", "r", "rings", "--a", "q.csv", "--b", "p.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("r/rings.json")).unwrap()).unwrap();
    assert!(r["mixture_bound"]["total"].as_f64().unwrap() >= r["exact"].as_f64().unwrap() - 1e-12);
}

#[test]
fn failing_rate_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wassconc(
        tmp.path(),
        &[
            "rate",
            "--sampler",
            "uniform-cube:1",
            "--ngrid",
            "16:256",
            "--reps",
            "30",
            "--seed",
            "1",
            "--slope-tolerance",
            "0.0001",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(tmp.path().join("out/rate.csv").exists());
}

#[test]
fn identical_files_have_zero_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("a.csv"), "0,1\n2,3\n4,5\n").unwrap();
    let o = wassconc(d, &["wpp", "--a", "a.csv", "--b", "a.csv", "--p", "2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0");
}

#[test]
fn bundled_cantor_sample_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cantor_5000.csv");
    let o = wassconc(
        tmp.path(),
        &[
            "dim",
            "--points",
            data.to_str().unwrap(),
            "--delta-grid",
            "auto",
        ],
    );
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/dim.json")).unwrap())
            .unwrap();
    let alpha = v["alpha"].as_f64().unwrap();
    assert!((0.55..=0.72).contains(&alpha), "alpha {alpha}");
}

#[test]
fn repeated_rate_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "--out",
            out,
            "rate",
            "--sampler",
            "uniform-cube:1",
            "--p",
            "1",
            "--ngrid",
            "32:4096",
            "--reps",
            "200",
            "--seed",
            "7",
        ]
    };
    assert_eq!(code(&wassconc(tmp.path(), &args("first"))), 0);
    assert_eq!(code(&wassconc(tmp.path(), &args("second"))), 0);
    for f in ["rate.csv", "rate_long.csv", "report.json", "config.toml"] {
        let a = fs::read(tmp.path().join("first").join(f)).unwrap();
        let b = fs::read(tmp.path().join("second").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn veriscope(args: &[&str], out: &Path) -> Output {
    let f = fixtures();
    Command::new(env!("CARGO_BIN_EXE_veriscope"))
        .args(args)
        .arg("--schema")
        .arg(f.join("schema.toml"))
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn with_example(args: &[&str]) -> Vec<String> {
    let f = fixtures();
    let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    for (k, file) in [("--labels", "labels.csv"), ("--query", "q_ex.sql"), ("--truth", "truth.csv")] {
        v.push(k.into());
        v.push(f.join(file).display().to_string());
    }
    v
}

fn run(args: &[&str], out: &Path) -> Output {
    let full = with_example(args);
    let refs: Vec<&str> = full.iter().map(String::as_str).collect();
    veriscope(&refs, out)
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn eval_writes_three_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let outputs = read(dir.path().join("outputs.csv"));
    assert_eq!(outputs.lines().count(), 4);
    assert!(outputs.contains("o1,BHealthy,U. São Paulo"));
    let prov = read(dir.path().join("provenance.csv"));
    assert!(prov.contains("(v1&v5&v10)|(v1&v8&v11),1"));
    assert!(prov.contains("(v4&v7&v12),0"));
}

#[test]
fn bad_query_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("bad.sql");
    std::fs::write(&q, "SELECT DISTINCT a.Nope FROM Acquisitions AS a").unwrap();
    let o = veriscope(&["eval", "--query", q.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = veriscope(&["eval", "--query", q.to_str().unwrap(), "--budget", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mes_of_first_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mes", "--output", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mes = read(dir.path().join("mes.csv"));
    let row = mes.lines().nth(1).unwrap();
    let value: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((value - 0.224).abs() < 1e-9, "{row}");
}

#[test]
fn unknown_output_needs_reverify() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["mes", "--output", "2"], dir.path()).status.code(), Some(3));
    let o = run(&["mes", "--output", "2", "--reverify"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(dir.path().join("mes.csv")).lines().count(), 2);
}

#[test]
fn theta_one_stops_before_spending() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reduce", "--theta", "1.0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: String = read(dir.path().join("summary.json"));
    assert!(summary.contains("\"total_cost\": 0"), "{summary}");
    assert!(summary.contains("\"termination\": \"threshold\""), "{summary}");
}

#[test]
fn baseline_needs_a_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["baseline"], dir.path()).status.code(), Some(2));
    let o = run(&["baseline", "--baseline", "random", "--budget", "50"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(dir.path().join("summary.json")).contains("random(p=0.01)"));
}

#[test]
fn experiment_aggregates_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["experiment", "--scenario", "wcs", "--repeats", "5", "--strategies", "all", "--budget", "60"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = read(dir.path().join("aggregate.csv"));
    assert_eq!(agg.lines().count(), 6);
    assert!(agg.lines().skip(1).all(|l| l.starts_with("wcs,") && l.split(',').nth(2) == Some("5")));
    assert_eq!(std::fs::read_dir(dir.path().join("traces")).unwrap().count(), 25);
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&a, "1"), (&b, "4")] {
        let o = run(&["reduce", "--budget", "150", "--seed", "11", "--jobs", jobs], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.csv", "summary.json", "labels.csv"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# example run\nlabels = {}\nquery = {}\ntruth = {}\nbudget = 40\nverifier = oracle\n",
            f.join("labels.csv").display(),
            f.join("q_ex.sql").display(),
            f.join("truth.csv").display()
        ),
    )
    .unwrap();
    let o = veriscope(&["reduce", "--config", cfg.to_str().unwrap(), "--budget", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(dir.path().join("summary.json"));
    assert!(summary.contains("\"budget\": 3"), "{summary}");
    assert!(summary.contains("fixed-oracle"), "{summary}");

    std::fs::write(&cfg, "budgett = 4\n").unwrap();
    let o = veriscope(&["reduce", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

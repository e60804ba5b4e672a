use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use snspd_pnr::report::{PathKind, RunReport};

fn pnr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("pnr runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

// Short records keep the chain quick; the pulse still fits in the window.
const SIM: &[&str] = &["simulate", "--seed", "11", "--nbar", "1.5", "--count", "1500", "--samples", "6000", "--output-dir", "sim"];
const FILTER: &[&str] = &[
    "filter",
    "sim/traces.pnrw",
    "--window",
    "5500",
    "--baseline",
    "1000",
    "--labels",
    "sim/labels.csv",
    "--output-dir",
    "filt",
];

#[test]
fn simulate_to_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pnr(SIM, d));
    ok(&pnr(FILTER, d));
    ok(&pnr(&["pca", "filt/filtered.pnrw", "--components", "2", "--training", "500", "--output-dir", "pca"], d));
    ok(&pnr(
        &[
            "discriminate",
            "pca/filtered_weights.csv",
            "--nbar",
            "1.5",
            "--components",
            "5",
            "--angle-step",
            "2",
            "--labels",
            "filt/labels.csv",
            "--output-dir",
            "disc",
        ],
        d,
    ));
    let report = RunReport::from_json(&fs::read_to_string(d.join("disc/report.json")).unwrap()).unwrap();
    let a = report.analysis(PathKind::Pca, "nbar1.5").unwrap();
    assert!(a.confidence.per_n[&1] > 0.9, "{:?}", a.confidence);

    ok(&pnr(&["edges", "filt/filtered.pnrw", "--threshold", "0.5", "--threshold-mode", "fraction", "--output-dir", "edges"], d));
    ok(&pnr(
        &[
            "discriminate",
            "edges/edges.csv",
            "--path",
            "edge",
            "--nbar",
            "1.5",
            "--components",
            "5",
            "--angle-step",
            "2",
            "--output-dir",
            "disc_edge",
        ],
        d,
    ));

    let report_args = |out: &'static str| {
        vec![
            "report",
            "disc/report.json",
            "disc_edge/report.json",
            "--filter-report",
            "filt/filter_report.json",
            "--basis",
            "pca/pca_basis.json",
            "--output-dir",
            out,
        ]
    };
    ok(&pnr(&report_args("rep1"), d));
    ok(&pnr(&report_args("rep2"), d));
    let first = fs::read(d.join("rep1/report.json")).unwrap();
    assert_eq!(first, fs::read(d.join("rep2/report.json")).unwrap());
    let merged = RunReport::from_json(std::str::from_utf8(&first).unwrap()).unwrap();
    assert_eq!(merged.analyses.len(), 2);
    assert_eq!(merged.filter[0].zero_accepted, Some(0));
    assert!(merged.pca.is_some());
    for stem in ["pca_nbar1.5", "edge_nbar1.5"] {
        for suffix in ["projected.csv", "projected.svg", "plane.csv", "plane.svg", "confidence.csv"] {
            assert!(d.join(format!("rep1/{stem}_{suffix}")).exists(), "{stem}_{suffix}");
        }
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| ["simulate", "--seed", "3", "--count", "20", "--samples", "2000", "--output-dir", out];
    ok(&pnr(&args("a"), d));
    ok(&pnr(&args("b"), d));
    assert_eq!(fs::read(d.join("a/traces.pnrw")).unwrap(), fs::read(d.join("b/traces.pnrw")).unwrap());
    assert_eq!(fs::read(d.join("a/labels.csv")).unwrap(), fs::read(d.join("b/labels.csv")).unwrap());
}

#[test]
fn truncated_file_names_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pnr(&["simulate", "--seed", "1", "--count", "3", "--samples", "2000", "--output-dir", "sim"], d));
    let bytes = fs::read(d.join("sim/traces.pnrw")).unwrap();
    // Header 33 bytes, then 8000 bytes per record; cut inside the third.
    let cut = 33 + 2 * 8000 + 100;
    fs::write(d.join("cut.pnrw"), &bytes[..cut]).unwrap();
    let out = pnr(&["filter", "cut.pnrw", "--window", "1500", "--baseline", "500"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("byte {cut}")), "{err}");
}

#[test]
fn calibrate_prints_and_saturates() {
    let d = std::env::temp_dir();
    let out = pnr(&["calibrate", "--count-rate", "98168", "--rep-rate", "1e5"], &d);
    ok(&out);
    let n: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((n - 4.0).abs() < 1e-3, "{n}");

    let out = pnr(&["calibrate", "--count-rate", "1e5", "--rep-rate", "1e5"], &d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("saturated"));
}

#[test]
fn usage_errors_exit_nonzero() {
    let d = std::env::temp_dir();
    // No seed: randomized subcommands never fall back to the clock.
    assert_eq!(pnr(&["simulate", "--count", "5"], &d).status.code(), Some(2));
    assert_eq!(
        pnr(&["edges", "x.pnrw", "--sweep", "0.1:0.2:3", "--threshold", "0.3"], &d).status.code(),
        Some(2)
    );
    assert_eq!(pnr(&["edges", "x.pnrw", "--sweep", "0.3:0.1:3"], &d).status.code(), Some(2));
    // Neither a component count nor a mean to size one from.
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.csv"), "# trace_id,w1,w2\n0,1,2\n").unwrap();
    let out = pnr(&["discriminate", "p.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--components"));
}

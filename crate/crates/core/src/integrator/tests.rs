use super::*;
use crate::metrics::{hyperbolic_distance, lift_distance};
use proptest::prelude::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn params() -> MetricParams {
    MetricParams::default()
}

/// Circle through `p` with tangent direction `angle`, from elementary
/// geometry (independent of the closed-form module).
fn tangent_circle(p: UHPoint, angle: f64) -> (f64, f64) {
    let c = p.x + p.y * angle.tan();
    (c, (p.x - c).hypot(p.y))
}

#[test]
fn vertical_hyperbolic_ray() {
    let t = integrate_ray(MetricId::Hyperbolic, UHPoint::I, std::f64::consts::FRAC_PI_2, 1.0, params(), tol()).unwrap();
    let end = t.global(t.len() - 1);
    assert!(end.x.abs() < 1e-8 && (end.y - std::f64::consts::E).abs() < 1e-8, "{end:?}");
    assert!((t.duration() - 1.0).abs() < 1e-15);
}

#[test]
fn hyperbolic_ray_stays_on_circle() {
    let angle = 0.3;
    let t = integrate_ray(MetricId::Hyperbolic, UHPoint::I, angle, 2.5, params(), tol()).unwrap();
    let (c, r) = tangent_circle(UHPoint::I, angle);
    for i in 0..t.len() {
        let z = t.global(i);
        assert!(((z.x - c).hypot(z.y) - r).abs() < 1e-9, "sample {i}");
    }
    let end = t.global(t.len() - 1);
    assert!((hyperbolic_distance(UHPoint::I, end) - 2.5).abs() < 1e-9);
    assert!((direction_toward(UHPoint::I, end) - angle).abs() < 1e-9);
}

#[test]
fn wp_apex_matches_momentum_law() {
    for px in [1e-2f64, 1e-3, 1e-4] {
        let start = Lift::from_global(UHPoint::I).unwrap();
        let v = (px, (1.0 - px * px).sqrt());
        let integ = Integrator::new(MetricId::WpModel, params(), tol());
        let t = integ.run(start, v, StopRule::Excursions { count: 1, max_duration: 20.0 }).unwrap();
        let apex = t.samples.iter().find(|s| s.kind == SampleKind::Apex).unwrap();
        let expect = px.powf(-2.0 / 3.0);
        assert!((apex.z.y - expect).abs() < 1e-3 * expect, "{} vs {}", apex.z.y, expect);
        assert!(t.drift_per_unit_time() < 1e-8);
        // momentum x'/y^3 is conserved while inside the horoball
        let inside: Vec<_> = t.samples.iter().filter(|s| s.z.y > t.horoball_height).collect();
        for s in &inside {
            let m = s.v.0 / s.z.y.powi(3);
            assert!((m - px).abs() < 1e-8 * px.max(1e-3), "{m}");
        }
    }
}

#[test]
fn wp_cut_crossings_are_recorded() {
    let start = Lift::from_global(UHPoint { x: 0.2, y: 1.0 }).unwrap();
    let integ = Integrator::new(MetricId::WpModel, params(), tol());
    let t = integ.run_angle(start, -1.0, StopRule::Duration(20.0)).unwrap();
    assert!(t.cut_crossings > 0);
    assert!(t.samples.iter().any(|s| s.kind == SampleKind::Cut));
    assert!(t.drift_per_unit_time() < 1e-8);
    for w in t.samples.windows(2) {
        assert!(w[1].t > w[0].t);
    }
}

#[test]
fn excursion_time_reversal() {
    let start = Lift::from_global(UHPoint { x: 0.2, y: 1.0 }).unwrap();
    let integ = Integrator::new(MetricId::WpModel, params(), tol());
    let t = integ.run_angle(start, 1.3, StopRule::Excursions { count: 1, max_duration: 200.0 }).unwrap();
    let exit = t.len() - 1;
    assert_eq!(t.samples[exit].kind, SampleKind::Exit);
    let entry = t.samples.iter().rposition(|s| s.kind == SampleKind::Entry).unwrap();
    let (lift, v) = t.reversed_start(exit).unwrap();
    let back = integ.run(lift, v, StopRule::Duration(t.samples[exit].t - t.samples[entry].t)).unwrap();
    let d = lift_distance(&back.lift(back.len() - 1).unwrap(), &t.lift(entry).unwrap());
    assert!(d < 1e-6, "{d}");
}

#[test]
fn recurrence_times_are_exits() {
    let start = Lift::from_global(UHPoint { x: 0.2, y: 1.0 }).unwrap();
    let integ = Integrator::new(MetricId::Hyperbolic, params(), tol());
    let t = integ.run_angle(start, 0.7, StopRule::Duration(60.0)).unwrap();
    assert_eq!(t.recurrence_times[0], 0.0);
    assert_eq!(t.recurrence_times.len(), t.completed_excursions + 1);
    for w in t.recurrence_times.windows(2) {
        assert!(w[1] > w[0]);
    }
}

#[test]
fn rejects_bad_duration() {
    assert!(matches!(
        integrate_ray(MetricId::Hyperbolic, UHPoint::I, 0.0, -1.0, params(), tol()),
        Err(IntegrationError::InvalidDuration(_))
    ));
}

#[test]
fn connect_degenerate() {
    let r = connect(MetricId::WpModel, UHPoint::I, UHPoint::I, params(), tol());
    assert!(matches!(r, Err(IntegrationError::DegenerateSegment)));
}

#[test]
fn connect_hyperbolic_matches_closed_form() {
    let q = UHPoint { x: 1.0, y: 1.0 };
    let s = connect(MetricId::Hyperbolic, UHPoint::I, q, params(), tol()).unwrap();
    let arc = hyperbolic_closed_form(UHPoint::I, q);
    assert!((s.initial_angle - arc.initial_angle()).abs() < 1e-10);
    assert!((s.length - arc.length).abs() < 1e-10);
    for i in 0..s.trajectory.len() {
        assert!(arc.distance_to_geodesic(s.trajectory.global(i)) < 1e-10);
    }
}

#[test]
fn connect_wp_through_deep_excursion() {
    let p = UHPoint { x: -3.0, y: 1.05 };
    let q = UHPoint { x: 3.0, y: 1.05 };
    let s = connect(MetricId::WpModel, p, q, params(), tol()).unwrap();
    assert!(s.residual < 1e-6, "{}", s.residual);
    let t = &s.trajectory;
    assert!(t.samples.iter().any(|x| x.z.y > params().horoball_height));
    // reverse integration from the endpoint returns to p
    let end = t.len() - 1;
    let (lift, v) = t.reversed_start(end).unwrap();
    let back = Integrator::new(MetricId::WpModel, params(), tol()).run(lift, v, StopRule::Duration(t.duration())).unwrap();
    let d = lift_distance(&back.lift(back.len() - 1).unwrap(), &Lift::from_global(p).unwrap());
    assert!(d < 1e-5, "{d}");
}

#[test]
fn connect_long_hyperbolic_segment() {
    let p = Lift::from_global(UHPoint { x: 0.2, y: 1.0 }).unwrap();
    let integ = Integrator::new(MetricId::Hyperbolic, params(), tol());
    let ray = integ.run_angle(p, 0.4, StopRule::Duration(30.0)).unwrap();
    let q = ray.lift(ray.len() - 1).unwrap();
    let s = shooting::connect_lifts(MetricId::Hyperbolic, p, q, params(), tol()).unwrap();
    assert!(s.residual < 1e-6);
    assert!((s.length - 30.0).abs() < 1e-6, "{}", s.length);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hyperbolic_speed_and_circle(angle in -3.1f64..3.1, x in -0.5f64..0.5, y in 0.9f64..2.0) {
        let p = UHPoint { x, y };
        let t = integrate_ray(MetricId::Hyperbolic, p, angle, 2.0, params(), tol()).unwrap();
        prop_assert!(t.drift_per_unit_time() < 1e-8);
        let end = t.global(t.len() - 1);
        prop_assert!((hyperbolic_distance(p, end) - 2.0).abs() < 1e-8);
        let arc = hyperbolic_closed_form(p, end);
        for i in 0..t.len() {
            prop_assert!(arc.distance_to_geodesic(t.global(i)) < 1e-8);
        }
    }

    #[test]
    fn wp_speed_conserved(angle in -3.1f64..3.1) {
        let t = integrate_ray(MetricId::WpModel, UHPoint { x: 0.2, y: 1.0 }, angle, 10.0, params(), tol()).unwrap();
        prop_assert!(t.drift_per_unit_time() < 1e-8);
    }
}

use super::*;
use crate::modular_group::horoball_at;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> CompareConfig {
    CompareConfig::default()
}

fn lift(x: f64, y: f64) -> Lift {
    Lift::from_global(UHPoint { x, y }).unwrap()
}

#[test]
fn short_thick_pair() {
    let r = compare_segments(lift(0.1, 1.0), lift(0.4, 0.95), &cfg()).unwrap();
    assert_eq!(r.wp.count(), 0);
    assert_eq!(r.hyp.count(), 0);
    assert!(r.matched.is_empty());
    assert_eq!(r.thick_hausdorff.len(), 1);
    assert!(r.r_measured < 0.05, "{}", r.r_measured);
}

#[test]
fn deep_pair_matches_one_excursion() {
    let r = compare_segments(lift(-3.0, 1.05), lift(3.0, 1.05), &cfg()).unwrap();
    assert_eq!(r.wp.count(), 1);
    assert_eq!(r.hyp.count(), 1);
    assert_eq!(r.matched.len(), 1);
    let m = &r.matched[0];
    assert!(m.both_present());
    assert_eq!(m.cusp, Some(Cusp::INFINITY));
    assert_eq!(r.padded_counts().0, r.padded_counts().1);
    assert!(r.counts_match());
    // entry and exit points within the measured fellow-travel constant
    assert!(m.entry_distance.unwrap() <= r.r_measured + 1e-9);
    assert!(m.exit_distance.unwrap() <= r.r_measured + 1e-9);
    assert!(r.r_measured.is_finite() && r.r_measured > 0.0);
}

#[test]
fn thick_endpoints_required() {
    assert_eq!(compare_segments(lift(0.0, 2.0), lift(3.0, 1.0), &cfg()).unwrap_err(), FellowError::NotThick("p"));
}

#[test]
fn padding_inserts_empty_records() {
    let mk = |p: i64, q: i64, t: f64| {
        let mut e = ExcursionRecord::empty_at(Some(Cusp::new(p, q).unwrap()), p as f64 / q as f64, t);
        e.empty = false;
        e
    };
    let wp = vec![mk(0, 1, 1.0), mk(1, 2, 2.0), mk(1, 1, 3.0)];
    let hyp = vec![mk(0, 1, 1.0), mk(1, 1, 3.0)];
    let m = match_excursions(&wp, &hyp);
    assert_eq!(m.len(), 3);
    assert!(m[1].1.empty && !m[1].0.empty);
    assert_eq!(m[2].1.cusp, Some(Cusp::new(1, 1).unwrap()));
}

#[test]
fn segment_distance_oracle() {
    let (b0, b1) = (UHPoint { x: 0.0, y: 1.0 }, UHPoint { x: 0.0, y: 4.0 });
    // perpendicular foot inside: distance to the vertical line
    let a = UHPoint { x: 1.0, y: 2.0 };
    assert!((point_segment_distance(a, b0, b1) - (0.5f64).asinh()).abs() < 1e-12);
    // foot outside: nearest endpoint
    let a = UHPoint { x: 0.1, y: 10.0 };
    assert!((point_segment_distance(a, b0, b1) - hyperbolic_distance(a, b1)).abs() < 1e-12);
}

#[test]
fn deviation_profile_example() {
    let d = deviation_profile(10.0, Tolerances::default()).unwrap();
    let yw = crate::integrator::model_quadrature(1e-3).unwrap().y_at(1.0);
    assert!((yw - 22.9).abs() < 0.1);
    let yh = (200f64).sqrt();
    assert!(((yw / yh).ln() - 0.48).abs() < 0.01);
    assert!((d.fitted_exponent - 0.4).abs() < 0.02, "{}", d.fitted_exponent);
    assert!(d.integration_check < 1e-6, "{}", d.integration_check);
    for w in d.rows.windows(2) {
        assert!(w[1].x > w[0].x);
    }
    let csv = d.csv();
    assert!(csv.starts_with(PROFILE_CSV_HEADER));
    assert_eq!(csv.lines().count(), d.rows.len() + 1);
}

#[test]
fn deviation_profile_requires_depth() {
    assert_eq!(deviation_profile(2.0, Tolerances::default()).unwrap_err(), FellowError::DepthTooSmall(2.0));
}

#[test]
fn projection_to_half_plane() {
    let ball = HoroballDescriptor::HalfPlane { height: 1.1 };
    let p = UHPoint { x: 0.3, y: 0.5 };
    let hy = project_to_horoball(MetricId::Hyperbolic, &ball, p, MetricParams::default(), Tolerances::default()).unwrap();
    assert_eq!(hy, UHPoint { x: 0.3, y: 1.1 });
    // inside the strip above the unit arcs both metrics project vertically
    let p = UHPoint { x: 0.3, y: 1.05 };
    let wp = project_to_horoball(MetricId::WpModel, &ball, p, MetricParams::default(), Tolerances::default()).unwrap();
    assert_eq!(wp, UHPoint { x: 0.3, y: 1.1 });
    assert_eq!(project_to_horoball(MetricId::WpModel, &ball, UHPoint { x: 0.0, y: 2.0 }, MetricParams::default(), Tolerances::default()), Err(FellowError::InsideHoroball));
}

#[test]
fn wp_projection_below_the_arcs_is_a_perpendicular_foot() {
    let ball = HoroballDescriptor::HalfPlane { height: 1.1 };
    // symmetric under x -> -x, so the foot of a point on the axis is above it
    let f = project_to_horoball(MetricId::WpModel, &ball, UHPoint { x: 0.0, y: 0.6 }, MetricParams::default(), Tolerances::default()).unwrap();
    assert!(f.x.abs() < 1e-8 && (f.y - 1.1).abs() < 1e-12);
    let p = UHPoint { x: 0.35, y: 0.6 };
    let f = project_to_horoball(MetricId::WpModel, &ball, p, MetricParams::default(), Tolerances::default()).unwrap();
    let (miss, dist) = perpendicular_miss(f.x, p, 1.1, MetricParams::default(), Tolerances::default()).unwrap();
    assert!(miss.abs() < 1e-6 && dist < 1e-6, "{miss} {dist}");
}

#[test]
fn projection_to_disk() {
    let cusp = Cusp::new(1, 2).unwrap();
    let ball = horoball_at(cusp, 1.1).unwrap();
    let p = UHPoint { x: 0.7, y: 0.05 };
    let f = project_to_horoball(MetricId::Hyperbolic, &ball, p, MetricParams::default(), Tolerances::default()).unwrap();
    let HoroballDescriptor::Disk { center, diameter, .. } = ball else { panic!() };
    assert!(((f.x - center.x).hypot(f.y - center.y) - 0.5 * diameter).abs() < 1e-12);
    // the foot lies on the geodesic from p to the cusp
    let crate::integrator::ArcShape::Circle { center: c, radius } = crate::integrator::hyperbolic_closed_form(p, f).shape else { panic!() };
    assert!(((c - 0.5).abs() - radius).abs() < 1e-9);
}

#[test]
fn random_pairs_are_thick() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let (p, q) = random_thick_pair(&mut rng, 12.0, MetricParams::default(), Tolerances::default()).unwrap();
        assert!(p.local.y <= 1.1 && q.local.y <= 1.1);
        assert!(lift_distance(&p, &q) <= 12.0 + 1e-6);
    }
}

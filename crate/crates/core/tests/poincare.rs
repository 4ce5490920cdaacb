use std::f64::consts::{PI, TAU};

use geolab::flow::{integrate, FlowSettings};
use geolab::poincare::{birkhoff_shorten, find_closed_geodesic, ClosedSearch, SectionSpec, ShortenSettings};
use geolab::{GeoError, PhaseState, Surface};

fn ellipsoid() -> Surface {
    Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0)
}

// composite Simpson on the parametrization (a cos t, b sin t)
fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let n = 2000;
    let h = TAU / n as f64;
    let f = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
    let mut s = f(0.0) + f(TAU);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[test]
fn newton_recovers_the_long_short_ellipse() {
    let s = ellipsoid();
    let seed = PhaseState::new(&[2.0, 0.0, 0.0], &unit([0.0, 0.01, 1.0]));
    let g = find_closed_geodesic(&s, &seed, &ClosedSearch::default()).unwrap();
    assert_eq!(g.monodromy.label, "hyperbolic");
    assert!((g.monodromy.period - ellipse_perimeter(2.0, 1.0)).abs() < 1e-8, "{}", g.monodromy.period);
    assert!(g.state.x[1].abs() < 1e-8 && g.state.u[1].abs() < 1e-8, "{:?}", g.state);
    let e = g.monodromy.eigenvalues.iter().map(|v| v[0]).fold(f64::MIN, f64::max);
    let entry = g.registry_entry("abc");
    assert_eq!(entry["label"], "hyperbolic");
    assert_eq!(entry["surface"], "abc");
    assert!(e > 1.0);
}

#[test]
fn long_middle_ellipse_is_elliptic_and_closes() {
    let s = ellipsoid();
    let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let g = find_closed_geodesic(&s, &st, &ClosedSearch::default()).unwrap();
    assert!(g.monodromy.classification.elliptic, "{}", g.monodromy.label);
    assert!((g.monodromy.period - ellipse_perimeter(2.0, 2f64.sqrt())).abs() < 1e-8);
    for v in &g.monodromy.eigenvalues {
        assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-6);
    }
    let tr = integrate(&s, &st, g.monodromy.period, &FlowSettings::default()).unwrap();
    let end = tr.states.last().unwrap();
    let gap: f64 = (0..3).map(|i| (end.x[i] - st.x[i]).powi(2) + (end.u[i] - st.u[i]).powi(2)).sum::<f64>().sqrt();
    assert!(gap <= 1e-6, "{gap}");
}

#[test]
fn far_seed_is_not_captured() {
    let s = ellipsoid();
    let seed = PhaseState::new(&[2.0, 0.0, 0.0], &unit([0.0, 1.0, 1.0]));
    let r = find_closed_geodesic(&s, &seed, &ClosedSearch::default());
    assert!(matches!(r, Err(GeoError::NewtonDiverged { iters: 0, .. })), "{r:?}");
}

#[test]
fn lift_outside_the_section_is_rejected() {
    let s = Surface::sphere();
    let sec = SectionSpec::at(&s, &PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0])).unwrap();
    assert_eq!(sec.d(), 1);
    assert!(matches!(sec.lift(&s.field, &[0.0, 1.5]), Err(GeoError::OutsideChartRadius { .. })));
    assert!(sec.lift(&s.field, &[0.0, 0.5]).is_ok());
}

#[test]
fn shortening_on_the_ellipsoid_finds_the_short_ellipse() {
    let s = ellipsoid();
    let n = 64;
    let poly: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let p = TAU * i as f64 / n as f64;
            vec![0.15 * (2.0 * p).sin(), 1.5 * p.cos(), 1.1 * p.sin()]
        })
        .collect();
    let r = birkhoff_shorten(&s, &poly, &ShortenSettings::default()).unwrap();
    assert!(r.points.iter().all(|p| p[0].abs() < 1e-4), "{:?}", r.points[0]);
    let perim = ellipse_perimeter(2f64.sqrt(), 1.0);
    assert!(r.length < perim && perim - r.length < 5e-3, "{} {perim}", r.length);
    assert!(r.seed.u[0].abs() < 1e-3);
    let tiny: Vec<Vec<f64>> = (0..8).map(|i| vec![2.0, 1e-3 * (PI * i as f64 / 4.0).cos(), 1e-3 * (PI * i as f64 / 4.0).sin()]).collect();
    assert!(matches!(birkhoff_shorten(&s, &tiny, &ShortenSettings::default()), Err(GeoError::CollapseToPoint { .. })));
}

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;

use geolab::fermi::{build_chart, ChartSettings};
use geolab::flow::{check_energy_homogeneity, hamiltonian, integrate, vector_field, FlowSettings};
use geolab::integrator::StepControl;
use geolab::poincare::{monodromy, ClassifySettings, ReturnSettings};
use geolab::surface::certify_strict_convexity;
use geolab::variational::{endpoint_response, jacobi_fundamental, linearized_flow, push_variation};
use geolab::{GeoError, PhaseState, Surface};

fn ellipsoid() -> Surface {
    Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0)
}

#[test]
fn ellipsoid_speed_stays_unit_over_long_run() {
    let s = ellipsoid();
    let u = [0.0, 0.6, 0.8];
    let tr = integrate(&s, &PhaseState::new(&[2.0, 0.0, 0.0], &u), 100.0, &FlowSettings::default()).unwrap();
    let worst = tr.states.iter().map(|z| (z.speed() - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst}");
    assert!(tr.states.iter().all(|z| s.value(&z.x).abs() < 1e-10));
}

#[test]
fn zero_time_gives_single_state() {
    let s = Surface::sphere();
    let s0 = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let tr = integrate(&s, &s0, 0.0, &FlowSettings::default()).unwrap();
    assert_eq!(tr.states.len(), 1);
    assert_eq!(tr.states[0], s0);
}

#[test]
fn off_surface_states_are_rejected_by_integrate() {
    let s = Surface::sphere();
    let r = integrate(&s, &PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 1.0, &FlowSettings::default());
    assert!(matches!(r, Err(GeoError::OffSurface { .. })));
    let r = integrate(&s, &PhaseState::new(&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]), 1.0, &FlowSettings::default());
    assert!(matches!(r, Err(GeoError::NotTangent { .. })));
}

#[test]
fn speed_reparametrization() {
    let sphere = Surface::sphere();
    let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let r = check_energy_homogeneity(&sphere, &st, 2.0, PI, &FlowSettings::default()).unwrap();
    assert!(r.max_deviation <= 1e-8, "{r:?}");
    let e = ellipsoid();
    let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let r = check_energy_homogeneity(&e, &st, 3.0, 10.0, &FlowSettings::default()).unwrap();
    assert!(r.max_deviation <= 1e-6, "{r:?}");
    let r = check_energy_homogeneity(&e, &st, 1.0, 10.0, &FlowSettings::default()).unwrap();
    assert_eq!(r.max_deviation, 0.0);
}

#[test]
fn energy_values() {
    let s = Surface::sphere();
    let h = hamiltonian(&s, &PhaseState::new(&[0.0, 1.0, 0.0], &[0.0, 0.0, 2.0])).unwrap();
    assert!((h - 2.0).abs() < 1e-15);
    let (xd, ud) = vector_field(&ellipsoid(), &PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0])).unwrap();
    assert_eq!(xd, vec![0.0, 1.0, 0.0]);
    assert!((ud[0] + 1.0).abs() < 1e-14 && ud[1].abs() < 1e-14 && ud[2].abs() < 1e-14);
}

#[test]
fn dense_convexity_sampling() {
    let r = certify_strict_convexity(&Surface::sphere(), 10_000).unwrap();
    assert!(r.convex && (r.min_kappa - 1.0).abs() < 1e-9);
    let r = certify_strict_convexity(&ellipsoid(), 10_000).unwrap();
    assert!(r.convex && r.min_kappa > 0.0);
    let torus = Surface::parse("(x1^2 + x2^2 + x3^2 + 0.75)^2 - 4*(x1^2 + x2^2)", 3).unwrap();
    let r = certify_strict_convexity(&torus, 4000).unwrap();
    assert!(!r.convex && r.min_kappa < 0.0);
}

#[test]
fn sphere_chart_metric_is_positive_definite_off_base() {
    let s = Surface::sphere();
    let chart = build_chart(&s, &PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 2.0, &ChartSettings::default()).unwrap();
    let g = chart.metric(&s.field, &[0.0, 0.05]).unwrap();
    assert!((g[(0, 1)] - g[(1, 0)]).abs() < 1e-14);
    assert!(g.clone().cholesky().is_some());
    assert!((g[(0, 0)] - 0.05f64.cos().powi(2)).abs() < 1e-8, "{g}");
}

#[test]
fn rotation_family_gives_the_expected_jacobi_field() {
    let s = Surface::sphere();
    let s0 = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let ctrl = StepControl::default();
    // rotation about the x axis moves the equator to tilted great circles
    let dx = [0.0, 0.0, 0.0];
    let du = [0.0, 0.0, 1.0];
    let t = 1.3;
    let (end, px, pu) = push_variation(&s, &s0, &dx, &du, t, ctrl).unwrap();
    let want_x = [0.0, 0.0, t.sin()];
    let want_u = [0.0, 0.0, t.cos()];
    for i in 0..3 {
        assert!((px[i] - want_x[i]).abs() < 1e-7 && (pu[i] - want_u[i]).abs() < 1e-7, "{px:?} {pu:?}");
    }
    assert!((end.x[0] - t.cos()).abs() < 1e-9);
}

#[test]
fn flow_direction_is_transported() {
    let s = ellipsoid();
    let s0 = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let (end, m) = linearized_flow(&s, &s0, 2.5, StepControl::default()).unwrap();
    let (x0, u0) = vector_field(&s, &s0).unwrap();
    let (x1, u1) = vector_field(&s, &end).unwrap();
    let v = nalgebra::DVector::from_vec([x0, u0].concat());
    let pushed = &m * v;
    let want = nalgebra::DVector::from_vec([x1, u1].concat());
    assert!((pushed - want).amax() < 1e-6);
    let (_, id) = linearized_flow(&s, &s0, 0.0, StepControl::default()).unwrap();
    assert_eq!(id, DMatrix::identity(6, 6));
}

#[test]
fn linearized_flow_matches_finite_differences() {
    let s = Surface::sphere();
    let s0 = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let ctrl = StepControl::default();
    let (_, m) = linearized_flow(&s, &s0, FRAC_PI_2, ctrl).unwrap();
    // tangent variations keep the perturbed states admissible to first order
    let dirs: [([f64; 3], [f64; 3]); 2] = [([0.0, 0.0, 1.0], [0.0, 0.0, 0.0]), ([0.0, 0.0, 0.0], [0.0, 0.0, 1.0])];
    let h = 1e-6;
    for (dx, du) in dirs {
        let shifted = |sg: f64| {
            let x: Vec<f64> = (0..3).map(|i| s0.x[i] + sg * h * dx[i]).collect();
            let u: Vec<f64> = (0..3).map(|i| s0.u[i] + sg * h * du[i]).collect();
            let xn = (x.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let x: Vec<f64> = x.iter().map(|v| v / xn).collect();
            let d: f64 = (0..3).map(|i| u[i] * x[i]).sum();
            let u: Vec<f64> = (0..3).map(|i| u[i] - d * x[i]).collect();
            let tr = integrate(&s, &PhaseState::new(&x, &u), FRAC_PI_2, &FlowSettings::default()).unwrap();
            tr.last().to_vec()
        };
        let (a, b) = (shifted(1.0), shifted(-1.0));
        let fd: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect();
        let v = nalgebra::DVector::from_vec([dx.to_vec(), du.to_vec()].concat());
        let pushed = &m * v;
        for i in 0..6 {
            assert!((pushed[i] - fd[i]).abs() < 1e-4, "{i}: {} vs {}", pushed[i], fd[i]);
        }
    }
}

#[test]
fn jacobi_identities() {
    let s = Surface::sphere();
    let chart = build_chart(&s, &PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), TAU, &ChartSettings::default()).unwrap();
    let f = jacobi_fundamental(&s, &chart, 0.0, &[], StepControl::default()).unwrap();
    assert!((f.last() - DMatrix::identity(2, 2)).amax() < 1e-15);
    let f = jacobi_fundamental(&s, &chart, 2.0, &[1.999_999], StepControl::default()).unwrap();
    let (j, jp) = endpoint_response(&f, 1.999_999, &[0.7], &[0.0]).unwrap();
    assert!(j[0].abs() < 1e-5 && (jp[0] - 0.7).abs() < 1e-5);
}

#[test]
fn ellipsoid_middle_axis_ellipse_is_unstable() {
    let s = ellipsoid();
    let m = monodromy(&s, &PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.0, 1.0]), &ReturnSettings::default(), &ClassifySettings::default()).unwrap();
    let ev: Vec<[f64; 2]> = m.eigenvalues.clone();
    assert!(ev.iter().all(|e| e[1] == 0.0));
    let big = ev.iter().map(|e| e[0]).fold(f64::MIN, f64::max);
    let small = ev.iter().map(|e| e[0]).fold(f64::MAX, f64::min);
    assert!(big > 1.0 && (big * small - 1.0).abs() < 1e-8);
}

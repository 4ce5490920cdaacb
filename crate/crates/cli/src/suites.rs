use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use geolab::annulus::{annulus_fixed_points, fit_invariant_curve, tangle_report, AnnulusMap, AnnulusPoint, AnnulusSettings, BranchSettings, FixedPointSettings};
use geolab::fermi::{build_chart, ChartSettings};
use geolab::flow::{check_energy_homogeneity, integrate, joachimsthal, FlowSettings};
use geolab::integrator::StepControl;
use geolab::jets::{jet_compose, jet_invert, k_general_test, monomials, random_symplectic, JetMap, PolySpace};
use geolab::perturbation::{finite_difference_check, richardson_ratios};
use geolab::poincare::{find_closed_geodesic, monodromy, return_map, symplectic_defect, ClassifySettings, ClosedSearch, ReturnSettings, SectionSpec};
use geolab::variational::jacobi_fundamental;
use geolab::{PhaseState, Surface};

use crate::error::CliError;

pub const SUITES: &[&str] = &["conservation", "sphere", "symplectic", "classification", "fermi", "variational", "perturbation", "jets", "annulus", "tangle", "all"];

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
    /// `true` when the value must stay at or below the threshold.
    pub upper: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub tol_scale: f64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let w = self.checks.iter().map(|c| c.metric.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$}  {:>12}  {:>14}  status\n", "metric", "value", "threshold");
        for c in &self.checks {
            let th = format!("{} {:.3e}", if c.upper { "<=" } else { ">=" }, c.threshold);
            s.push_str(&format!("{:<w$}  {:>12.4e}  {:>14}  {}\n", c.metric, c.value, th, if c.pass { "PASS" } else { "FAIL" }));
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        s.push_str(&format!("suite {}: {} checks, {} failed\n", self.suite, self.checks.len(), failed));
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "suite": self.suite, "tol_scale": self.tol_scale, "passed": self.passed(), "checks": self.checks })
    }
}

struct Checks {
    scale: f64,
    out: Vec<Check>,
}

impl Checks {
    fn le(&mut self, metric: &str, value: f64, threshold: f64) {
        let t = threshold * self.scale;
        self.out.push(Check { metric: metric.into(), value, threshold: t, upper: true, pass: value <= t });
    }

    fn ge(&mut self, metric: &str, value: f64, threshold: f64) {
        self.out.push(Check { metric: metric.into(), value, threshold, upper: false, pass: value >= threshold });
    }

    fn flag(&mut self, metric: &str, ok: bool) {
        self.out.push(Check { metric: metric.into(), value: f64::from(u8::from(ok)), threshold: 1.0, upper: false, pass: ok });
    }
}

type SuiteFn = fn(&mut Checks) -> Result<(), CliError>;

fn lookup(name: &str) -> Option<SuiteFn> {
    Some(match name {
        "conservation" => conservation,
        "sphere" => sphere,
        "symplectic" => symplectic,
        "classification" => classification,
        "fermi" => fermi,
        "variational" => variational,
        "perturbation" => perturbation,
        "jets" => jets,
        "annulus" => annulus,
        "tangle" => tangle,
        _ => return None,
    })
}

pub fn run_suite(name: &str, tol_scale: f64) -> Result<SuiteReport, CliError> {
    let mut c = Checks { scale: tol_scale, out: Vec::new() };
    if name == "all" {
        for s in SUITES.iter().filter(|s| **s != "all") {
            let before = c.out.len();
            lookup(s).expect("registered")(&mut c)?;
            for ch in &mut c.out[before..] {
                ch.metric = format!("{s}: {}", ch.metric);
            }
        }
    } else {
        lookup(name).ok_or_else(|| CliError::UnknownSuite(name.into()))?(&mut c)?;
    }
    Ok(SuiteReport { suite: name.into(), tol_scale, checks: c.out })
}

fn ellipsoid() -> Surface {
    Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0)
}

fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let n = 4000;
    let h = TAU / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * h).map(|t| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt()).sum::<f64>() * h
}

fn conservation(c: &mut Checks) -> Result<(), CliError> {
    let s = ellipsoid();
    let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let tr = integrate(&s, &st, 100.0, &FlowSettings::default()).map_err(CliError::at("conservation"))?;
    c.le("energy drift over t=100", tr.stats.max_energy_drift, 1e-8);
    let off = tr.states.iter().map(|z| s.value(&z.x).abs()).fold(0.0, f64::max);
    c.le("constraint residual", off, 1e-10);
    let diag = [0.25, 0.5, 1.0];
    let j0 = joachimsthal(&diag, &st);
    let jd = tr.states.iter().map(|z| ((joachimsthal(&diag, z) - j0) / j0).abs()).fold(0.0, f64::max);
    c.le("Joachimsthal drift", jd, 1e-8);
    let r = check_energy_homogeneity(&s, &st, 2.0, 10.0, &FlowSettings::default()).map_err(CliError::at("conservation"))?;
    c.le("speed reparametrization", r.max_deviation, 1e-6);
    Ok(())
}

fn sphere(c: &mut Checks) -> Result<(), CliError> {
    let s = Surface::sphere();
    let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let g = find_closed_geodesic(&s, &st, &ClosedSearch::default()).map_err(CliError::at("sphere"))?;
    c.le("closed geodesic length error", (g.monodromy.period - TAU).abs(), 1e-6);
    let sec = SectionSpec::at(&s, &st).map_err(CliError::at("sphere"))?;
    let (pz, _) = return_map(&s.field, &sec, &[0.05, -0.1], &ReturnSettings::default()).map_err(CliError::at("sphere"))?;
    c.le("return map identity defect", (pz[0] - 0.05).abs().max((pz[1] + 0.1).abs()), 1e-9);
    let tr = integrate(&s, &st, PI, &FlowSettings::default()).map_err(CliError::at("sphere"))?;
    let end = tr.last();
    c.le("antipode after time pi", (0..3).map(|i| (end.x[i] + st.x[i]).abs()).fold(0.0, f64::max), 1e-9);
    Ok(())
}

fn symplectic(c: &mut Checks) -> Result<(), CliError> {
    let s = ellipsoid();
    for (name, u) in [("x-y ellipse", [0.0, 1.0, 0.0]), ("x-z ellipse", [0.0, 0.0, 1.0])] {
        let m = monodromy(&s, &PhaseState::new(&[2.0, 0.0, 0.0], &u), &ReturnSettings::default(), &ClassifySettings::default()).map_err(CliError::at("symplectic"))?;
        c.le(&format!("{name} symplectic defect"), m.symplectic_defect, 1e-6);
        c.le(&format!("{name} reciprocal defect"), m.reciprocal_defect, 1e-6);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let worst = (0..20).map(|_| symplectic_defect(&random_symplectic(2, 0.5, &mut rng))).fold(0.0, f64::max);
    c.le("random symplectic defect", worst, 1e-11);
    Ok(())
}

fn classification(c: &mut Checks) -> Result<(), CliError> {
    let s = ellipsoid();
    let cases = [
        ("x-y", [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], "elliptic", (2.0, 2f64.sqrt())),
        ("x-z", [2.0, 0.0, 0.0], [0.0, 0.0, 1.0], "hyperbolic", (2.0, 1.0)),
        ("y-z", [0.0, 2f64.sqrt(), 0.0], [0.0, 0.0, 1.0], "elliptic", (2f64.sqrt(), 1.0)),
    ];
    for (name, x, u, want, (a, b)) in cases {
        let m = monodromy(&s, &PhaseState::new(&x, &u), &ReturnSettings::default(), &ClassifySettings::default()).map_err(CliError::at("classification"))?;
        c.flag(&format!("{name} ellipse is {want} ({})", m.label), m.label.contains(want));
        c.le(&format!("{name} period error"), (m.period - ellipse_perimeter(a, b)).abs(), 1e-8);
    }
    Ok(())
}

fn fermi(c: &mut Checks) -> Result<(), CliError> {
    let s = ellipsoid();
    let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let chart = build_chart(&s, &st, 6.0, &ChartSettings::default()).map_err(CliError::at("fermi"))?;
    let mut worst: f64 = 0.0;
    for t in [0.0, 1.0, 2.5, 4.0, 5.5] {
        let g = chart.metric(&s.field, &[t, 0.0]).map_err(CliError::at("fermi"))?;
        worst = worst.max((g - DMatrix::identity(2, 2)).amax());
    }
    c.le("metric minus identity on the base", worst, 1e-8);
    let (orth, par) = chart.frame_defects(&s.field);
    c.le("frame orthonormality defect", orth, 1e-9);
    c.le("frame transport defect", par, 1e-6);
    Ok(())
}

fn variational(c: &mut Checks) -> Result<(), CliError> {
    let s = ellipsoid();
    let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
    let chart = build_chart(&s, &st, 6.0, &ChartSettings::default()).map_err(CliError::at("variational"))?;
    let marks: Vec<f64> = (1..600).map(|i| 0.01 * i as f64).collect();
    let f = jacobi_fundamental(&s, &chart, 6.0, &marks, StepControl::default()).map_err(CliError::at("variational"))?;
    c.le("det U(t) - 1", f.max_det_defect(), 1e-8);
    c.le("inverse equation residual", f.inverse_residual(), 1e-3);
    Ok(())
}

fn perturbation(c: &mut Checks) -> Result<(), CliError> {
    let s = ellipsoid();
    let psi = geolab::expr::Expr::new("x1*x2 + 0.3*x3^3", 3).map_err(CliError::at("perturbation"))?;
    let st = PhaseState::new(&[2f64.sqrt(), 1.0, 0.0], &[0.0, 0.0, 1.0]);
    let reps: Vec<_> = (0..6).map(|i| finite_difference_check(&s, &psi, &st, 1e-3 / f64::from(1u32 << i))).collect::<Result<_, _>>().map_err(CliError::at("perturbation"))?;
    let worst = richardson_ratios(&reps).iter().map(|r| (r - 2.0).abs()).fold(0.0, f64::max);
    c.le("Richardson ratio deviation from 2", worst, 5e-2);
    Ok(())
}

fn jets(c: &mut Checks) -> Result<(), CliError> {
    let mut bad = 0;
    for d in 1..=3 {
        for k in 1..=5 {
            let n = PolySpace::phase(d, k).dim() as u64;
            let mut binom = 1u64;
            for i in 0..u64::from(k) {
                binom = binom * (2 * d as u64 + u64::from(k) - 1 - i) / (i + 1);
            }
            bad += usize::from(n != binom || n != PolySpace::formula_dim(2 * d, k) || n != monomials(2 * d, k).len() as u64);
        }
    }
    c.le("dimension formula mismatches", bad as f64, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut general = 0;
    for _ in 0..20 {
        let tuple: Vec<DMatrix<f64>> = (0..PolySpace::phase(2, 3).dim()).map(|_| random_symplectic(2, 0.5, &mut rng)).collect();
        general += usize::from(k_general_test(&tuple, 2, 3).map_err(CliError::at("jets"))?.is_general);
    }
    c.ge("random tuples found 3-general (of 20)", general as f64, 20.0);
    let id = DMatrix::identity(2, 2);
    let r = k_general_test(&[id.clone(), id.clone()], 1, 1).map_err(CliError::at("jets"))?;
    c.flag("repeated identity tuple rejected", !r.is_general);
    let mut comps = JetMap::identity(1, 3).comps;
    comps[0].add_term(vec![2, 0], 0.7);
    comps[1].add_term(vec![0, 3], 0.2);
    let f = JetMap::from_comps(1, 3, comps).map_err(CliError::at("jets"))?;
    let back = jet_compose(&f, &jet_invert(&f).map_err(CliError::at("jets"))?).map_err(CliError::at("jets"))?;
    c.le("jet inverse defect", back.max_abs_diff(&JetMap::identity(1, 3)), 1e-12);
    Ok(())
}

fn ellipsoid_annulus(s: &Surface) -> Result<AnnulusMap<geolab::expr::Expr>, CliError> {
    let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    AnnulusMap::build(s, &st, ellipse_perimeter(2.0, 2f64.sqrt()), &[0.0, 0.0, 1.0], AnnulusSettings::default()).map_err(CliError::at("annulus"))
}

fn annulus(c: &mut Checks) -> Result<(), CliError> {
    let sphere = Surface::sphere();
    let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let m = AnnulusMap::build(&sphere, &st, TAU, &[0.0, 0.0, 1.0], AnnulusSettings::default()).map_err(CliError::at("annulus"))?;
    let z = AnnulusPoint::new(0.7, 1.1);
    c.le("sphere map identity defect", m.map(z).map_err(CliError::at("annulus"))?.dist(&z), 1e-9);
    let s = ellipsoid();
    let map = ellipsoid_annulus(&s)?;
    let samples: Vec<AnnulusPoint> = (0..6).map(|i| AnnulusPoint::new(0.4 + i as f64, 0.3 + 0.4 * i as f64)).collect();
    c.le("half-turn defect", map.half_turn_defect(&samples).map_err(CliError::at("annulus"))?, 1e-6);
    let orbit = map.orbit(AnnulusPoint::new(0.0, 0.5), 300).map_err(CliError::at("annulus"))?;
    let fit = fit_invariant_curve(&orbit, 12).map_err(CliError::at("annulus"))?;
    c.le("invariant curve fit residual", fit.max_residual, 1e-3);
    Ok(())
}

fn tangle(c: &mut Checks) -> Result<(), CliError> {
    let cfg = BranchSettings { max_arclength: 4.0, ..BranchSettings::default() };
    for (name, src) in [("unperturbed", "0.5*(x1^2/4 + x2^2/2 + x3^2 - 1)"), ("perturbed", "0.5*(x1^2/4 + x2^2/2 + x3^2 - 1) + 0.05*x1^2*x3^2")] {
        let s = Surface::parse(src, 3).map_err(CliError::at("tangle"))?.with_bbox(3.0);
        let map = ellipsoid_annulus(&s)?;
        let seeds = [AnnulusPoint::new(0.02, 1.6), AnnulusPoint::new(PI + 0.02, 1.6)];
        let set = annulus_fixed_points(&map, &seeds, &FixedPointSettings { periods: vec![1], ..FixedPointSettings::default() }).map_err(CliError::at("tangle"))?;
        c.ge(&format!("{name} hyperbolic points"), set.iter().filter(|p| p.label == "hyperbolic").count() as f64, 2.0);
        let rep = tangle_report(&map, &set, &cfg, 1e-3).map_err(CliError::at("tangle"))?;
        if name == "perturbed" {
            c.ge("perturbed transverse crossings", rep.transverse as f64, 1.0);
            c.ge("perturbed max crossing angle", rep.max_angle, 1e-3);
        } else {
            c.out.push(Check { metric: "unperturbed crossings above floor".into(), value: rep.transverse as f64, threshold: 0.0, upper: true, pass: rep.transverse == 0 });
        }
    }
    Ok(())
}

//! Poincaré sections in the unit energy level, return maps, closed
//! geodesic search, monodromy and its classification, and curve
//! shortening for seeds.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fermi::complete_frame;
use crate::flow::{validate_state, GeodesicSystem, PhaseState};
use crate::integrator::{locate_event, LinearSection, StepControl, Stepper};
use crate::scalar::{self, dot, Dual, Scalar};
use crate::surface::{evaluate_geometry, grad, project_to_surface, Field, Surface};

/// Position hyperplane through the anchor, orthogonal to its velocity,
/// with coordinates `y_j = ⟨x − x_a, e_j⟩`, `v_j = ⟨u, e_j⟩`.
#[derive(Clone, Debug, Serialize)]
pub struct SectionSpec {
    pub anchor: PhaseState,
    pub frame: Vec<Vec<f64>>,
    /// Unit normal of `M` at the anchor.
    pub normal: Vec<f64>,
}

impl SectionSpec {
    pub fn at<F: Field>(s: &Surface<F>, anchor: &PhaseState) -> Result<Self> {
        validate_state(s, anchor)?;
        let sp = anchor.speed();
        if sp <= 0.0 {
            return Err(GeoError::InvalidArgument("anchor velocity vanishes".into()));
        }
        let anchor = anchor.scaled(1.0 / sp);
        let geo = evaluate_geometry(s, &anchor.x)?;
        let frame = complete_frame(&geo.normal, &anchor.u);
        Ok(Self { anchor, frame, normal: geo.normal })
    }

    /// Section at a unit-speed anchor with a prescribed orthonormal frame
    /// of `T_xM ∩ u^⊥`.
    pub fn with_frame<F: Field>(s: &Surface<F>, anchor: &PhaseState, frame: Vec<Vec<f64>>) -> Result<Self> {
        let mut sec = Self::at(s, anchor)?;
        if frame.len() != sec.d() {
            return Err(GeoError::WrongTupleLength { expected: sec.d(), got: frame.len() });
        }
        sec.frame = frame;
        Ok(sec)
    }

    pub fn d(&self) -> usize {
        self.frame.len()
    }

    pub fn n(&self) -> usize {
        self.anchor.x.len()
    }

    pub fn section_fn(&self) -> LinearSection {
        let n = self.n();
        let mut coeffs = self.anchor.u.clone();
        coeffs.extend(std::iter::repeat_n(0.0, n));
        LinearSection { coeffs, offset: dot(&self.anchor.x, &self.anchor.u) }
    }

    /// `|⟨X, ν⟩| / ‖X‖` at the anchor, with `ν` the section normal.
    pub fn transversality(&self) -> f64 {
        dot(&self.anchor.u, &self.anchor.u) / self.anchor.speed()
    }

    pub fn coords<T: Scalar>(&self, y: &[T]) -> Vec<T> {
        let n = self.n();
        let dx: Vec<T> = (0..n).map(|i| y[i] - T::cst(self.anchor.x[i])).collect();
        let mut z: Vec<T> = self.frame.iter().map(|e| dot(&dx, &scalar::lift::<T>(e))).collect();
        z.extend(self.frame.iter().map(|e| dot(&y[n..2 * n], &scalar::lift::<T>(e))));
        z
    }

    /// Phase point with section coordinates `z`, unit speed, crossing in
    /// the positive direction.
    pub fn lift<T: Scalar, F: Field>(&self, f: &F, z: &[T]) -> Result<Vec<T>> {
        let n = self.n();
        let d = self.d();
        if z.len() != 2 * d {
            return Err(GeoError::WrongTupleLength { expected: 2 * d, got: z.len() });
        }
        let xa: Vec<T> = scalar::lift(&self.anchor.x);
        let ua: Vec<T> = scalar::lift(&self.anchor.u);
        let na: Vec<T> = scalar::lift(&self.normal);
        let es: Vec<Vec<T>> = self.frame.iter().map(|e| scalar::lift(e)).collect();
        let mut base = xa.clone();
        for (j, e) in es.iter().enumerate() {
            for i in 0..n {
                base[i] += z[j] * e[i];
            }
        }
        let mut s = T::zero();
        let mut x = base.clone();
        let mut extra = 2;
        for it in 0..40 {
            let (q, g) = grad(f, &x);
            let dq = dot(&g, &na);
            if dq.re().abs() < 1e-12 {
                return Err(GeoError::OutsideChartRadius { radius: scalar::norm(&scalar::reals(&z[..d])), max: f64::NAN });
            }
            s -= q / dq;
            x = (0..n).map(|i| base[i] + s * na[i]).collect();
            if q.re().abs() < 1e-15 {
                if extra == 0 {
                    break;
                }
                extra -= 1;
            }
            if it == 39 {
                return Err(GeoError::ProjectionDiverged { iters: 40, residual: q.re().abs() });
            }
        }
        let (_, g) = grad(f, &x);
        let gv = es.iter().enumerate().fold(T::zero(), |acc, (j, e)| acc + z[d + j] * dot(&g, e));
        let gu = dot(&g, &ua);
        let gn = dot(&g, &na);
        let p = -(gv / gn);
        let q = -(gu / gn);
        let v2 = z[d..].iter().fold(T::zero(), |acc, &v| acc + v * v);
        let qa = T::one() + q * q;
        let disc = p * p * q * q - qa * (p * p + v2 - T::one());
        if disc.re() <= 0.0 {
            return Err(GeoError::OutsideChartRadius { radius: v2.re().sqrt(), max: 1.0 });
        }
        let a = (-(p * q) + disc.sqrt()) / qa;
        let b = p + q * a;
        let mut y = x;
        for i in 0..n {
            let mut ui = a * ua[i] + b * na[i];
            for (j, e) in es.iter().enumerate() {
                ui += z[d + j] * e[i];
            }
            y.push(ui);
        }
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ReturnSettings {
    pub ctrl: StepControl,
    pub t_max: f64,
    pub n_hits: usize,
    pub event_tol: f64,
}

impl Default for ReturnSettings {
    fn default() -> Self {
        Self { ctrl: StepControl::default(), t_max: 1e3, n_hits: 1, event_tol: 1e-13 }
    }
}

/// Integrates a phase vector until its `n_hits`-th upward crossing of
/// `section`; returns the crossing state and time.
pub fn flow_to_section<T: Scalar, F: Field>(f: &F, section: &LinearSection, y0: &[T], n_hits: usize, settings: &ReturnSettings) -> Result<(Vec<T>, T)> {
    let sys = GeodesicSystem::new(f, Some(T::one()));
    let mut st = Stepper::new(settings.ctrl);
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut armed = false;
    let mut hits = 0;
    let mut g_prev = section.value(&y).re();
    while t < settings.t_max {
        let prev = y.clone();
        let h = st.step(&sys, &mut y, t, settings.t_max - t + 1.0)?;
        let g = section.value(&y).re();
        if g < -1e-6 {
            armed = true;
        }
        if armed && g_prev < 0.0 && g >= 0.0 {
            hits += 1;
            armed = false;
            if hits == n_hits {
                return locate_event(&sys, section, &prev, T::cst(t), settings.event_tol);
            }
        }
        g_prev = g;
        t += h;
    }
    Err(GeoError::NoReturnWithinTmax { t_max: settings.t_max })
}

/// Return map in section coordinates and the return time.
pub fn return_map<T: Scalar, F: Field>(f: &F, sec: &SectionSpec, z: &[T], settings: &ReturnSettings) -> Result<(Vec<T>, T)> {
    let y0 = sec.lift(f, z)?;
    let (y, t) = flow_to_section(f, &sec.section_fn(), &y0, settings.n_hits, settings)?;
    Ok((sec.coords(&y), t))
}

/// `P(z)`, the return time and `DP(z)` from dual-number runs.
pub fn return_jacobian<F: Field>(f: &F, sec: &SectionSpec, z: &[f64], settings: &ReturnSettings) -> Result<(Vec<f64>, f64, DMatrix<f64>)> {
    let m = z.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut pz = Vec::new();
    let mut tr = 0.0;
    for c in 0..m {
        let seeded: Vec<Dual<f64>> = z.iter().enumerate().map(|(i, &v)| Dual::new(v, f64::from(u8::from(i == c)))).collect();
        let (out, t) = return_map(f, sec, &seeded, settings)?;
        for r in 0..m {
            jac[(r, c)] = out[r].eps;
        }
        if c == 0 {
            pz = out.iter().map(|v| v.re).collect();
            tr = t.re;
        }
    }
    Ok((pz, tr, jac))
}

pub fn omega(d: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        o[(i, d + i)] = 1.0;
        o[(d + i, i)] = -1.0;
    }
    o
}

pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let o = omega(m.nrows() / 2);
    (m.transpose() * &o * m - o).norm()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifySettings {
    pub unit_tol: f64,
    pub root_tol: f64,
    pub n_max: u32,
    pub symplectic_tol: f64,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self { unit_tol: 1e-6, root_tol: 1e-6, n_max: 20, symplectic_tol: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub parabolic: bool,
    pub degenerate: bool,
    pub hyperbolic: bool,
    pub elliptic: bool,
    /// Number of eigenvalue pairs on the unit circle.
    pub q: usize,
}

impl Classification {
    pub fn label(&self) -> String {
        if self.hyperbolic {
            "hyperbolic".into()
        } else if self.elliptic {
            format!("{}-elliptic", self.q)
        } else if self.parabolic {
            "parabolic".into()
        } else {
            "degenerate".into()
        }
    }
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest `min_μ |λμ − 1|` over the spectrum.
pub fn reciprocal_defect(eig: &[Complex<f64>]) -> f64 {
    eig.iter()
        .map(|l| eig.iter().map(|m| (l * m - Complex::new(1.0, 0.0)).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn classify(m: &DMatrix<f64>, cfg: &ClassifySettings) -> Result<Classification> {
    if m.nrows() != m.ncols() || !m.nrows().is_multiple_of(2) {
        return Err(GeoError::DimensionMismatch { expected: m.nrows() + m.nrows() % 2, got: m.ncols() });
    }
    let defect = symplectic_defect(m);
    if defect > cfg.symplectic_tol {
        return Err(GeoError::NotSymplectic { defect });
    }
    let eig = eigenvalues(m);
    let one = Complex::new(1.0, 0.0);
    let parabolic = eig.iter().any(|l| (l - one).norm() <= cfg.root_tol);
    let on_circle = eig.iter().filter(|l| (l.norm() - 1.0).abs() <= cfg.unit_tol).count();
    let degenerate = eig.iter().any(|l| {
        (1..=cfg.n_max).any(|q| {
            (0..q).any(|p| {
                let th = std::f64::consts::TAU * f64::from(p) / f64::from(q);
                (l - Complex::new(th.cos(), th.sin())).norm() <= cfg.root_tol
            })
        })
    });
    let hyperbolic = on_circle == 0;
    Ok(Classification { parabolic, degenerate, hyperbolic, elliptic: !degenerate && !hyperbolic, q: on_circle / 2 })
}

#[derive(Clone, Debug, Serialize)]
pub struct MonodromyResult {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub classification: Classification,
    pub label: String,
    pub period: f64,
    pub residual: f64,
    pub symplectic_defect: f64,
    pub reciprocal_defect: f64,
}

/// Monodromy of the orbit through `anchor`, assumed periodic.
pub fn monodromy<F: Field>(s: &Surface<F>, anchor: &PhaseState, rs: &ReturnSettings, cs: &ClassifySettings) -> Result<MonodromyResult> {
    let sec = SectionSpec::at(s, anchor)?;
    let z0 = vec![0.0; 2 * sec.d()];
    let (pz, period, m) = return_jacobian(&s.field, &sec, &z0, rs)?;
    let residual = scalar::norm(&pz);
    let classification = classify(&m, cs)?;
    let eig = eigenvalues(&m);
    Ok(MonodromyResult {
        symplectic_defect: symplectic_defect(&m),
        reciprocal_defect: reciprocal_defect(&eig),
        eigenvalues: eig.iter().map(|c| [c.re, c.im]).collect(),
        label: classification.label(),
        classification,
        matrix: m,
        period,
        residual,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedSearch {
    pub ret: ReturnSettings,
    pub classify: ClassifySettings,
    pub capture_radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for ClosedSearch {
    fn default() -> Self {
        Self { ret: ReturnSettings::default(), classify: ClassifySettings::default(), capture_radius: 0.1, tol: 1e-9, max_iter: 40, damping: 0.5 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosedGeodesic {
    pub state: PhaseState,
    pub monodromy: MonodromyResult,
    pub iterations: usize,
}

impl ClosedGeodesic {
    pub fn registry_entry(&self, surface_hash: &str) -> serde_json::Value {
        serde_json::json!({
            "surface": surface_hash,
            "period": self.monodromy.period,
            "eigenvalues": self.monodromy.eigenvalues,
            "label": self.monodromy.label,
            "state": { "x": self.state.x, "u": self.state.u },
        })
    }
}

pub(crate) fn solve_least_squares(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1e-300);
    svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(b.len()))
}

/// Damped Newton on `P(z) − z = 0` in the section anchored at the seed.
pub fn find_closed_geodesic<F: Field>(s: &Surface<F>, seed: &PhaseState, cfg: &ClosedSearch) -> Result<ClosedGeodesic> {
    let sec = SectionSpec::at(s, seed)?;
    let m = 2 * sec.d();
    let residual_at = |z: &[f64]| -> Result<f64> {
        let (pz, _) = return_map(&s.field, &sec, z, &cfg.ret)?;
        Ok(pz.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    };
    let mut z = vec![0.0; m];
    let mut iterations = 0;
    loop {
        let (pz, _, jac) = return_jacobian(&s.field, &sec, &z, &cfg.ret)?;
        let r = DVector::from_iterator(m, pz.iter().zip(&z).map(|(a, b)| a - b));
        let res = r.norm();
        if iterations == 0 && res > cfg.capture_radius {
            return Err(GeoError::NewtonDiverged { iters: 0, residual: res });
        }
        if res <= cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(GeoError::NewtonDiverged { iters: iterations, residual: res });
        }
        let step = solve_least_squares(jac - DMatrix::identity(m, m), &(-&r));
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + lambda * b).collect();
            if let Ok(rt) = residual_at(&trial) {
                if rt < res {
                    z = trial;
                    accepted = true;
                    break;
                }
            }
            lambda *= cfg.damping;
        }
        iterations += 1;
        if !accepted {
            return Err(GeoError::NewtonDiverged { iters: iterations, residual: res });
        }
    }
    let y = sec.lift(&s.field, &z)?;
    let state = PhaseState::from_slice(&y, sec.n());
    let mono = monodromy(s, &state, &cfg.ret, &cfg.classify)?;
    Ok(ClosedGeodesic { state, monodromy: mono, iterations })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ShortenSettings {
    pub tol: f64,
    pub max_sweeps: usize,
    pub collapse_length: f64,
}

impl Default for ShortenSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 200_000, collapse_length: 1e-2 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ShortenResult {
    pub points: Vec<Vec<f64>>,
    pub length: f64,
    pub sweeps: usize,
    pub seed: PhaseState,
}

pub fn polyline_length(p: &[Vec<f64>]) -> f64 {
    (0..p.len()).map(|i| scalar::norm(&sub(&p[(i + 1) % p.len()], &p[i]))).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Alternating chord-midpoint shortening: every other vertex moves to the
/// projection onto `M` of its neighbours' midpoint.
pub fn birkhoff_shorten<F: Field>(s: &Surface<F>, initial: &[Vec<f64>], cfg: &ShortenSettings) -> Result<ShortenResult> {
    let n = initial.len();
    if n < 4 {
        return Err(GeoError::InvalidArgument(format!("polyline needs at least 4 vertices, got {n}")));
    }
    let mut p: Vec<Vec<f64>> = initial.iter().map(|x| project_to_surface(s, x)).collect::<Result<_>>()?;
    let mut len = polyline_length(&p);
    let mut sweeps = 0;
    loop {
        for parity in 0..2 {
            for i in (parity..n).step_by(2) {
                if n % 2 == 1 && i == n - 1 && parity == 0 {
                    continue;
                }
                let (a, b) = (&p[(i + n - 1) % n], &p[(i + 1) % n]);
                let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
                p[i] = project_to_surface(s, &mid)?;
            }
        }
        sweeps += 1;
        let new_len = polyline_length(&p);
        if new_len < cfg.collapse_length {
            return Err(GeoError::CollapseToPoint { length: new_len });
        }
        let dec = len - new_len;
        len = new_len;
        if dec.abs() <= cfg.tol || sweeps >= cfg.max_sweeps {
            break;
        }
    }
    let tangent = sub(&p[1], &p[n - 1]);
    let geo = evaluate_geometry(&Surface { field: &s.field, tol: s.tol.scaled(1e3), bbox: s.bbox }, &p[0])?;
    let c = dot(&tangent, &geo.normal);
    let mut u: Vec<f64> = tangent.iter().zip(&geo.normal).map(|(t, nn)| t - c * nn).collect();
    let un = scalar::norm(&u);
    u.iter_mut().for_each(|v| *v /= un);
    Ok(ShortenResult { seed: PhaseState::new(&p[0], &u), points: p, length: len, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn classify_examples() {
        let cs = ClassifySettings::default();
        let c = classify(&DMatrix::identity(2, 2), &cs).unwrap();
        assert!(c.parabolic && c.degenerate && !c.hyperbolic && !c.elliptic);
        let c = classify(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]), &cs).unwrap();
        assert!(c.hyperbolic && !c.elliptic && c.label() == "hyperbolic");
        let (co, si) = (1f64.cos(), 1f64.sin());
        let c = classify(&DMatrix::from_row_slice(2, 2, &[co, -si, si, co]), &cs).unwrap();
        assert!(c.elliptic && !c.degenerate && c.q == 1);
        let r = classify(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]), &cs);
        assert!(matches!(r, Err(GeoError::NotSymplectic { .. })));
    }

    #[test]
    fn sphere_return_is_identity() {
        let s = Surface::sphere();
        let sec = SectionSpec::at(&s, &PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0])).unwrap();
        let (pz, t) = return_map(&s.field, &sec, &[0.05, -0.1], &ReturnSettings::default()).unwrap();
        assert!((t - 2.0 * PI).abs() < 1e-9, "{t}");
        assert!((pz[0] - 0.05).abs() < 1e-9 && (pz[1] + 0.1).abs() < 1e-9, "{pz:?}");
    }

    #[test]
    fn lift_round_trip() {
        let s = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
        let sec = SectionSpec::at(&s, &PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.0, 1.0])).unwrap();
        let y = sec.lift(&s.field, &[0.1, 0.2]).unwrap();
        let z = sec.coords(&y);
        assert!((z[0] - 0.1).abs() < 1e-14 && (z[1] - 0.2).abs() < 1e-14);
        assert!(s.value(&y[..3]).abs() < 1e-14);
        assert!((scalar::norm(&y[3..]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_shortening_finds_great_circle() {
        let s = Surface::sphere();
        let n = 48;
        let poly: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let p = 2.0 * PI * i as f64 / n as f64;
                vec![p.cos(), p.sin(), 0.2 * (2.0 * p).sin()]
            })
            .collect();
        let r = birkhoff_shorten(&s, &poly, &ShortenSettings::default()).unwrap();
        // inscribed regular polygon of a great circle
        let want = 2.0 * n as f64 * (PI / n as f64).sin();
        assert!((r.length - want).abs() < 1e-6, "{} {want}", r.length);
        let tiny: Vec<Vec<f64>> = (0..16)
            .map(|i| {
                let p = 2.0 * PI * i as f64 / 16.0;
                vec![0.05 * p.cos(), 0.05 * p.sin(), 1.0]
            })
            .collect();
        assert!(matches!(birkhoff_shorten(&s, &tiny, &ShortenSettings::default()), Err(GeoError::CollapseToPoint { .. })));
    }
}

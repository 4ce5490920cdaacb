//! Perturbations `Q → Q + εψ`: ambient realization of bumps defined in
//! Fermi coordinates, the first-order Hamiltonian, and measurements of
//! their effect on geodesics and section maps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::expr::Expr;
use crate::fermi::FermiChart;
use crate::flow::{flow_map, hamiltonian_raw, PhaseState};
use crate::integrator::{LinearSection, StepControl};
use crate::jets::{hamiltonian_field, JetMap, Poly};
use crate::poincare::{flow_to_section, ReturnSettings, SectionSpec};
use crate::scalar::{self, dot, Dual, Scalar};
use crate::surface::{grad, hess_ab, Field, Surface};
use crate::variational::{endpoint_response, jacobi_fundamental, mollifier_scaled, mollifier_scaled_d};

const MIN_KAPPA: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BumpKind {
    /// `Σ y_j (α_j φ_{ε₀} + β_j φ'_{ε₀})`, producing the endpoint forcing
    /// `αδ(t − t₀) + βδ'(t − t₀)`. `sign = −1` gives forcing with the
    /// same sign as `(α, β)`.
    Endpoint { alpha: Vec<f64>, beta: Vec<f64>, sign: f64 },
    /// `φ_{ε₀}(y₀ − t₀) β(y)` with `β` homogeneous of degree `k + 1`.
    Jet { poly: Poly },
}

/// Bump supported in a tube around `γ((t₀ − ε₀, t₀ + ε₀))`, realized in
/// ambient space as
/// `ψ(x) = ‖∇Q(x)‖ κ(t*)⁻¹ · profile(t*, y) · χ(|y|²)`
/// with `(t*, y)` the foot point of `x` on `γ`.
#[derive(Clone, Debug, Serialize)]
pub struct BumpSpec {
    #[serde(skip)]
    pub chart: Arc<FermiChart>,
    pub t0: f64,
    pub eps0: f64,
    pub kind: BumpKind,
    /// Radius at which the transverse cutoff reaches zero.
    pub cutoff: f64,
    #[serde(skip)]
    center: Vec<f64>,
}

impl BumpSpec {
    pub fn endpoint<F: Field>(s: &Surface<F>, chart: Arc<FermiChart>, t0: f64, eps0: f64, alpha: &[f64], beta: &[f64]) -> Result<Self> {
        let d = chart.d;
        if alpha.len() != d || beta.len() != d {
            return Err(GeoError::DimensionMismatch { expected: d, got: alpha.len().max(beta.len()) });
        }
        Self::build(s, chart, t0, eps0, BumpKind::Endpoint { alpha: alpha.to_vec(), beta: beta.to_vec(), sign: -1.0 })
    }

    pub fn jet<F: Field>(s: &Surface<F>, chart: Arc<FermiChart>, t0: f64, eps0: f64, poly: Poly) -> Result<Self> {
        if poly.nvars != chart.d {
            return Err(GeoError::DimensionMismatch { expected: chart.d, got: poly.nvars });
        }
        let deg = poly.degree().unwrap_or(0);
        if deg < 2 || !poly.is_homogeneous(deg) {
            return Err(GeoError::DegreeMismatch { expected: deg.max(2) as usize, got: deg as usize });
        }
        Self::build(s, chart, t0, eps0, BumpKind::Jet { poly })
    }

    fn build<F: Field>(s: &Surface<F>, chart: Arc<FermiChart>, t0: f64, eps0: f64, kind: BumpKind) -> Result<Self> {
        if !(eps0 > 0.0) || t0 - eps0 <= 0.0 || t0 + eps0 >= chart.length {
            return Err(GeoError::InvalidArgument(format!(
                "bump support ({}, {}) must lie inside (0, {})",
                t0 - eps0,
                t0 + eps0,
                chart.length
            )));
        }
        for i in 0..=40 {
            let t = t0 - eps0 + 2.0 * eps0 * i as f64 / 40.0;
            let kappa = chart.kappa_at(&s.field, t);
            if kappa.abs() < MIN_KAPPA {
                return Err(GeoError::KappaVanishesOnSupport { t, kappa });
            }
        }
        let (center, _) = chart.gamma_at(t0);
        let cutoff = 0.5 * chart.delta;
        Ok(Self { chart, t0, eps0, kind, cutoff, center })
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    /// Overrides the sign of an endpoint bump; no effect on jet bumps.
    pub fn with_sign(mut self, s: f64) -> Self {
        if let BumpKind::Endpoint { sign, .. } = &mut self.kind {
            *sign = s;
        }
        self
    }

    /// `k` for a jet bump with `β` of degree `k + 1`.
    pub fn jet_order(&self) -> Option<u32> {
        match &self.kind {
            BumpKind::Jet { poly } => poly.degree().map(|g| g - 1),
            BumpKind::Endpoint { .. } => None,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.t0 - self.eps0, self.t0 + self.eps0)
    }

    /// Chart profile `α(y₀)β(y)` before the `κ⁻¹` factor and the cutoff.
    pub fn profile<T: Scalar>(&self, y0: T, y: &[T]) -> T {
        let s = y0 - T::cst(self.t0);
        match &self.kind {
            BumpKind::Endpoint { alpha, beta, sign } => {
                let phi = mollifier_scaled(s, self.eps0);
                let dphi = mollifier_scaled_d(s, self.eps0);
                let mut acc = T::zero();
                for j in 0..y.len() {
                    acc += y[j] * (phi.scale(alpha[j]) + dphi.scale(beta[j]));
                }
                acc.scale(*sign)
            }
            BumpKind::Jet { poly } => mollifier_scaled(s, self.eps0) * poly.eval(y),
        }
    }

    /// Ambient value of the bump.
    pub fn eval<T: Scalar, F: Field>(&self, base: &F, x: &[T]) -> T {
        let reach = 1.5 * (self.eps0 + self.cutoff) + 1e-3;
        let dist2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a.re() - c).powi(2)).sum();
        if dist2 > reach * reach {
            return T::zero();
        }
        let pad = 2.0 * self.chart.spacing;
        let Some((t, y)) = self.chart.foot_point(x, self.t0 - self.eps0 - pad, self.t0 + self.eps0 + pad) else {
            return T::zero();
        };
        if (t.re() - self.t0).abs() >= self.eps0 {
            return T::zero();
        }
        let r2 = y.iter().fold(T::zero(), |acc, &v| acc + v * v);
        let chi = cutoff_step(r2, self.cutoff);
        if chi.re() == 0.0 {
            return T::zero();
        }
        let kappa = self.chart.kappa_at(base, t);
        let (_, g) = grad(base, x);
        self.profile(t, &y) * scalar::norm(&g) / kappa * chi
    }
}

/// Smooth step in `ρ = r²`: one for `r ≤ c/2`, zero for `r ≥ c`.
fn cutoff_step<T: Scalar>(r2: T, c: f64) -> T {
    let x = (r2.scale(1.0 / (c * c)) - T::cst(0.25)).scale(4.0 / 3.0);
    if x.re() <= 0.0 {
        return T::one();
    }
    if x.re() >= 1.0 {
        return T::zero();
    }
    let e = |s: T| (-(T::one() / s)).exp();
    let a = e(T::one() - x);
    a / (a + e(x))
}

#[derive(Clone, Debug)]
pub enum Term {
    Bump(BumpSpec),
    Ambient(Expr),
}

/// `Q + Σ εⱼψⱼ` as a single field.
#[derive(Clone, Debug)]
pub struct PerturbedField<F> {
    pub base: F,
    pub terms: Vec<(f64, Term)>,
}

impl<F: Field> PerturbedField<F> {
    pub fn new(base: F) -> Self {
        Self { base, terms: Vec::new() }
    }

    pub fn with_bump(mut self, eps: f64, bump: BumpSpec) -> Self {
        self.terms.push((eps, Term::Bump(bump)));
        self
    }

    pub fn with_ambient(mut self, eps: f64, psi: Expr) -> Self {
        self.terms.push((eps, Term::Ambient(psi)));
        self
    }

    /// `Σ εⱼψⱼ(x)`.
    pub fn psi_value<T: Scalar>(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for (eps, term) in &self.terms {
            if *eps == 0.0 {
                continue;
            }
            let v = match term {
                Term::Bump(b) => b.eval(&self.base, x),
                Term::Ambient(e) => e.eval(x),
            };
            acc += v.scale(*eps);
        }
        acc
    }

    /// Chart-time windows crossed by bump supports.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        self.terms
            .iter()
            .filter_map(|(eps, t)| match t {
                Term::Bump(b) if *eps != 0.0 => Some(b.support()),
                _ => None,
            })
            .collect()
    }

    pub fn psi(&self) -> PsiField<'_, F> {
        PsiField(self)
    }
}

impl<F: Field> Field for PerturbedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.base.eval(x) + self.psi_value(x)
    }
}

/// The perturbation `Σ εⱼψⱼ` alone.
pub struct PsiField<'a, F>(&'a PerturbedField<F>);

impl<F: Field> Field for PsiField<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.0.psi_value(x)
    }
}

/// A single bump as a field.
pub struct BumpField<'a, F> {
    pub base: &'a F,
    pub bump: &'a BumpSpec,
}

impl<F: Field> Field for BumpField<'_, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.bump.eval(self.base, x)
    }
}

/// `Q + εψ` for an arbitrary field `ψ`.
pub struct Combined<'a, A, B> {
    pub base: &'a A,
    pub psi: &'a B,
    pub eps: f64,
}

impl<A: Field, B: Field> Field for Combined<'_, A, B> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.base.eval(x) + self.psi.eval(x).scale(self.eps)
    }
}

/// `d/dε H_{Q+εψ}(x, u)` at `ε = 0`, including the off-surface terms.
pub fn first_order_hamiltonian<F: Field, P: Field>(s: &Surface<F>, psi: &P, st: &PhaseState) -> Result<f64> {
    let (q, g) = grad(&s.field, &st.x);
    let gn = scalar::norm(&g);
    if gn <= s.tol.grad {
        return Err(GeoError::SingularGradient { norm: gn, tol: s.tol.grad });
    }
    let kappa = hess_ab(&s.field, &st.x, &st.u, &st.u) / gn;
    let (p, gp) = grad(psi, &st.x);
    let p_uu = hess_ab(psi, &st.x, &st.u, &st.u);
    let n_dot = dot(&g, &gp) / gn;
    Ok((kappa * p + q * (p_uu - 2.0 * kappa * n_dot) / gn) / gn)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlopeReport {
    pub eps: f64,
    pub predicted: f64,
    pub slope: f64,
    pub error: f64,
}

/// One-sided difference quotient of the Hamiltonian against the
/// first-order prediction, with the state held fixed.
pub fn finite_difference_check<F: Field, P: Field>(s: &Surface<F>, psi: &P, st: &PhaseState, eps: f64) -> Result<SlopeReport> {
    let predicted = first_order_hamiltonian(s, psi, st)?;
    let pert = Combined { base: &s.field, psi, eps };
    let h0 = hamiltonian_raw(&s.field, &st.x, &st.u);
    let h1 = hamiltonian_raw(&pert, &st.x, &st.u);
    let slope = (h1 - h0) / eps;
    Ok(SlopeReport { eps, predicted, slope, error: (slope - predicted).abs() })
}

/// Error ratios `e(εᵢ)/e(εᵢ₊₁)` over consecutive halving pairs of a ladder.
pub fn richardson_ratios(reports: &[SlopeReport]) -> Vec<f64> {
    reports
        .windows(2)
        .filter(|w| (w[0].eps / w[1].eps - 2.0).abs() < 1e-9)
        .map(|w| w[0].error / w[1].error)
        .collect()
}

/// `ḡ = 2ψ C̃` at Fermi coordinates `q`, with `ψ` read in the chart
/// normalization `ψ/‖∇Q‖` and `C̃ = (∂x)ᵀ (∇²Q/‖∇Q‖) ∂x`.
pub fn fermi_metric_perturbation<F: Field, P: Field>(s: &Surface<F>, chart: &FermiChart, psi: &P, q: &[f64]) -> Result<DMatrix<f64>> {
    let x = chart.point(&s.field, q[0], &q[1..])?;
    let (_, g) = grad(&s.field, &x);
    let c = chart.curvature_matrix(&s.field, q)?;
    let p = psi.eval(&x) / scalar::norm(&g);
    Ok(c * (2.0 * p))
}

/// Flow map that refines the step cap inside the given chart-time windows
/// so the integrator cannot step over a narrow bump.
pub fn flow_windowed<T: Scalar, F: Field>(f: &F, y0: &[T], t: f64, windows: &[(f64, f64)], ctrl: StepControl) -> Result<Vec<T>> {
    let mut cuts = vec![0.0, t];
    for &(a, b) in windows {
        let pad = 0.25 * (b - a) + 0.01;
        cuts.push((a - pad).clamp(0.0, t));
        cuts.push((b + pad).clamp(0.0, t));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut y = y0.to_vec();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let inside = windows.iter().find(|&&(lo, hi)| mid > lo - 0.25 * (hi - lo) - 0.01 && mid < hi + 0.25 * (hi - lo) + 0.01);
        let c = match inside {
            Some(&(lo, hi)) => StepControl { h_max: ctrl.h_max.min((hi - lo) / 16.0), h_init: ctrl.h_init.min((hi - lo) / 16.0), ..ctrl },
            None => ctrl,
        };
        y = flow_map(f, &y, b - a, c)?;
    }
    Ok(y)
}

/// Sections `Σ(0)` and `Σ(t)` through `γ(0)` and `γ(t)` carrying the
/// chart frames, so both use Fermi section coordinates.
#[derive(Clone, Debug)]
pub struct SectionPair {
    pub start: SectionSpec,
    pub end: SectionSpec,
    pub t: f64,
}

impl SectionPair {
    pub fn new<F: Field>(s: &Surface<F>, chart: &FermiChart, t: f64) -> Result<Self> {
        if !(t > 0.0) || t > chart.length {
            return Err(GeoError::InvalidArgument(format!("section time {t} outside (0, {}]", chart.length)));
        }
        let a0 = PhaseState::new(&chart.gamma[0], &chart.velocity[0]);
        let start = SectionSpec::with_frame(s, &a0, chart.frames[0].clone())?;
        let (x, v) = chart.gamma_at(t);
        let end = SectionSpec::with_frame(s, &PhaseState::new(&x, &v), chart.frame_at(t))?;
        Ok(Self { start, end, t })
    }
}

/// `R = P⁻¹_{Q,t} ∘ P_{Q+εψ,t}` on `Σ(0)` in section coordinates.
pub fn r_map<T: Scalar, F: Field>(pert: &PerturbedField<F>, pair: &SectionPair, z: &[T], rs: &ReturnSettings) -> Result<Vec<T>> {
    let n = pair.start.n();
    let y0 = pair.start.lift(&pert.base, z)?;
    let lead = (pair.t - 0.1).max(0.0);
    let y = flow_windowed(pert, &y0, lead, &pert.windows(), rs.ctrl)?;
    let (y1, _) = flow_to_section(pert, &pair.end.section_fn(), &y, 1, rs)?;
    let mut yr = y1;
    for v in yr[n..].iter_mut() {
        *v = -*v;
    }
    let yr = flow_map(&pert.base, &yr, lead, rs.ctrl)?;
    let back = pair.start.section_fn();
    let back = LinearSection { coeffs: back.coeffs.iter().map(|c| -c).collect(), offset: -back.offset };
    let (mut y2, _) = flow_to_section(&pert.base, &back, &yr, 1, rs)?;
    for v in y2[n..].iter_mut() {
        *v = -*v;
    }
    Ok(pair.start.coords(&y2))
}

/// `R(z)` and `DR(z)` from dual-number runs.
pub fn r_map_jacobian<F: Field>(pert: &PerturbedField<F>, pair: &SectionPair, z: &[f64], rs: &ReturnSettings) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = z.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut rz = Vec::new();
    for c in 0..m {
        let seeded: Vec<Dual<f64>> = z.iter().enumerate().map(|(i, &v)| Dual::new(v, f64::from(u8::from(i == c)))).collect();
        let out = r_map(pert, pair, &seeded, rs)?;
        for r in 0..m {
            jac[(r, c)] = out[r].eps;
        }
        rz = out.iter().map(|v| v.re).collect();
    }
    Ok((rz, jac))
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[a, b]`.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((mid + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

/// First-order increment of `J^k R` from a family of jet bumps:
/// `Σ εₙ ∫ φ_{ε₀}(t − t₀) Ω∇(βₙ ∘ U(t)) dt`, homogeneous of degree `k`.
pub fn jet_effect_first_order<F: Field>(s: &Surface<F>, chart: &FermiChart, bumps: &[(f64, &BumpSpec)], ctrl: StepControl) -> Result<JetMap> {
    let d = chart.d;
    let Some(k) = bumps.first().and_then(|(_, b)| b.jet_order()) else {
        return Err(GeoError::InvalidArgument("jet effect needs at least one jet bump".into()));
    };
    let mut rules = Vec::new();
    for (eps, b) in bumps {
        let BumpKind::Jet { poly } = &b.kind else {
            return Err(GeoError::InvalidArgument("endpoint bumps have no jet effect".into()));
        };
        if b.jet_order() != Some(k) {
            return Err(GeoError::DegreeMismatch { expected: k as usize + 1, got: poly.degree().unwrap_or(0) as usize });
        }
        let (lo, hi) = b.support();
        rules.push((*eps, *b, composite_gauss(lo, hi, 8, 8)));
    }
    let marks: Vec<f64> = rules.iter().flat_map(|r| r.2.iter().map(|p| p.0)).collect();
    let t_end = rules.iter().map(|r| r.1.support().1).fold(0.0, f64::max);
    let fund = jacobi_fundamental(s, chart, t_end, &marks, ctrl)?;
    let mut acc: Vec<Poly> = vec![Poly::zero(2 * d); 2 * d];
    for (eps, b, rule) in &rules {
        let BumpKind::Jet { poly } = &b.kind else { unreachable!() };
        for &(t, w) in rule {
            let c = eps * w * mollifier_scaled(t - b.t0, b.eps0);
            if c == 0.0 {
                continue;
            }
            let u = fund.at(t)?;
            let h = poly.compose_linear(&u.rows(0, d).into_owned());
            for (a, fc) in acc.iter_mut().zip(hamiltonian_field(&h, d)) {
                *a = a.add(&fc.scale(c));
            }
        }
    }
    JetMap::from_comps(d, k, acc)
}

#[derive(Clone, Debug, Serialize)]
pub struct EndpointReport {
    pub eps: f64,
    pub eps0: f64,
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    /// `|measured − predicted| / |predicted|`.
    pub rel_error: f64,
    /// The same against the negated prediction.
    pub rel_error_negated: f64,
}

/// Measures `(γ̄(L), γ̄'(L))` from the perturbed geodesic with an endpoint
/// bump and compares it with `U(L)U⁻¹(t₀)(β; α)`.
#[allow(clippy::too_many_arguments)]
pub fn verify_endpoint_against_bump<F: Field + Clone>(
    s: &Surface<F>,
    chart: Arc<FermiChart>,
    length: f64,
    t0: f64,
    alpha: &[f64],
    beta: &[f64],
    eps: f64,
    eps0: f64,
    sign: f64,
    ctrl: StepControl,
) -> Result<EndpointReport> {
    if length > chart.length {
        return Err(GeoError::InvalidArgument(format!("length {length} exceeds the chart ({})", chart.length)));
    }
    let bump = BumpSpec::endpoint(s, chart.clone(), t0, eps0, alpha, beta)?.with_sign(sign);
    if t0 + eps0 >= length {
        return Err(GeoError::InvalidArgument("bump support must end before L".into()));
    }
    let fund = jacobi_fundamental(s, &chart, length, &[t0], ctrl)?;
    let (py, pv) = endpoint_response(&fund, t0, alpha, beta)?;
    let predicted: Vec<f64> = py.into_iter().chain(pv).collect();
    let d = chart.d;
    let measured = if eps == 0.0 {
        vec![0.0; 2 * d]
    } else {
        let pert = PerturbedField::new(s.field.clone()).with_bump(eps, bump);
        let mut y0 = chart.gamma[0].clone();
        y0.extend_from_slice(&chart.velocity[0]);
        let y = flow_windowed(&pert, &y0, length, &pert.windows(), ctrl)?;
        let n = chart.n;
        let q = chart.invert(&s.field, &y[..n])?;
        let j = chart.differential(&s.field, &q)?;
        let u = DVector::from_column_slice(&y[n..]);
        let w = (j.transpose() * &j).lu().solve(&(j.transpose() * u)).ok_or(GeoError::ChartInversionFailed { residual: f64::NAN })?;
        q[1..].iter().map(|v| v / eps).chain(w.iter().skip(1).map(|v| v / eps)).collect()
    };
    let pn = scalar::norm(&predicted);
    let diff = |sg: f64| scalar::norm(&measured.iter().zip(&predicted).map(|(m, p)| m - sg * p).collect::<Vec<_>>()) / pn;
    Ok(EndpointReport { eps, eps0, rel_error: diff(1.0), rel_error_negated: diff(-1.0), predicted, measured })
}

/// Largest transverse distance `|y|` from the chart's base curve along a
/// trajectory started on `γ(0)`, sampled every `stride` chart samples.
pub fn base_deviation<F: Field>(f: &F, chart: &FermiChart, length: f64, windows: &[(f64, f64)], ctrl: StepControl) -> Result<f64> {
    let mut y = chart.gamma[0].clone();
    y.extend_from_slice(&chart.velocity[0]);
    let n = chart.n;
    let steps = (length / 0.05).ceil().max(1.0) as usize;
    let h = length / steps as f64;
    let mut worst: f64 = 0.0;
    for i in 0..steps {
        let shifted: Vec<(f64, f64)> = windows.iter().map(|&(a, b)| (a - i as f64 * h, b - i as f64 * h)).collect();
        y = flow_windowed(f, &y, h, &shifted, ctrl)?;
        let t = (i + 1) as f64 * h;
        let (_, yy) = chart
            .foot_point(&y[..n], t - 0.1, t + 0.1)
            .ok_or(GeoError::ChartInversionFailed { residual: f64::NAN })?;
        worst = worst.max(scalar::norm(&yy));
    }
    Ok(worst)
}

/// Bump library records keyed by chart id.
pub fn bump_library_json(records: &[(&str, &BumpSpec)]) -> serde_json::Value {
    serde_json::Value::Array(
        records
            .iter()
            .map(|(id, b)| {
                let mut v = serde_json::to_value(b).unwrap_or_default();
                v["chart_id"] = serde_json::Value::String((*id).to_string());
                v
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fermi::{build_chart, ChartSettings};
    use crate::jets::y1_power;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn equator_chart(s: &Surface, len: f64) -> Arc<FermiChart> {
        let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        Arc::new(build_chart(s, &st, len, &ChartSettings::default()).unwrap())
    }

    #[test]
    fn hand_evaluated_hamiltonian() {
        let s = Surface::sphere();
        let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let psi = Expr::new("x1", 3).unwrap();
        assert!((first_order_hamiltonian(&s, &psi, &st).unwrap() - 1.0).abs() < 1e-14);
        let zero = Expr::new("0", 3).unwrap();
        assert_eq!(first_order_hamiltonian(&s, &zero, &st).unwrap(), 0.0);
        let q = s.field.clone();
        assert!(first_order_hamiltonian(&s, &q, &st).unwrap().abs() < 1e-14);
    }

    #[test]
    fn difference_quotient_converges_linearly() {
        let s = Surface::ellipsoid(2.0, 1.5, 1.0);
        let st = PhaseState::new(&[1.1, 0.3, 0.2], &[0.2, 0.9, -0.4]);
        let psi = Expr::new("x1*x2 + 0.3*x3^3 + sin(x2)", 3).unwrap();
        let reps: Vec<SlopeReport> = [1e-3, 5e-4, 1e-4, 5e-5].iter().map(|&e| finite_difference_check(&s, &psi, &st, e).unwrap()).collect();
        for r in richardson_ratios(&reps) {
            assert!((1.7..=2.3).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn metric_perturbation_matches_hamiltonian_form() {
        let s = Surface::sphere();
        let chart = equator_chart(&s, 2.0);
        let one = Expr::new("1", 3).unwrap();
        let g = fermi_metric_perturbation(&s, &chart, &one, &[0.7, 0.0]).unwrap();
        assert!((g[(0, 0)] - 2.0).abs() < 1e-9);
        let psi = Expr::new("x1 + x3^2", 3).unwrap();
        let q = [0.9, 0.03];
        let g = fermi_metric_perturbation(&s, &chart, &psi, &q).unwrap();
        let x = chart.point(&s.field, q[0], &q[1..]).unwrap();
        let j = chart.differential(&s.field, &q).unwrap();
        let v = nalgebra::DVector::from_vec(vec![0.8, -0.6]);
        let u: Vec<f64> = (&j * &v).iter().copied().collect();
        let h = first_order_hamiltonian(&s, &psi, &PhaseState::new(&x, &u)).unwrap();
        assert!(((v.transpose() * &g * &v)[(0, 0)] - 2.0 * h).abs() < 1e-9);
    }

    #[test]
    fn bump_is_confined_and_checked() {
        let s = Surface::sphere();
        let chart = equator_chart(&s, 2.0);
        let b = BumpSpec::jet(&s, chart.clone(), 1.0, 0.05, y1_power(1, 2)).unwrap();
        let (x, _) = chart.gamma_at(1.0);
        assert_eq!(b.eval(&s.field, &x), 0.0);
        let far = [0.0, -1.0, 0.0];
        assert_eq!(b.eval(&s.field, &far), 0.0);
        assert!(matches!(BumpSpec::jet(&s, chart.clone(), 0.01, 0.05, y1_power(1, 2)), Err(GeoError::InvalidArgument(_))));
        assert!(matches!(BumpSpec::jet(&s, chart.clone(), 1.0, 0.05, Poly::var(1, 0)), Err(GeoError::DegreeMismatch { .. })));
        let flat = Surface::parse("0.5*(x1^2 + x2^2 - 1)", 3).unwrap();
        let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]);
        let c = Arc::new(build_chart(&flat, &st, 2.0, &ChartSettings { delta: Some(0.1), check_self_intersection: false }).unwrap());
        assert!(matches!(BumpSpec::jet(&flat, c, 1.0, 0.05, y1_power(1, 2)), Err(GeoError::KappaVanishesOnSupport { .. })));
    }

    #[test]
    fn r_map_is_identity_without_perturbation() {
        let s = Surface::sphere();
        let chart = equator_chart(&s, 2.0);
        let b = BumpSpec::jet(&s, chart.clone(), FRAC_PI_4, 1e-2, y1_power(1, 2)).unwrap();
        let pair = SectionPair::new(&s, &chart, 1.2).unwrap();
        let pert = PerturbedField::new(s.field.clone()).with_bump(0.0, b);
        let z = [1e-3, -2e-3];
        let r = r_map(&pert, &pair, &z, &ReturnSettings::default()).unwrap();
        assert!((r[0] - z[0]).abs() < 1e-10 && (r[1] - z[1]).abs() < 1e-10);
    }

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let rule = composite_gauss(0.0, 2.0, 3, 8);
        let v: f64 = rule.iter().map(|(t, w)| w * t.powi(15)).sum();
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn endpoint_response_alpha_forcing() {
        let s = Surface::sphere();
        let chart = equator_chart(&s, 2.0);
        let r = verify_endpoint_against_bump(&s, chart.clone(), FRAC_PI_2, FRAC_PI_4, &[1.0], &[0.0], 1e-4, 1e-2, -1.0, StepControl::default()).unwrap();
        assert!(r.rel_error < 5e-2, "{r:?}");
        let z = verify_endpoint_against_bump(&s, chart, FRAC_PI_2, FRAC_PI_4, &[1.0], &[0.0], 0.0, 1e-2, -1.0, StepControl::default()).unwrap();
        assert!(z.measured.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn jet_effect_is_additive() {
        let s = Surface::sphere();
        let chart = equator_chart(&s, 2.0);
        let a = BumpSpec::jet(&s, chart.clone(), 0.5, 1e-2, y1_power(1, 2)).unwrap();
        let b = BumpSpec::jet(&s, chart.clone(), 1.0, 1e-2, y1_power(1, 2)).unwrap();
        let ctrl = StepControl::default();
        let ea = jet_effect_first_order(&s, &chart, &[(1e-3, &a)], ctrl).unwrap();
        let eb = jet_effect_first_order(&s, &chart, &[(2e-3, &b)], ctrl).unwrap();
        let both = jet_effect_first_order(&s, &chart, &[(1e-3, &a), (2e-3, &b)], ctrl).unwrap();
        let sum = ea.add(&eb);
        assert!(both.max_abs_diff(&sum) <= 1e-6 * sum.linear_part().norm());
        let none = jet_effect_first_order(&s, &chart, &[(0.0, &a)], ctrl).unwrap();
        assert!(none.linear_part().norm() == 0.0);
    }
}

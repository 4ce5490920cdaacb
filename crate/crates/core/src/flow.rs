//! The geodesic flow `ẋ = u, u̇ = κ(x,u) n(x)` in ambient coordinates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::integrator::{integrate_adaptive, OdeSystem, StepControl};
use crate::scalar::{self, dot, Scalar};
use crate::surface::{grad, hess_ab, Field, Surface};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: &[f64], u: &[f64]) -> Self {
        Self { x: x.to_vec(), u: u.to_vec() }
    }
    pub fn from_slice(y: &[f64], n: usize) -> Self {
        Self { x: y[..n].to_vec(), u: y[n..2 * n].to_vec() }
    }
    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = self.x.clone();
        y.extend_from_slice(&self.u);
        y
    }
    pub fn speed(&self) -> f64 {
        scalar::norm(&self.u)
    }
    pub fn scaled(&self, c: f64) -> Self {
        Self { x: self.x.clone(), u: self.u.iter().map(|v| c * v).collect() }
    }
    pub fn reversed(&self) -> Self {
        self.scaled(-1.0)
    }
}

/// Checks the phase-state invariants against the surface tolerances.
pub fn validate_state<F: Field>(s: &Surface<F>, st: &PhaseState) -> Result<()> {
    let n = s.dim();
    if st.x.len() != n || st.u.len() != n {
        return Err(GeoError::DimensionMismatch { expected: n, got: st.x.len().max(st.u.len()) });
    }
    let (q, g) = grad(&s.field, &st.x);
    let gn = scalar::norm(&g);
    if gn <= s.tol.grad {
        return Err(GeoError::SingularGradient { norm: gn, tol: s.tol.grad });
    }
    if q.abs() > s.tol.surface {
        return Err(GeoError::OffSurface { residual: q.abs(), tol: s.tol.surface });
    }
    let r = dot(&g, &st.u).abs();
    if r > s.tol.tangent * st.speed() * gn {
        return Err(GeoError::NotTangent { residual: r });
    }
    Ok(())
}

/// Projects `x` onto `M` by Newton steps along `∇Q`, `u` onto `T_xM`, and
/// optionally rescales `u` to the given speed.
pub fn project_phase<T: Scalar, F: Field>(f: &F, y: &mut [T], n: usize, speed: Option<T>) -> Result<()> {
    let mut extra = 1;
    for it in 0..16 {
        let (q, g) = grad(f, &y[..n]);
        let gg = dot(&g, &g);
        if gg.re() <= 1e-300 {
            return Err(GeoError::SingularGradient { norm: gg.re().sqrt(), tol: 0.0 });
        }
        let scale = 1e-16 * (1.0 + scalar::norm(&scalar::reals(&y[..n])));
        if q.re().abs() <= scale {
            if extra == 0 {
                break;
            }
            extra -= 1;
        }
        let c = q / gg;
        for i in 0..n {
            y[i] -= c * g[i];
        }
        if it == 15 && q.re().abs() > 1e-9 {
            return Err(GeoError::ProjectionDiverged { iters: 16, residual: q.re().abs() });
        }
    }
    let (_, g) = grad(f, &y[..n]);
    let gg = dot(&g, &g);
    let c = dot(&g, &y[n..2 * n]) / gg;
    for i in 0..n {
        let gi = g[i];
        y[n + i] -= c * gi;
    }
    if let Some(s) = speed {
        let un = scalar::norm(&y[n..2 * n]);
        if un.re() > 0.0 {
            let k = s / un;
            for v in y[n..2 * n].iter_mut() {
                *v *= k;
            }
        }
    }
    Ok(())
}

/// `u̇ = κ n` at `(x, u)`, valid on and off the surface.
pub fn acceleration<T: Scalar, F: Field>(f: &F, x: &[T], u: &[T]) -> Result<Vec<T>> {
    let (_, g) = grad(f, x);
    let gg = dot(&g, &g);
    if gg.re() <= 1e-300 || !gg.re().is_finite() {
        return Err(GeoError::SingularGradient { norm: gg.re().sqrt(), tol: 0.0 });
    }
    let c = hess_ab(f, x, u, u) / gg;
    Ok(g.iter().map(|&gi| -c * gi).collect())
}

/// Geodesic vector field on `(x, u) ∈ ℝ²ⁿ`.
pub struct GeodesicSystem<'a, F, T> {
    pub field: &'a F,
    pub n: usize,
    pub speed: Option<T>,
}

impl<'a, F: Field, T: Scalar> GeodesicSystem<'a, F, T> {
    pub fn new(field: &'a F, speed: Option<T>) -> Self {
        Self { field, n: field.dim(), speed }
    }
}

impl<F: Field, T: Scalar> OdeSystem<T> for GeodesicSystem<'_, F, T> {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn rhs(&self, y: &[T], dy: &mut [T]) -> Result<()> {
        let n = self.n;
        dy[..n].copy_from_slice(&y[n..2 * n]);
        let a = acceleration(self.field, &y[..n], &y[n..2 * n])?;
        dy[n..2 * n].copy_from_slice(&a);
        Ok(())
    }
    fn project(&self, y: &mut [T]) -> Result<()> {
        project_phase(self.field, y, self.n, self.speed)
    }
}

pub fn vector_field<F: Field>(s: &Surface<F>, st: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_state(s, st)?;
    Ok((st.u.clone(), acceleration(&s.field, &st.x, &st.u)?))
}

/// `H = u²/2 + κ Q/‖∇Q‖`, evaluated without surface checks.
pub fn hamiltonian_raw<T: Scalar, F: Field>(f: &F, x: &[T], u: &[T]) -> T {
    let (q, g) = grad(f, x);
    let gg = dot(&g, &g);
    dot(u, u).scale(0.5) + hess_ab(f, x, u, u) * q / gg
}

pub fn hamiltonian<F: Field>(s: &Surface<F>, st: &PhaseState) -> Result<f64> {
    let (_, g) = grad(&s.field, &st.x);
    let gn = scalar::norm(&g);
    if gn <= s.tol.grad {
        return Err(GeoError::SingularGradient { norm: gn, tol: s.tol.grad });
    }
    Ok(hamiltonian_raw(&s.field, &st.x, &st.u))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSettings {
    pub ctrl: StepControl,
    /// Allowed relative drift of `H` per 100 time units.
    pub drift_budget: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self { ctrl: StepControl::default(), drift_budget: 1e-8 }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrajectoryStats {
    pub steps: usize,
    pub rejected: usize,
    pub max_energy_drift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub energy: Vec<f64>,
    pub stats: TrajectoryStats,
}

impl Trajectory {
    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let n = self.states.first().map_or(0, |s| s.x.len());
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("u{i}")));
        header.push("H".into());
        wr.write_record(&header)?;
        for ((t, s), h) in self.times.iter().zip(&self.states).zip(&self.energy) {
            let mut row = vec![format!("{t:.17e}")];
            row.extend(s.x.iter().chain(&s.u).map(|v| format!("{v:.17e}")));
            row.push(format!("{h:.17e}"));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn integrate<F: Field>(s: &Surface<F>, s0: &PhaseState, t_end: f64, settings: &FlowSettings) -> Result<Trajectory> {
    validate_state(s, s0)?;
    if t_end < 0.0 {
        return integrate(s, &s0.reversed(), -t_end, settings).map(|mut tr| {
            for (t, st) in tr.times.iter_mut().zip(tr.states.iter_mut()) {
                *t = -*t;
                *st = st.reversed();
            }
            tr
        });
    }
    let n = s.dim();
    let speed = s0.speed();
    let sys = GeodesicSystem::new(&s.field, Some(speed));
    let h0 = hamiltonian_raw(&s.field, &s0.x, &s0.u);
    let mut tr = Trajectory { times: vec![0.0], states: vec![s0.clone()], energy: vec![h0], stats: TrajectoryStats::default() };
    let mut y = s0.to_vec();
    let mut drift: f64 = 0.0;
    let st = integrate_adaptive(&sys, &mut y, 0.0, t_end, settings.ctrl, |t, y| {
        let h = hamiltonian_raw(&s.field, &y[..n], &y[n..]);
        drift = drift.max(((h - h0) / h0.abs().max(1e-300)).abs());
        tr.times.push(t);
        tr.states.push(PhaseState::from_slice(y, n));
        tr.energy.push(h);
    })?;
    tr.stats = TrajectoryStats { steps: st.accepted, rejected: st.rejected, max_energy_drift: drift };
    Ok(tr)
}

/// Time-`t` map of the flow on any scalar type; the speed is held at
/// `‖u(0)‖`.
pub fn flow_map<T: Scalar, F: Field>(f: &F, y0: &[T], t: f64, ctrl: StepControl) -> Result<Vec<T>> {
    let n = f.dim();
    let speed = scalar::norm(&y0[n..2 * n]);
    let mut y = y0.to_vec();
    if t < 0.0 {
        for v in y[n..].iter_mut() {
            *v = -*v;
        }
        let sys = GeodesicSystem::new(f, Some(speed));
        integrate_adaptive(&sys, &mut y, 0.0, -t, ctrl, |_, _| {})?;
        for v in y[n..].iter_mut() {
            *v = -*v;
        }
        return Ok(y);
    }
    let sys = GeodesicSystem::new(f, Some(speed));
    integrate_adaptive(&sys, &mut y, 0.0, t, ctrl, |_, _| {})?;
    Ok(y)
}

#[derive(Clone, Debug, Serialize)]
pub struct HomogeneityReport {
    pub c: f64,
    pub t: f64,
    pub max_deviation: f64,
}

/// Compares `(x, u)` over `[0, t]` with `(x, c·u)` over `[0, t/c]` at
/// matched times.
pub fn check_energy_homogeneity<F: Field>(s: &Surface<F>, s0: &PhaseState, c: f64, t_end: f64, settings: &FlowSettings) -> Result<HomogeneityReport> {
    if c <= 0.0 {
        return Err(GeoError::InvalidArgument(format!("scale factor must be positive, got {c}")));
    }
    validate_state(s, s0)?;
    const SAMPLES: usize = 20;
    let f = &s.field;
    let mut a = s0.to_vec();
    let mut b = s0.scaled(c).to_vec();
    let n = s.dim();
    let sa = GeodesicSystem::new(f, Some(s0.speed()));
    let sb = GeodesicSystem::new(f, Some(c * s0.speed()));
    let mut dev: f64 = 0.0;
    for k in 0..SAMPLES {
        let (t0, t1) = (t_end * k as f64 / SAMPLES as f64, t_end * (k + 1) as f64 / SAMPLES as f64);
        integrate_adaptive(&sa, &mut a, t0, t1, settings.ctrl, |_, _| {})?;
        integrate_adaptive(&sb, &mut b, t0 / c, t1 / c, settings.ctrl, |_, _| {})?;
        let d: f64 = (0..n).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        dev = dev.max(d);
    }
    Ok(HomogeneityReport { c, t: t_end, max_deviation: dev })
}

/// Joachimsthal's first integral `‖Dx‖²⟨Du, u⟩` for `Q = ½(xᵀDx − 1)`.
pub fn joachimsthal(diag: &[f64], st: &PhaseState) -> f64 {
    let dx2: f64 = diag.iter().zip(&st.x).map(|(d, x)| (d * x).powi(2)).sum();
    let duu: f64 = diag.iter().zip(&st.u).map(|(d, u)| d * u * u).sum();
    dx2 * duu
}

//! Fermi coordinates along a geodesic segment.
//!
//! The base geodesic and a parallel orthonormal frame are integrated as one
//! system and sampled on a uniform grid. Between samples the geodesic is a
//! quintic Hermite interpolant (using `γ'' = κn`) and the frame a cubic one
//! (using `ė = ⟨Cγ', e⟩n`); both evaluate on any scalar type so chart
//! derivatives come from dual numbers.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::flow::{acceleration, project_phase, validate_state, GeodesicSystem, PhaseState};
use crate::integrator::{integrate_fixed, OdeSystem};
use crate::scalar::{self, dot, Dual, Scalar};
use crate::surface::{evaluate_geometry, grad, hess_ab, Field, Surface};

/// Target spacing of the chart samples.
pub const SAMPLE_SPACING: f64 = 0.02;

/// Geodesic `(x, u)` plus frame vectors `e_1..e_d`, optionally with the
/// Jacobi fundamental matrix `U` (row-major `2d × 2d`) appended.
pub struct FrameSystem<'a, F> {
    pub field: &'a F,
    pub n: usize,
    pub d: usize,
    pub with_jacobi: bool,
}

impl<'a, F: Field> FrameSystem<'a, F> {
    pub fn new(field: &'a F, with_jacobi: bool) -> Self {
        let n = field.dim();
        Self { field, n, d: n - 2, with_jacobi }
    }
    fn frame(&self, y: &[f64], j: usize) -> Vec<f64> {
        y[(2 + j) * self.n..(3 + j) * self.n].to_vec()
    }
    pub fn state_len(&self) -> usize {
        self.n * (2 + self.d) + if self.with_jacobi { 4 * self.d * self.d } else { 0 }
    }
    /// Jacobi matrix `R_ik = C(e_i,e_k)C(u,u) − C(e_i,u)C(u,e_k)`.
    pub fn curvature_block<T: Scalar>(&self, y: &[T]) -> Vec<Vec<T>> {
        let n = self.n;
        let x = &y[..n];
        let u = &y[n..2 * n];
        let (_, g) = grad(self.field, x);
        let gn = scalar::norm(&g);
        let e: Vec<&[T]> = (0..self.d).map(|j| &y[(2 + j) * n..(3 + j) * n]).collect();
        let kuu = hess_ab(self.field, x, u, u) / gn;
        let keu: Vec<T> = e.iter().map(|ej| hess_ab(self.field, x, ej, u) / gn).collect();
        let mut r = vec![vec![T::zero(); self.d]; self.d];
        for i in 0..self.d {
            for k in i..self.d {
                let kik = hess_ab(self.field, x, e[i], e[k]) / gn;
                let v = kik * kuu - keu[i] * keu[k];
                r[i][k] = v;
                r[k][i] = v;
            }
        }
        r
    }
}

impl<F: Field> OdeSystem<f64> for FrameSystem<'_, F> {
    fn dim(&self) -> usize {
        self.state_len()
    }
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.n;
        let x = &y[..n];
        let u = &y[n..2 * n];
        dy[..n].copy_from_slice(u);
        let a = acceleration(self.field, x, u)?;
        dy[n..2 * n].copy_from_slice(&a);
        let (_, g) = grad(self.field, x);
        let gg = dot(&g, &g);
        for j in 0..self.d {
            let e = self.frame(y, j);
            let c = hess_ab(self.field, x, u, &e) / gg;
            for i in 0..n {
                dy[(2 + j) * n + i] = -c * g[i];
            }
        }
        if self.with_jacobi {
            let d = self.d;
            let m = 2 * d;
            let off = n * (2 + d);
            let r = self.curvature_block(y);
            let uu = &y[off..off + m * m];
            let du = &mut dy[off..off + m * m];
            for col in 0..m {
                for i in 0..d {
                    du[i * m + col] = uu[(d + i) * m + col];
                    let mut s = 0.0;
                    for k in 0..d {
                        s += r[i][k] * uu[k * m + col];
                    }
                    du[(d + i) * m + col] = -s;
                }
            }
        }
        Ok(())
    }
    fn project(&self, y: &mut [f64]) -> Result<()> {
        let n = self.n;
        project_phase(self.field, y, n, Some(1.0))?;
        let (_, g) = grad(self.field, &y[..n]);
        let gn = scalar::norm(&g);
        let nrm: Vec<f64> = g.iter().map(|v| v / gn).collect();
        let u: Vec<f64> = y[n..2 * n].to_vec();
        let mut done: Vec<Vec<f64>> = vec![nrm, u];
        for j in 0..self.d {
            let mut e = self.frame(y, j);
            for b in &done {
                let c = dot(&e, b);
                for i in 0..n {
                    e[i] -= c * b[i];
                }
            }
            let en = scalar::norm(&e);
            for v in e.iter_mut() {
                *v /= en;
            }
            y[(2 + j) * n..(3 + j) * n].copy_from_slice(&e);
            done.push(e);
        }
        Ok(())
    }
}

/// Orthonormal basis of `T_xM ∩ u^⊥`.
pub fn complete_frame(normal: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    let un = scalar::norm(u);
    let mut basis: Vec<Vec<f64>> = vec![normal.to_vec(), u.iter().map(|v| v / un).collect()];
    let mut out = Vec::new();
    for k in 0..n {
        if out.len() == n - 2 {
            break;
        }
        let mut e: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i == k))).collect();
        for b in &basis {
            let c = dot(&e, b);
            for i in 0..n {
                e[i] -= c * b[i];
            }
        }
        let en = scalar::norm(&e);
        if en > 1e-3 {
            let e: Vec<f64> = e.iter().map(|v| v / en).collect();
            basis.push(e.clone());
            out.push(e);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct FermiChart {
    pub n: usize,
    pub d: usize,
    pub length: f64,
    pub spacing: f64,
    pub delta: f64,
    pub closed: bool,
    pub gamma: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub accel: Vec<Vec<f64>>,
    /// `frames[i][j]` is `e_j` at sample `i`.
    pub frames: Vec<Vec<Vec<f64>>>,
    pub frame_rates: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct ChartSettings {
    pub delta: Option<f64>,
    pub check_self_intersection: bool,
}

impl Default for ChartSettings {
    fn default() -> Self {
        Self { delta: None, check_self_intersection: true }
    }
}

pub fn build_chart<F: Field>(s: &Surface<F>, s0: &PhaseState, length: f64, settings: &ChartSettings) -> Result<FermiChart> {
    validate_state(s, s0)?;
    if (s0.speed() - 1.0).abs() > 1e-9 {
        return Err(GeoError::InvalidArgument(format!("base state must have unit speed, got {}", s0.speed())));
    }
    if !(length > 0.0) {
        return Err(GeoError::InvalidArgument(format!("segment length must be positive, got {length}")));
    }
    let n = s.dim();
    let d = n - 2;
    let geo = evaluate_geometry(s, &s0.x)?;
    let frame0 = complete_frame(&geo.normal, &s0.u);
    let m = (length / SAMPLE_SPACING).ceil().max(2.0) as usize;
    let h = length / m as f64;
    let sys = FrameSystem::new(&s.field, false);
    let mut y = s0.to_vec();
    for e in &frame0 {
        y.extend_from_slice(e);
    }
    let mut chart = FermiChart {
        n,
        d,
        length,
        spacing: h,
        delta: 0.0,
        closed: false,
        gamma: Vec::with_capacity(m + 1),
        velocity: Vec::with_capacity(m + 1),
        accel: Vec::with_capacity(m + 1),
        frames: Vec::with_capacity(m + 1),
        frame_rates: Vec::with_capacity(m + 1),
    };
    let mut loose = s.as_ref();
    loose.tol = s.tol.scaled(1e3);
    let mut max_curv: f64 = 0.0;
    let mut dy = vec![0.0; sys.state_len()];
    for i in 0..=m {
        if i > 0 {
            integrate_fixed(&sys, &mut y, h, 1)?;
        }
        sys.rhs(&y, &mut dy)?;
        chart.gamma.push(y[..n].to_vec());
        chart.velocity.push(y[n..2 * n].to_vec());
        chart.accel.push(dy[n..2 * n].to_vec());
        chart.frames.push((0..d).map(|j| y[(2 + j) * n..(3 + j) * n].to_vec()).collect());
        chart.frame_rates.push((0..d).map(|j| dy[(2 + j) * n..(3 + j) * n].to_vec()).collect());
        let g = evaluate_geometry(&loose, &y[..n])?;
        max_curv = max_curv.max(g.max_abs_curvature());
    }
    chart.delta = settings.delta.unwrap_or(0.1 / max_curv.max(1e-12));
    let gap = scalar::norm(&sub(&chart.gamma[m], &chart.gamma[0]));
    let vgap = scalar::norm(&sub(&chart.velocity[m], &chart.velocity[0]));
    chart.closed = gap < 1e-6 && vgap < 1e-6;
    if settings.check_self_intersection {
        chart.check_self_intersection()?;
    }
    Ok(chart)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn quintic<T: Scalar>(s: T) -> [T; 6] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let c = T::cst;
    [
        c(1.0) - s3.scale(10.0) + s4.scale(15.0) - s5.scale(6.0),
        s - s3.scale(6.0) + s4.scale(8.0) - s5.scale(3.0),
        s2.scale(0.5) - s3.scale(1.5) + s4.scale(1.5) - s5.scale(0.5),
        s3.scale(0.5) - s4 + s5.scale(0.5),
        -s3.scale(4.0) + s4.scale(7.0) - s5.scale(3.0),
        s3.scale(10.0) - s4.scale(15.0) + s5.scale(6.0),
    ]
}

fn quintic_d<T: Scalar>(s: T) -> [T; 6] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    [
        -s2.scale(30.0) + s3.scale(60.0) - s4.scale(30.0),
        T::one() - s2.scale(18.0) + s3.scale(32.0) - s4.scale(15.0),
        s - s2.scale(4.5) + s3.scale(6.0) - s4.scale(2.5),
        s2.scale(1.5) - s3.scale(4.0) + s4.scale(2.5),
        -s2.scale(12.0) + s3.scale(28.0) - s4.scale(15.0),
        s2.scale(30.0) - s3.scale(60.0) + s4.scale(30.0),
    ]
}

fn quintic_dd<T: Scalar>(s: T) -> [T; 6] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        -s.scale(60.0) + s2.scale(180.0) - s3.scale(120.0),
        -s.scale(36.0) + s2.scale(96.0) - s3.scale(60.0),
        T::one() - s.scale(9.0) + s2.scale(18.0) - s3.scale(10.0),
        s.scale(3.0) - s2.scale(12.0) + s3.scale(10.0),
        -s.scale(24.0) + s2.scale(84.0) - s3.scale(60.0),
        s.scale(60.0) - s2.scale(180.0) + s3.scale(120.0),
    ]
}

fn cubic<T: Scalar>(s: T) -> [T; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        T::one() - s2.scale(3.0) + s3.scale(2.0),
        s - s2.scale(2.0) + s3,
        s2.scale(3.0) - s3.scale(2.0),
        s3 - s2,
    ]
}

impl FermiChart {
    fn locate<T: Scalar>(&self, t: T) -> (usize, T) {
        let m = self.gamma.len() - 1;
        let mut t = t;
        if self.closed {
            let k = (t.re() / self.length).floor();
            t -= T::cst(k * self.length);
        }
        let i = ((t.re() / self.spacing).floor().max(0.0) as usize).min(m - 1);
        (i, (t - T::cst(i as f64 * self.spacing)).scale(1.0 / self.spacing))
    }

    pub fn samples(&self) -> usize {
        self.gamma.len()
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        i as f64 * self.spacing
    }

    /// `γ(t)` and `γ'(t)`.
    pub fn gamma_at<T: Scalar>(&self, t: T) -> (Vec<T>, Vec<T>) {
        let (i, s) = self.locate(t);
        let h = self.spacing;
        let b = quintic(s);
        let db = quintic_d(s);
        let (p0, p1) = (&self.gamma[i], &self.gamma[i + 1]);
        let (v0, v1) = (&self.velocity[i], &self.velocity[i + 1]);
        let (a0, a1) = (&self.accel[i], &self.accel[i + 1]);
        let mut x = Vec::with_capacity(self.n);
        let mut v = Vec::with_capacity(self.n);
        for k in 0..self.n {
            let c = [p0[k], h * v0[k], h * h * a0[k], h * h * a1[k], h * v1[k], p1[k]];
            let mut xs = T::zero();
            let mut vs = T::zero();
            for j in 0..6 {
                xs += b[j].scale(c[j]);
                vs += db[j].scale(c[j]);
            }
            x.push(xs);
            v.push(vs.scale(1.0 / h));
        }
        (x, v)
    }

    pub fn frame_at<T: Scalar>(&self, t: T) -> Vec<Vec<T>> {
        let (i, s) = self.locate(t);
        let h = self.spacing;
        let b = cubic(s);
        (0..self.d)
            .map(|j| {
                let (e0, e1) = (&self.frames[i][j], &self.frames[i + 1][j]);
                let (r0, r1) = (&self.frame_rates[i][j], &self.frame_rates[i + 1][j]);
                (0..self.n)
                    .map(|k| b[0].scale(e0[k]) + b[1].scale(h * r0[k]) + b[2].scale(e1[k]) + b[3].scale(h * r1[k]))
                    .collect()
            })
            .collect()
    }

    /// `γ''(t)` from the same quintic as [`Self::gamma_at`].
    pub fn accel_at<T: Scalar>(&self, t: T) -> Vec<T> {
        let (i, s) = self.locate(t);
        let h = self.spacing;
        let b = quintic_dd(s);
        let (p0, p1) = (&self.gamma[i], &self.gamma[i + 1]);
        let (v0, v1) = (&self.velocity[i], &self.velocity[i + 1]);
        let (a0, a1) = (&self.accel[i], &self.accel[i + 1]);
        (0..self.n)
            .map(|k| {
                let c = [p0[k], h * v0[k], h * h * a0[k], h * h * a1[k], h * v1[k], p1[k]];
                let mut acc = T::zero();
                for j in 0..6 {
                    acc += b[j].scale(c[j]);
                }
                acc.scale(1.0 / (h * h))
            })
            .collect()
    }

    /// Normal curvature of `M` along the base geodesic.
    pub fn kappa_at<T: Scalar, F: Field>(&self, f: &F, t: T) -> T {
        let (x, v) = self.gamma_at(t);
        let (_, g) = grad(f, &x);
        hess_ab(f, &x, &v, &v) / scalar::norm(&g)
    }

    /// Point of `M` with Fermi coordinates `(y0, y)`.
    pub fn point<T: Scalar, F: Field>(&self, f: &F, y0: T, y: &[T]) -> Result<Vec<T>> {
        let (x0, _) = self.gamma_at(y0);
        let e = self.frame_at(y0);
        let mut st = x0;
        for k in 0..self.n {
            let mut v = T::zero();
            for j in 0..self.d {
                v += y[j] * e[j][k];
            }
            st.push(v);
        }
        project_phase(f, &mut st, self.n, None)?;
        let sys = GeodesicSystem::new(f, None);
        integrate_fixed(&sys, &mut st, T::cst(0.25), 4)?;
        st.truncate(self.n);
        Ok(st)
    }

    /// Chart differential `∂x/∂(y0, y)` as an `n × (d+1)` matrix.
    pub fn differential<F: Field>(&self, f: &F, q: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.d + 1;
        let mut jac = DMatrix::zeros(self.n, m);
        for c in 0..m {
            let seeded: Vec<Dual<f64>> = (0..m).map(|i| Dual::new(q[i], f64::from(u8::from(i == c)))).collect();
            let x = self.point(f, seeded[0], &seeded[1..])?;
            for r in 0..self.n {
                jac[(r, c)] = x[r].eps;
            }
        }
        Ok(jac)
    }

    /// `∂²x/∂q_a∂q_b` for all pairs, as `hess[a][b]` ambient vectors.
    pub fn second_differential<F: Field>(&self, f: &F, q: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let m = self.d + 1;
        let mut out = vec![vec![vec![0.0; self.n]; m]; m];
        for a in 0..m {
            for b in a..m {
                let seeded: Vec<Dual<Dual<f64>>> = (0..m)
                    .map(|i| {
                        Dual::new(
                            Dual::new(q[i], f64::from(u8::from(i == b))),
                            Dual::new(f64::from(u8::from(i == a)), 0.0),
                        )
                    })
                    .collect();
                let x = self.point(f, seeded[0], &seeded[1..])?;
                let v: Vec<f64> = x.iter().map(|xi| xi.eps.eps).collect();
                out[a][b] = v.clone();
                out[b][a] = v;
            }
        }
        Ok(out)
    }

    fn check_radius(&self, y: &[f64]) -> Result<()> {
        let r = scalar::norm(y);
        if r >= self.delta {
            return Err(GeoError::OutsideChartRadius { radius: r, max: self.delta });
        }
        Ok(())
    }

    /// Foot point `t*` with `⟨x − γ(t*), γ'(t*)⟩ = 0`, searched in
    /// `[lo, hi]`, plus the fibre coordinates `⟨x − γ(t*), e_j(t*)⟩`.
    pub fn foot_point<T: Scalar>(&self, x: &[T], lo: f64, hi: f64) -> Option<(T, Vec<T>)> {
        let xr: Vec<f64> = x.iter().map(|v| v.re()).collect();
        let i0 = ((lo / self.spacing).floor().max(0.0)) as usize;
        let i1 = ((hi / self.spacing).ceil() as usize).min(self.gamma.len() - 1);
        if i0 > i1 {
            return None;
        }
        let mut best = (f64::INFINITY, i0);
        for i in i0..=i1 {
            let d2: f64 = self.gamma[i].iter().zip(&xr).map(|(a, b)| (a - b).powi(2)).sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        let mut t = self.sample_time(best.1);
        let residual = |t: f64| -> (f64, f64) {
            let (g, v): (Vec<f64>, Vec<f64>) = self.gamma_at(t);
            let a = self.accel_at(t);
            let dx = sub(&xr, &g);
            (dot(&dx, &v), -dot(&v, &v) + dot(&dx, &a))
        };
        for _ in 0..30 {
            let (r, dr) = residual(t);
            if dr.abs() < 1e-14 {
                return None;
            }
            let step = r / dr;
            t -= step;
            if step.abs() < 1e-15 * (1.0 + t.abs()) {
                break;
            }
        }
        if residual(t).0.abs() > 1e-12 {
            return None;
        }
        let mut tt = T::cst(t);
        for _ in 0..3 {
            let (g, v) = self.gamma_at(tt);
            let a = self.accel_at(tt);
            let dx: Vec<T> = x.iter().zip(&g).map(|(&p, &q)| p - q).collect();
            let r = dot(&dx, &v);
            let dr = -dot(&v, &v) + dot(&dx, &a);
            tt -= r / dr;
        }
        let (g, _) = self.gamma_at(tt);
        let e = self.frame_at(tt);
        let dx: Vec<T> = x.iter().zip(&g).map(|(&p, &q)| p - q).collect();
        let y = e.iter().map(|ej| dot(&dx, ej)).collect();
        Some((tt, y))
    }

    /// Inverse chart by damped Gauss–Newton seeded from the foot point.
    pub fn invert<F: Field>(&self, f: &F, x: &[f64]) -> Result<Vec<f64>> {
        let (t, y) = self
            .foot_point(x, -self.spacing, self.length + self.spacing)
            .ok_or(GeoError::ChartInversionFailed { residual: f64::NAN })?;
        let mut q = vec![t];
        q.extend(y);
        let target = DVector::from_column_slice(x);
        let mut res = f64::INFINITY;
        for _ in 0..20 {
            let p = self.point(f, q[0], &q[1..])?;
            let r = DVector::from_vec(p) - &target;
            res = r.norm();
            if res < 1e-13 {
                return Ok(q);
            }
            let j = self.differential(f, &q)?;
            let step = (j.transpose() * &j)
                .lu()
                .solve(&(j.transpose() * r))
                .ok_or(GeoError::ChartInversionFailed { residual: res })?;
            for (qi, si) in q.iter_mut().zip(step.iter()) {
                *qi -= si;
            }
        }
        if res < 1e-10 {
            Ok(q)
        } else {
            Err(GeoError::ChartInversionFailed { residual: res })
        }
    }

    /// Pulled-back metric `g = (∂x)ᵀ∂x`.
    pub fn metric<F: Field>(&self, f: &F, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_radius(&q[1..])?;
        let j = self.differential(f, q)?;
        Ok(j.transpose() * j)
    }

    /// `∂g_ij/∂q_k`, indexed `[k][(i, j)]`.
    pub fn metric_derivative<F: Field>(&self, f: &F, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_radius(&q[1..])?;
        let m = self.d + 1;
        let j = self.differential(f, q)?;
        let h = self.second_differential(f, q)?;
        Ok((0..m)
            .map(|k| {
                DMatrix::from_fn(m, m, |a, b| {
                    let ja: Vec<f64> = j.column(a).iter().copied().collect();
                    let jb: Vec<f64> = j.column(b).iter().copied().collect();
                    dot(&h[k][a], &jb) + dot(&ja, &h[k][b])
                })
            })
            .collect())
    }

    /// `C̃ = (∂x)ᵀ C (∂x)` with `C = ∇²Q/‖∇Q‖`.
    pub fn curvature_matrix<F: Field>(&self, f: &F, q: &[f64]) -> Result<DMatrix<f64>> {
        let j = self.differential(f, q)?;
        let x = self.point(f, q[0], &q[1..])?;
        let t = crate::surface::hessian(f, &x);
        let gn = scalar::norm(&t.grad);
        let c = DMatrix::from_fn(self.n, self.n, |a, b| t.hess[a][b] / gn);
        Ok(j.transpose() * c * j)
    }

    fn param_gap(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        if self.closed {
            d.min(self.length - d)
        } else {
            d
        }
    }

    pub fn check_self_intersection(&self) -> Result<()> {
        let m = self.gamma.len();
        let window = 4.0 * self.delta;
        for i in 0..m {
            for j in (i + 1)..m {
                let (ti, tj) = (self.sample_time(i), self.sample_time(j));
                if self.param_gap(ti, tj) <= window {
                    continue;
                }
                let dist = scalar::norm(&sub(&self.gamma[i], &self.gamma[j]));
                if dist < 2.0 * self.delta {
                    return Err(GeoError::SelfIntersectingTube { t1: ti, t2: tj, dist });
                }
            }
        }
        Ok(())
    }

    /// Residuals of frame orthonormality and parallelism over the samples.
    pub fn frame_defects<F: Field>(&self, f: &F) -> (f64, f64) {
        let mut ortho: f64 = 0.0;
        let mut par: f64 = 0.0;
        for i in 0..self.gamma.len() {
            let v = &self.velocity[i];
            for a in 0..self.d {
                let ea = &self.frames[i][a];
                ortho = ortho.max(dot(ea, v).abs());
                for b in 0..self.d {
                    let want = if a == b { 1.0 } else { 0.0 };
                    ortho = ortho.max((dot(ea, &self.frames[i][b]) - want).abs());
                }
                // tangential part of the frame derivative
                let (_, g) = grad(f, &self.gamma[i]);
                let gn = scalar::norm(&g);
                let r = &self.frame_rates[i][a];
                let rn = dot(r, &g) / gn;
                let tang: f64 = r.iter().zip(&g).map(|(ri, gi)| (ri - rn * gi / gn).powi(2)).sum::<f64>().sqrt();
                par = par.max(tang);
            }
        }
        (ortho, par)
    }

    /// Base geodesic in chart coordinates at sample times; returns the
    /// largest deviation from `(t, 0)`.
    pub fn base_residual<F: Field>(&self, f: &F, stride: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in (0..self.gamma.len()).step_by(stride.max(1)) {
            let q = self.invert(f, &self.gamma[i])?;
            let t = self.sample_time(i);
            let mut dev = self.param_gap(q[0], t);
            for y in &q[1..] {
                dev = dev.max(y.abs());
            }
            worst = worst.max(dev);
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("chart serializes")
    }
}

/// Splits a variation `(δx, δu)` at `(x, u)` into the horizontal part
/// `δx` and the covariant part `δu − ⟨δu, n⟩n`.
pub fn hv_split<F: Field>(s: &Surface<F>, st: &PhaseState, dx: &[f64], du: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_state(s, st)?;
    let (_, g) = grad(&s.field, &st.x);
    let gg = dot(&g, &g);
    let a = dot(dx, &g) / gg;
    let b = dot(du, &g) / gg;
    let h = dx.iter().zip(&g).map(|(v, gi)| v - a * gi).collect();
    let w = du.iter().zip(&g).map(|(v, gi)| v - b * gi).collect();
    Ok((h, w))
}

/// Inverse of [`hv_split`]: the tangent variation `(h, w + ⟨Ch, u⟩n)`.
pub fn hv_join<F: Field>(s: &Surface<F>, st: &PhaseState, h: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, g) = grad(&s.field, &st.x);
    let gg = dot(&g, &g);
    let c = hess_ab(&s.field, &st.x, h, &st.u) / gg;
    let du = w.iter().zip(&g).map(|(wi, gi)| wi - c * gi).collect();
    Ok((h.to_vec(), du))
}

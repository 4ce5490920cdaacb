//! Linearized flow, the Jacobi equation in a parallel frame, and the
//! endpoint response to forcing concentrated at one time.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::fermi::{hv_join, hv_split, FermiChart, FrameSystem};
use crate::flow::{flow_map, validate_state, PhaseState};
use crate::integrator::{integrate_adaptive, StepControl};
use crate::scalar::{dot, Dual, Scalar};
use crate::surface::{Field, Surface};

/// Jacobian of the time-`t` flow map at `s0`, as a `2n × 2n` matrix, and
/// the image state.
pub fn linearized_flow<F: Field>(s: &Surface<F>, s0: &PhaseState, t_end: f64, ctrl: StepControl) -> Result<(PhaseState, DMatrix<f64>)> {
    validate_state(s, s0)?;
    let y0 = s0.to_vec();
    let m = y0.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut end = Vec::new();
    for c in 0..m {
        let seeded: Vec<Dual<f64>> = y0.iter().enumerate().map(|(i, &v)| Dual::new(v, f64::from(u8::from(i == c)))).collect();
        let y = flow_map(&s.field, &seeded, t_end, ctrl)?;
        for r in 0..m {
            jac[(r, c)] = y[r].eps;
        }
        if c == 0 {
            end = y.iter().map(|v| v.re).collect();
        }
    }
    Ok((PhaseState::from_slice(&end, s0.x.len()), jac))
}

/// Pushes one tangent vector `(δx, δu)` through the flow.
pub fn push_variation<F: Field>(s: &Surface<F>, s0: &PhaseState, dx: &[f64], du: &[f64], t_end: f64, ctrl: StepControl) -> Result<(PhaseState, Vec<f64>, Vec<f64>)> {
    let n = s0.x.len();
    let seeded: Vec<Dual<f64>> = s0.to_vec().iter().zip(dx.iter().chain(du)).map(|(&v, &e)| Dual::new(v, e)).collect();
    let y = flow_map(&s.field, &seeded, t_end, ctrl)?;
    let st = PhaseState::from_slice(&y.iter().map(|v| v.re).collect::<Vec<_>>(), n);
    Ok((st, y[..n].iter().map(|v| v.eps).collect(), y[n..].iter().map(|v| v.eps).collect()))
}

#[derive(Clone, Debug, Serialize)]
pub struct FundamentalMatrix {
    pub d: usize,
    pub times: Vec<f64>,
    pub u: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

fn system_matrix(r: &DMatrix<f64>) -> DMatrix<f64> {
    let d = r.nrows();
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        a[(i, d + i)] = 1.0;
        for k in 0..d {
            a[(d + i, k)] = -r[(i, k)];
        }
    }
    a
}

impl FundamentalMatrix {
    pub fn last(&self) -> &DMatrix<f64> {
        self.u.last().expect("fundamental matrix holds U(0)")
    }

    /// `U(t)`, exact at recorded times and cubic Hermite in between.
    pub fn at(&self, t: f64) -> Result<DMatrix<f64>> {
        let (lo, hi) = (self.times[0], *self.times.last().expect("non-empty"));
        if t < lo - 1e-12 || t > hi + 1e-12 {
            return Err(GeoError::InvalidArgument(format!("time {t} outside [{lo}, {hi}]")));
        }
        if let Some(i) = self.times.iter().position(|&ti| (ti - t).abs() <= 1e-12) {
            return Ok(self.u[i].clone());
        }
        let i = self.times.partition_point(|&ti| ti <= t) - 1;
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let d0 = system_matrix(&self.r[i]) * &self.u[i];
        let d1 = system_matrix(&self.r[i + 1]) * &self.u[i + 1];
        Ok(&self.u[i] * (1.0 - 3.0 * s2 + 2.0 * s3)
            + d0 * (h * (s - 2.0 * s2 + s3))
            + &self.u[i + 1] * (3.0 * s2 - 2.0 * s3)
            + d1 * (h * (s3 - s2)))
    }

    pub fn max_det_defect(&self) -> f64 {
        self.u.iter().map(|m| (m.determinant() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest residual of `d/dt U⁻¹ = −U⁻¹A` by central differences over
    /// interior recorded times.
    pub fn inverse_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..self.times.len().saturating_sub(1) {
            let (ta, tb) = (self.times[i - 1], self.times[i + 1]);
            if tb - ta > 0.05 {
                continue;
            }
            let (Some(ia), Some(ib), Some(ic)) = (self.u[i - 1].clone().try_inverse(), self.u[i + 1].clone().try_inverse(), self.u[i].clone().try_inverse()) else {
                continue;
            };
            let lhs = (ib - ia) / (tb - ta);
            let rhs = -(ic * system_matrix(&self.r[i]));
            worst = worst.max((lhs - rhs).abs().max());
        }
        worst
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.times
                .iter()
                .zip(&self.u)
                .map(|(t, u)| {
                    let rows: Vec<Vec<f64>> = (0..u.nrows()).map(|r| u.row(r).iter().copied().collect()).collect();
                    serde_json::json!({ "t": t, "U": rows })
                })
                .collect(),
        )
    }
}

/// Solves `U̇ = [[0, I], [−R(t), 0]]U`, `U(0) = I` along the chart's base
/// geodesic, recording at every accepted step and at each of `marks`.
pub fn jacobi_fundamental<F: Field>(s: &Surface<F>, chart: &FermiChart, length: f64, marks: &[f64], ctrl: StepControl) -> Result<FundamentalMatrix> {
    let d = chart.d;
    let m = 2 * d;
    let sys = FrameSystem::new(&s.field, true);
    let mut y = chart.gamma[0].clone();
    y.extend_from_slice(&chart.velocity[0]);
    for e in &chart.frames[0] {
        y.extend_from_slice(e);
    }
    let off = y.len();
    y.extend(DMatrix::<f64>::identity(m, m).transpose().iter());
    let read_u = |y: &[f64]| DMatrix::from_row_slice(m, m, &y[off..off + m * m]);
    let read_r = |y: &[f64]| {
        let r = sys.curvature_block(y);
        DMatrix::from_fn(d, d, |i, k| r[i][k])
    };
    let mut fund = FundamentalMatrix { d, times: vec![0.0], u: vec![read_u(&y)], r: vec![read_r(&y)] };
    if length <= 0.0 {
        return Ok(fund);
    }
    let mut stops: Vec<f64> = marks.iter().copied().filter(|&t| t > 0.0 && t < length).collect();
    stops.push(length);
    stops.sort_by(f64::total_cmp);
    stops.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut t0 = 0.0;
    for &t1 in &stops {
        let mut trace = Vec::new();
        integrate_adaptive(&sys, &mut y, t0, t1, ctrl, |t, y| trace.push((t, y.to_vec())))?;
        for (t, y) in trace {
            fund.times.push(t);
            fund.u.push(read_u(&y));
            fund.r.push(read_r(&y));
        }
        t0 = t1;
    }
    Ok(fund)
}

/// `U(L)U⁻¹(t₀)(β; α)`.
pub fn endpoint_response(fund: &FundamentalMatrix, t0: f64, alpha: &[f64], beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = fund.d;
    if alpha.len() != d || beta.len() != d {
        return Err(GeoError::DimensionMismatch { expected: d, got: alpha.len().max(beta.len()) });
    }
    let ut0 = fund.at(t0)?;
    let inv = ut0.try_inverse().ok_or(GeoError::SingularU { t: t0 })?;
    let v = DVector::from_iterator(2 * d, beta.iter().chain(alpha).copied());
    let out = fund.last() * inv * v;
    Ok((out.rows(0, d).iter().copied().collect(), out.rows(d, d).iter().copied().collect()))
}

/// Reduced linearized flow in the chart frame: the matrix taking Jacobi
/// data `(J, J')` at `t = 0` to `t = length`, built by pushing each frame
/// variation through the dual flow.
pub fn reduced_linearization<F: Field>(s: &Surface<F>, chart: &FermiChart, length: f64, ctrl: StepControl) -> Result<DMatrix<f64>> {
    let d = chart.d;
    let s0 = PhaseState::new(&chart.gamma[0], &chart.velocity[0]);
    let e0 = &chart.frames[0];
    let (_, e1) = frame_at_time(chart, length);
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for c in 0..2 * d {
        let zero = vec![0.0; chart.n];
        let (h, w) = if c < d { (e0[c].clone(), zero) } else { (zero, e0[c - d].clone()) };
        let (dx, du) = hv_join(s, &s0, &h, &w)?;
        let (end, px, pu) = push_variation(s, &s0, &dx, &du, length, ctrl)?;
        let (h1, w1) = hv_split(s, &end, &px, &pu)?;
        for j in 0..d {
            out[(j, c)] = dot(&h1, &e1[j]);
            out[(d + j, c)] = dot(&w1, &e1[j]);
        }
    }
    Ok(out)
}

fn frame_at_time(chart: &FermiChart, t: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (x, _) = chart.gamma_at(t);
    (x, chart.frame_at(t))
}

/// Unit-mass bump `c·exp(−1/(1−t²))` on `(−1, 1)`.
pub fn mollifier<T: Scalar>(t: T) -> T {
    let r = t.re();
    if r.abs() >= 1.0 {
        return T::zero();
    }
    let one = T::one();
    (-(one / (one - t * t))).exp().scale(mollifier_mass().recip())
}

/// Derivative of [`mollifier`].
pub fn mollifier_d<T: Scalar>(t: T) -> T {
    if t.re().abs() >= 1.0 {
        return T::zero();
    }
    let w = T::one() - t * t;
    mollifier(t) * (-(t.scale(2.0)) / (w * w))
}

/// `φ_{ε₀}(t) = φ(t/ε₀)/ε₀`.
pub fn mollifier_scaled<T: Scalar>(t: T, eps0: f64) -> T {
    mollifier(t.scale(1.0 / eps0)).scale(1.0 / eps0)
}

pub fn mollifier_scaled_d<T: Scalar>(t: T, eps0: f64) -> T {
    mollifier_d(t.scale(1.0 / eps0)).scale(1.0 / (eps0 * eps0))
}

/// `∫ exp(−1/(1−t²)) dt` over `(−1, 1)`, by composite Simpson.
pub fn mollifier_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        let n = 20_000;
        let h = 2.0 / n as f64;
        let f = |t: f64| if t.abs() >= 1.0 { 0.0 } else { (-1.0 / (1.0 - t * t)).exp() };
        let mut acc = f(-1.0) + f(1.0);
        for i in 1..n {
            let t = -1.0 + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        acc * h / 3.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fermi::{build_chart, ChartSettings};
    use std::f64::consts::PI;

    #[test]
    fn mollifier_has_unit_mass() {
        assert!((mollifier_mass() - 0.443_993_816_168_079_4).abs() < 1e-12);
        let n = 4000;
        let h = 2.0 / n as f64;
        let s: f64 = (0..n).map(|i| mollifier(-1.0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((s - 1.0).abs() < 1e-9);
        let t = 0.3;
        let fd = (mollifier(t + 1e-6) - mollifier(t - 1e-6)) / 2e-6;
        assert!((fd - mollifier_d(t)).abs() < 1e-7);
    }

    #[test]
    fn sphere_jacobi_is_a_rotation() {
        let s = Surface::sphere();
        let s0 = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let chart = build_chart(&s, &s0, PI, &ChartSettings::default()).unwrap();
        let fund = jacobi_fundamental(&s, &chart, PI, &[PI / 4.0], StepControl::default()).unwrap();
        assert!((fund.last() + DMatrix::identity(2, 2)).abs().max() < 1e-9);
        assert!(fund.max_det_defect() < 1e-10);
        let u = fund.at(PI / 4.0).unwrap();
        assert!((u[(0, 1)] - (PI / 4.0).sin()).abs() < 1e-10);
    }

    #[test]
    fn endpoint_response_rotation() {
        let s = Surface::sphere();
        let s0 = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let chart = build_chart(&s, &s0, PI / 2.0, &ChartSettings::default()).unwrap();
        let fund = jacobi_fundamental(&s, &chart, PI / 2.0, &[PI / 4.0], StepControl::default()).unwrap();
        let (j, jp) = endpoint_response(&fund, PI / 4.0, &[1.0], &[0.0]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((j[0] - r).abs() < 1e-9 && (jp[0] - r).abs() < 1e-9, "{j:?} {jp:?}");
        let (j, jp) = endpoint_response(&fund, PI / 4.0, &[0.0], &[0.0]).unwrap();
        assert_eq!((j[0], jp[0]), (0.0, 0.0));
    }

    #[test]
    fn zero_time_linearization_is_identity() {
        let s = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
        let s0 = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]);
        let (_, j) = linearized_flow(&s, &s0, 0.0, StepControl::default()).unwrap();
        // projection contract: tangent directions are preserved
        let v = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.8, -0.6]);
        assert!((&j * &v - &v).norm() < 1e-12);
    }
}

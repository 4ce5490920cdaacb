//! Gragg–Bulirsch–Stoer extrapolation with post-step projection, and
//! Hénon-style event location.
//!
//! Step sizes are chosen from real parts only, so a run on dual numbers
//! takes exactly the same steps as the plain run and its tangent part is
//! the exact derivative of the discrete flow.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::scalar::Scalar;

pub trait OdeSystem<T: Scalar> {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[T], dy: &mut [T]) -> Result<()>;
    /// Restores constraints after an accepted step.
    fn project(&self, _y: &mut [T]) -> Result<()> {
        Ok(())
    }
    /// Leading components that enter the error norm.
    fn error_dim(&self) -> usize {
        self.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-12, h_init: 0.05, h_min: 1e-10, h_max: 0.5, max_steps: 2_000_000 }
    }
}

impl StepControl {
    pub fn scaled(mut self, s: f64) -> Self {
        self.rtol *= s;
        self.atol *= s;
        self
    }
}

const SEQ: [usize; 4] = [2, 4, 6, 8];

fn midpoint<T: Scalar, S: OdeSystem<T>>(sys: &S, y: &[T], f0: &[T], h: T, n: usize) -> Result<Vec<T>> {
    let hs = h / T::cst(n as f64);
    let two_hs = hs + hs;
    let mut z0 = y.to_vec();
    let mut z1: Vec<T> = y.iter().zip(f0).map(|(&a, &b)| a + hs * b).collect();
    let mut f = vec![T::zero(); y.len()];
    for _ in 1..n {
        sys.rhs(&z1, &mut f)?;
        for i in 0..y.len() {
            let z2 = z0[i] + two_hs * f[i];
            z0[i] = z1[i];
            z1[i] = z2;
        }
    }
    Ok(z1)
}

/// One extrapolated step of size `h`; returns the new state (not yet
/// projected) and the scaled error norm of the order-8 result.
pub fn gbs_step<T: Scalar, S: OdeSystem<T>>(sys: &S, y: &[T], h: T, ctrl: &StepControl) -> Result<(Vec<T>, f64)> {
    let mut f0 = vec![T::zero(); y.len()];
    sys.rhs(y, &mut f0)?;
    let mut table: Vec<Vec<Vec<T>>> = Vec::with_capacity(SEQ.len());
    for (j, &nj) in SEQ.iter().enumerate() {
        let mut row = vec![midpoint(sys, y, &f0, h, nj)?];
        for k in 1..=j {
            let ratio = (nj as f64 / SEQ[j - k] as f64).powi(2) - 1.0;
            let prev = &table[j - 1][k - 1];
            let cur = &row[k - 1];
            let next: Vec<T> = cur.iter().zip(prev).map(|(&c, &p)| c + (c - p).scale(1.0 / ratio)).collect();
            row.push(next);
        }
        table.push(row);
    }
    let last = table.pop().expect("four rows");
    let best = last[SEQ.len() - 1].clone();
    let lower = &last[SEQ.len() - 2];
    let m = sys.error_dim();
    let mut acc = 0.0;
    for i in 0..m {
        let sc = ctrl.atol + ctrl.rtol * y[i].re().abs().max(best[i].re().abs());
        let e = (best[i].re() - lower[i].re()) / sc;
        acc += e * e;
    }
    let err = (acc / m as f64).sqrt();
    if !err.is_finite() {
        return Ok((best, f64::INFINITY));
    }
    Ok((best, err))
}

/// Adaptive driver holding the current step size between calls.
pub struct Stepper {
    pub ctrl: StepControl,
    pub h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Stepper {
    pub fn new(ctrl: StepControl) -> Self {
        Self { h: ctrl.h_init, ctrl, accepted: 0, rejected: 0 }
    }

    /// Advances `y` by one accepted, projected step no longer than
    /// `h_cap`; returns the step taken.
    pub fn step<T: Scalar, S: OdeSystem<T>>(&mut self, sys: &S, y: &mut Vec<T>, t: f64, h_cap: f64) -> Result<f64> {
        loop {
            let h = self.h.min(h_cap).min(self.ctrl.h_max);
            if h < self.ctrl.h_min && h < h_cap {
                return Err(GeoError::StepSizeUnderflow { t, h });
            }
            let (mut ynew, err) = match gbs_step(sys, y, T::cst(h), &self.ctrl) {
                Ok(r) => r,
                Err(GeoError::SingularGradient { .. }) | Err(GeoError::OffSurface { .. }) => (y.clone(), f64::INFINITY),
                Err(e) => return Err(e),
            };
            if err <= 1.0 {
                sys.project(&mut ynew)?;
                *y = ynew;
                self.accepted += 1;
                let fac = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-1.0 / 7.0)).clamp(0.2, 4.0) };
                if h >= self.h.min(self.ctrl.h_max) * 0.999 || fac < 1.0 {
                    self.h = h * fac;
                }
                return Ok(h);
            }
            self.rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-1.0 / 7.0)).clamp(0.2, 0.9) } else { 0.25 };
            self.h = h * fac;
            if self.accepted + self.rejected > self.ctrl.max_steps {
                return Err(GeoError::StepSizeUnderflow { t, h: self.h });
            }
        }
    }
}

/// Integrates from `t0` to `t1` (either direction is not supported:
/// `t1 >= t0`), calling `observe` after each accepted step.
pub fn integrate_adaptive<T, S, O>(sys: &S, y: &mut Vec<T>, t0: f64, t1: f64, ctrl: StepControl, mut observe: O) -> Result<Stepper>
where
    T: Scalar,
    S: OdeSystem<T>,
    O: FnMut(f64, &[T]),
{
    let mut st = Stepper::new(ctrl);
    let mut t = t0;
    while t1 - t > 1e-14 * (1.0 + t1.abs()) {
        let h = st.step(sys, y, t, t1 - t)?;
        t = if t1 - (t + h) <= 1e-14 * (1.0 + t1.abs()) { t1 } else { t + h };
        observe(t, y);
        if st.accepted > ctrl.max_steps {
            return Err(GeoError::StepSizeUnderflow { t, h });
        }
    }
    Ok(st)
}

/// `n` equal extrapolated steps with projection, no error control.
pub fn integrate_fixed<T: Scalar, S: OdeSystem<T>>(sys: &S, y: &mut Vec<T>, h: T, n: usize) -> Result<()> {
    let ctrl = StepControl::default();
    for _ in 0..n {
        let (mut ynew, _) = gbs_step(sys, y, h, &ctrl)?;
        sys.project(&mut ynew)?;
        *y = ynew;
    }
    Ok(())
}

/// Section function `g(y) = ⟨c, y⟩ - offset`, linear in the state.
#[derive(Clone, Debug)]
pub struct LinearSection {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl LinearSection {
    pub fn value<T: Scalar>(&self, y: &[T]) -> T {
        let mut s = T::cst(-self.offset);
        for (c, v) in self.coeffs.iter().zip(y) {
            if *c != 0.0 {
                s += v.scale(*c);
            }
        }
        s
    }
}

/// The system with `g` as independent variable, augmented by time.
struct Henon<'a, S> {
    inner: &'a S,
    section: &'a LinearSection,
}

impl<T: Scalar, S: OdeSystem<T>> OdeSystem<T> for Henon<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }
    fn rhs(&self, y: &[T], dy: &mut [T]) -> Result<()> {
        let n = self.inner.dim();
        self.inner.rhs(&y[..n], &mut dy[..n])?;
        let gdot = self.section.value(&dy[..n]) + T::cst(self.section.offset);
        let inv = T::one() / gdot;
        for v in dy[..n].iter_mut() {
            *v *= inv;
        }
        dy[n] = inv;
        Ok(())
    }
    fn project(&self, y: &mut [T]) -> Result<()> {
        let n = self.inner.dim();
        self.inner.project(&mut y[..n])
    }
}

/// Moves `y` (at time `t`) onto `g = 0` by integrating in the section
/// variable; differentiable in the initial data.
pub fn locate_event<T: Scalar, S: OdeSystem<T>>(sys: &S, section: &LinearSection, y: &[T], t: T, tol: f64) -> Result<(Vec<T>, T)> {
    let h = Henon { inner: sys, section };
    let mut z = y.to_vec();
    z.push(t);
    let n = sys.dim();
    let g0 = section.value(&z[..n]);
    integrate_fixed(&h, &mut z, -g0.scale(0.5), 2)?;
    for _ in 0..6 {
        let g = section.value(&z[..n]);
        if g.re().abs() <= tol {
            let t = z.pop().expect("time component");
            return Ok((z, t));
        }
        integrate_fixed(&h, &mut z, -g, 1)?;
    }
    let g = section.value(&z[..n]);
    if g.re().abs() <= tol {
        let t = z.pop().expect("time component");
        return Ok((z, t));
    }
    Err(GeoError::NewtonDiverged { iters: 8, residual: g.re().abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;

    struct Osc;
    impl<T: Scalar> OdeSystem<T> for Osc {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, y: &[T], dy: &mut [T]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let mut y = vec![1.0, 0.0];
        let st = integrate_adaptive(&Osc, &mut y, 0.0, 2.0 * std::f64::consts::PI, StepControl::default(), |_, _| {}).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-11 && y[1].abs() < 1e-11, "{y:?}");
        assert!(st.accepted > 5);
    }

    #[test]
    fn fixed_steps_reach_eighth_order() {
        let run = |n: usize| {
            let mut y = vec![1.0, 0.0];
            integrate_fixed(&Osc, &mut y, 2.0 / n as f64, n).unwrap();
            (y[0] - 2f64.cos()).abs()
        };
        let (e1, e2) = (run(2), run(4));
        assert!(e1 / e2 > 150.0, "{e1} {e2}");
    }

    #[test]
    fn dual_run_gives_flow_derivative() {
        let mut y = vec![Dual::variable(1.0), Dual::constant(0.0)];
        integrate_adaptive(&Osc, &mut y, 0.0, 1.3, StepControl::default(), |_, _| {}).unwrap();
        assert!((y[0].eps - 1.3f64.cos()).abs() < 1e-11);
        assert!((y[1].eps + 1.3f64.sin()).abs() < 1e-11);
    }

    #[test]
    fn event_location_finds_quarter_period() {
        // y0 = cos t crosses zero at pi/2
        let sec = LinearSection { coeffs: vec![1.0, 0.0], offset: 0.0 };
        let mut y = vec![1.0, 0.0];
        integrate_fixed(&Osc, &mut y, 0.15, 10).unwrap();
        let (z, t) = locate_event(&Osc, &sec, &y, 1.5, 1e-13).unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-11, "{t}");
        assert!((z[1] + 1.0).abs() < 1e-11);
    }
}

//! Implicit hypersurfaces `M = {Q = 0}` and their pointwise geometry.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::expr::Expr;
use crate::scalar::{self, dot, Dual, Scalar};

/// A smooth scalar field on ℝⁿ that can be evaluated on any scalar type,
/// which is what makes every derivative in the crate exact.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn eval<T: Scalar>(&self, x: &[T]) -> T;
}

impl Field for Expr {
    fn dim(&self) -> usize {
        Expr::dim(self)
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        Expr::eval(self, x)
    }
}

impl<F: Field> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        (**self).eval(x)
    }
}

/// `c·Q` for a constant `c`.
#[derive(Clone, Debug)]
pub struct Scaled<F> {
    pub inner: F,
    pub factor: f64,
}

impl<F: Field> Field for Scaled<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.inner.eval(x).scale(self.factor)
    }
}

/// `Q̃ = Q / ‖∇Q‖`, which has unit gradient on `M`.
#[derive(Clone, Debug)]
pub struct Normalized<F> {
    pub inner: F,
}

impl<F: Field> Field for Normalized<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        let (q, g) = grad(&self.inner, x);
        q / scalar::norm(&g)
    }
}

pub fn grad<T: Scalar, F: Field>(f: &F, x: &[T]) -> (T, Vec<T>) {
    scalar::gradient(x, |v| f.eval(v))
}

/// `aᵀ ∇²Q(x) b` from a single nested-dual evaluation.
pub fn hess_ab<T: Scalar, F: Field>(f: &F, x: &[T], a: &[T], b: &[T]) -> T {
    let seeded: Vec<Dual<Dual<T>>> = x
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&xi, (&ai, &bi))| Dual::new(Dual::new(xi, bi), Dual::new(ai, T::zero())))
        .collect();
    f.eval(&seeded).eps.eps
}

pub fn hessian<T: Scalar, F: Field>(f: &F, x: &[T]) -> scalar::Taylor2<T> {
    scalar::taylor2(x, |v| f.eval(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub surface: f64,
    pub grad: f64,
    pub tangent: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { surface: 1e-9, grad: 1e-10, tangent: 1e-8 }
    }
}

impl Tolerances {
    pub fn scaled(self, s: f64) -> Self {
        Self { surface: self.surface * s, grad: self.grad * s, tangent: self.tangent * s }
    }
}

/// A defining function together with the tolerances and bounding box
/// under which it is used.
#[derive(Clone, Debug)]
pub struct Surface<F = Expr> {
    pub field: F,
    pub tol: Tolerances,
    /// Half-width of the box `[-b, b]ⁿ` that contains the surface.
    pub bbox: f64,
}

impl<F: Field> Surface<F> {
    pub fn new(field: F) -> Self {
        Self { field, tol: Tolerances::default(), bbox: 4.0 }
    }
    pub fn with_bbox(mut self, b: f64) -> Self {
        self.bbox = b;
        self
    }
    pub fn dim(&self) -> usize {
        self.field.dim()
    }
    pub fn value(&self, x: &[f64]) -> f64 {
        self.field.eval(x)
    }
    pub fn as_ref(&self) -> Surface<&F> {
        Surface { field: &self.field, tol: self.tol, bbox: self.bbox }
    }
}

impl Surface<Expr> {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        Ok(Self::new(Expr::new(src, dim)?))
    }
    pub fn sphere() -> Self {
        Self::parse("0.5*(x1^2 + x2^2 + x3^2 - 1)", 3).expect("valid expression").with_bbox(2.0)
    }
    /// Triaxial ellipsoid with semi-axes `(a, b, c)`.
    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Self {
        let src = format!("0.5*(x1^2/{} + x2^2/{} + x3^2/{} - 1)", a * a, b * b, c * c);
        Self::parse(&src, 3).expect("valid expression").with_bbox(1.5 * a.max(b).max(c))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointGeometry {
    pub x: Vec<f64>,
    pub q: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    /// Inward unit normal `-∇Q/‖∇Q‖`.
    pub normal: Vec<f64>,
    /// `∇²Q / ‖∇Q‖`.
    pub curvature: Vec<Vec<f64>>,
    pub tol: Tolerances,
}

pub fn evaluate_geometry<F: Field>(s: &Surface<F>, x: &[f64]) -> Result<PointGeometry> {
    if x.len() != s.dim() {
        return Err(GeoError::DimensionMismatch { expected: s.dim(), got: x.len() });
    }
    let t = hessian(&s.field, x);
    let gn = scalar::norm(&t.grad);
    if gn <= s.tol.grad || !gn.is_finite() {
        return Err(GeoError::SingularGradient { norm: gn, tol: s.tol.grad });
    }
    if t.value.abs() > s.tol.surface {
        return Err(GeoError::OffSurface { residual: t.value.abs(), tol: s.tol.surface });
    }
    Ok(PointGeometry {
        x: x.to_vec(),
        q: t.value,
        normal: t.grad.iter().map(|g| -g / gn).collect(),
        curvature: t.hess.iter().map(|r| r.iter().map(|h| h / gn).collect()).collect(),
        grad: t.grad,
        grad_norm: gn,
        tol: s.tol,
    })
}

impl PointGeometry {
    fn c_times(&self, u: &[f64]) -> Vec<f64> {
        self.curvature.iter().map(|row| dot(row, u)).collect()
    }

    /// `(S(x)u, κ(x,u))`.
    pub fn shape_and_curvature(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let un = scalar::norm(u);
        let r = dot(u, &self.grad).abs();
        if r > self.tol.tangent * un * self.grad_norm {
            return Err(GeoError::NotTangent { residual: r });
        }
        let cu = self.c_times(u);
        let cn = dot(&cu, &self.normal);
        let su = cu.iter().zip(&self.normal).map(|(c, n)| c - cn * n).collect();
        Ok((su, dot(&cu, u)))
    }

    /// Largest principal curvature in absolute value.
    pub fn max_abs_curvature(&self) -> f64 {
        let n = self.x.len();
        let p = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - self.normal[i] * self.normal[j]);
        let c = DMatrix::from_fn(n, n, |i, j| self.curvature[i][j]);
        let m = &p * c * &p;
        let m = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(m).eigenvalues.amax()
    }

    /// Smallest normal curvature over unit tangent directions and its
    /// direction, from the tangential restriction of `C`.
    pub fn min_curvature(&self) -> (f64, Vec<f64>) {
        let n = self.x.len();
        let p = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - self.normal[i] * self.normal[j]);
        let pe = SymmetricEigen::new(p);
        let cols: Vec<usize> = (0..n).filter(|&k| pe.eigenvalues[k] > 0.5).collect();
        let b = DMatrix::from_fn(n, cols.len(), |i, k| pe.eigenvectors[(i, cols[k])]);
        let c = DMatrix::from_fn(n, n, |i, j| self.curvature[i][j]);
        let m = b.transpose() * c * &b;
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let i = eig.eigenvalues.imin();
        let u = &b * eig.eigenvectors.column(i);
        (eig.eigenvalues[i], u.iter().copied().collect())
    }
}

pub fn project_to_surface<F: Field>(s: &Surface<F>, x: &[f64]) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 50;
    let mut x = x.to_vec();
    let mut last = f64::INFINITY;
    for it in 0..MAX_ITER {
        let (q, g) = grad(&s.field, &x);
        let gg = dot(&g, &g);
        let gn = gg.sqrt();
        if gn <= s.tol.grad {
            return Err(GeoError::SingularGradient { norm: gn, tol: s.tol.grad });
        }
        if q.abs() <= 1e-15 * (1.0 + scalar::norm(&x)) || (q.abs() <= s.tol.surface && q.abs() >= last) {
            return Ok(x);
        }
        last = q.abs();
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= q * gi / gg;
        }
        if !x.iter().all(|v| v.is_finite()) || scalar::norm(&x) > 1e3 * (1.0 + s.bbox) {
            return Err(GeoError::ProjectionDiverged { iters: it + 1, residual: q.abs() });
        }
    }
    let q = s.value(&x);
    if q.abs() <= s.tol.surface {
        Ok(x)
    } else {
        Err(GeoError::ProjectionDiverged { iters: MAX_ITER, residual: q.abs() })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub min_kappa: f64,
    pub witness_x: Vec<f64>,
    pub witness_u: Vec<f64>,
    pub convex: bool,
    pub threshold: f64,
    pub samples: usize,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Sampling certificate for strict convexity: Halton points in the box
/// are projected to `M` and the smallest tangential curvature is recorded.
pub fn certify_strict_convexity<F: Field>(s: &Surface<F>, sample_budget: usize) -> Result<ConvexityReport> {
    let n = s.dim();
    let threshold = 1e-6;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut found = 0;
    for i in 1..=sample_budget as u64 {
        let p: Vec<f64> = (0..n).map(|k| s.bbox * (2.0 * radical_inverse(i, PRIMES[k % 10]) - 1.0)).collect();
        let Ok(x) = project_to_surface(s, &p) else { continue };
        let Ok(g) = evaluate_geometry(s, &x) else { continue };
        found += 1;
        let (k, u) = g.min_curvature();
        if best.as_ref().is_none_or(|b| k < b.0) {
            best = Some((k, x, u));
        }
    }
    let (min_kappa, witness_x, witness_u) =
        best.ok_or(GeoError::NoSurfacePointsFound { attempts: sample_budget })?;
    Ok(ConvexityReport {
        min_kappa,
        witness_x,
        witness_u,
        convex: min_kappa > threshold,
        threshold,
        samples: found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sphere_geometry() {
        let s = Surface::sphere();
        let g = evaluate_geometry(&s, &[1.0, 0.0, 0.0]).unwrap();
        assert!(close(&g.normal, &[-1.0, 0.0, 0.0], 1e-15));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.curvature[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let (su, k) = g.shape_and_curvature(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(k, 1.0);
        assert!(close(&su, &[0.0, 1.0, 0.0], 1e-15));
        assert!(matches!(evaluate_geometry(&s, &[2.0, 0.0, 0.0]), Err(GeoError::OffSurface { .. })));
        assert!(matches!(g.shape_and_curvature(&[1.0, 0.0, 0.0]), Err(GeoError::NotTangent { .. })));
    }

    #[test]
    fn ellipsoid_geometry_by_hand() {
        let s = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
        let g = evaluate_geometry(&s, &[2.0, 0.0, 0.0]).unwrap();
        assert!((g.grad_norm - 0.5).abs() < 1e-15);
        assert!(close(&g.normal, &[-1.0, 0.0, 0.0], 1e-15));
        let diag = [0.5, 1.0, 2.0];
        for i in 0..3 {
            assert!((g.curvature[i][i] - diag[i]).abs() < 1e-14);
        }
        assert!((g.shape_and_curvature(&[0.0, 1.0, 0.0]).unwrap().1 - 1.0).abs() < 1e-14);
        assert!((g.shape_and_curvature(&[0.0, 0.0, 1.0]).unwrap().1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let s = Surface::sphere();
        assert!(close(&project_to_surface(&s, &[2.0, 0.0, 0.0]).unwrap(), &[1.0, 0.0, 0.0], 1e-12));
        assert!(project_to_surface(&s, &[0.0, 0.0, 0.0]).is_err());
        let e = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
        assert!(close(&project_to_surface(&e, &[2.1, 0.0, 0.0]).unwrap(), &[2.0, 0.0, 0.0], 1e-9));
    }

    #[test]
    fn convexity_certificates() {
        let r = certify_strict_convexity(&Surface::sphere(), 2000).unwrap();
        assert!(r.convex && (r.min_kappa - 1.0).abs() < 1e-9);
        let r = certify_strict_convexity(&Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0), 2000).unwrap();
        assert!(r.convex && r.min_kappa > 0.0);
        // torus with R = 1, r = 1/2: inner equator is hyperbolic
        let torus = Surface::parse("(x1^2 + x2^2 + x3^2 + 0.75)^2 - 4*(x1^2 + x2^2)", 3).unwrap().with_bbox(2.0);
        let r = certify_strict_convexity(&torus, 2000).unwrap();
        assert!(!r.convex && r.min_kappa < 0.0);
        // hand-picked saddle: inner equator point (0.5, 0, 0)
        let g = evaluate_geometry(&torus, &[0.5, 0.0, 0.0]).unwrap();
        let (_, k) = g.shape_and_curvature(&[0.0, 1.0, 0.0]).unwrap();
        assert!(k < 0.0);
    }

    #[test]
    fn normalized_field_has_unit_gradient_on_surface() {
        let e = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
        let n = Normalized { inner: e.field.clone() };
        for x in [[2.0, 0.0, 0.0], [0.0, 2f64.sqrt(), 0.0], [0.0, 0.6, (1.0f64 - 0.18).sqrt()]] {
            let (_, g) = grad(&n, &x);
            assert!((scalar::norm(&g) - 1.0).abs() < 1e-12);
        }
    }
}

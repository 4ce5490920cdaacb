//! Scalar abstraction shared by every numerical routine, and forward-mode
//! dual numbers.
//!
//! All evaluation code is generic over [`Scalar`], so the same expression
//! tape, vector field and integrator run on plain `f64` and on (nested)
//! [`Dual`] numbers. Nesting `Dual<Dual<f64>>` yields exact second
//! derivatives, `Dual<Dual<Dual<f64>>>` third derivatives, and so on.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(c: f64) -> Self;
    /// Real (primal) part, stripping every tangent layer.
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// `self^p` for a constant exponent.
    fn powf(self, p: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }
    /// Smooth everywhere except at 0, where the derivative picks the sign of
    /// the primal part.
    fn abs(self) -> Self {
        if self.re() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }
    pub fn constant(re: T) -> Self {
        Self { re, eps: T::zero() }
    }
    pub fn variable(re: T) -> Self {
        Self { re, eps: T::one() }
    }
    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        Self { re: f, eps: self.eps * df }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, eps: self.eps + o.eps }
    }
}
impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, eps: self.eps - o.eps }
    }
}
impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}
impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        let re = self.re * inv;
        Self { re, eps: (self.eps - re * o.eps) * inv }
    }
}
impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { re: -self.re, eps: -self.eps }
    }
}
impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn cst(c: f64) -> Self {
        Self::constant(T::cst(c))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::one() / self.re)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::one() - t * t)
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), T::one() / (T::one() + self.re * self.re))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ => self.chain(self.re.powi(n), self.re.powi(n - 1).scale(n as f64)),
        }
    }
    fn powf(self, p: f64) -> Self {
        self.chain(self.re.powf(p), self.re.powf(p - 1.0).scale(p))
    }
}

pub type Dual2 = Dual<Dual<f64>>;

/// Value, gradient and Hessian of a scalar function of `n` variables.
#[derive(Clone, Debug)]
pub struct Taylor2<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub hess: Vec<Vec<T>>,
}

/// Evaluates `f` together with its exact gradient and Hessian at `x` by
/// seeding nested dual numbers along each pair of coordinate directions.
pub fn taylor2<T, F>(x: &[T], f: F) -> Taylor2<T>
where
    T: Scalar,
    F: Fn(&[Dual<Dual<T>>]) -> Dual<Dual<T>>,
{
    let n = x.len();
    let mut grad = vec![T::zero(); n];
    let mut hess = vec![vec![T::zero(); n]; n];
    let mut value = T::zero();
    let mut seeded: Vec<Dual<Dual<T>>> = x
        .iter()
        .map(|&xi| Dual::constant(Dual::constant(xi)))
        .collect();
    for i in 0..n {
        for j in i..n {
            seeded[i].eps.re = T::one();
            seeded[j].re.eps = T::one();
            let r = f(&seeded);
            seeded[i].eps.re = T::zero();
            seeded[j].re.eps = T::zero();
            if i == 0 && j == 0 {
                value = r.re.re;
            }
            if i == j {
                grad[i] = r.eps.re;
            }
            hess[i][j] = r.eps.eps;
            hess[j][i] = r.eps.eps;
        }
    }
    if n == 0 {
        value = f(&seeded).re.re;
    }
    Taylor2 { value, grad, hess }
}

/// Exact gradient of `f` at `x` (one dual evaluation per coordinate).
pub fn gradient<T, F>(x: &[T], f: F) -> (T, Vec<T>)
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Dual<T>,
{
    let n = x.len();
    let mut seeded: Vec<Dual<T>> = x.iter().map(|&xi| Dual::constant(xi)).collect();
    let mut grad = vec![T::zero(); n];
    let mut value = T::zero();
    for i in 0..n {
        seeded[i].eps = T::one();
        let r = f(&seeded);
        seeded[i].eps = T::zero();
        value = r.re;
        grad[i] = r.eps;
    }
    if n == 0 {
        value = f(&seeded).re;
    }
    (value, grad)
}

/// Jacobian of a vector-valued map, row `i` = output `i`.
pub fn jacobian<F>(x: &[f64], f: F) -> Vec<Vec<f64>>
where
    F: Fn(&[Dual<f64>]) -> Vec<Dual<f64>>,
{
    let n = x.len();
    let mut seeded: Vec<Dual<f64>> = x.iter().map(|&xi| Dual::constant(xi)).collect();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        seeded[i].eps = 1.0;
        cols.push(f(&seeded));
        seeded[i].eps = 0.0;
    }
    let m = cols.first().map_or(0, |c| c.len());
    (0..m).map(|r| (0..n).map(|c| cols[c][r].eps).collect()).collect()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn lift<T: Scalar>(a: &[f64]) -> Vec<T> {
    a.iter().map(|&v| T::cst(v)).collect()
}

pub fn reals<T: Scalar>(a: &[T]) -> Vec<f64> {
    a.iter().map(|v| v.re()).collect()
}

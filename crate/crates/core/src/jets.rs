//! Truncated polynomial maps of `ℝ^{2d}` fixing the origin, homogeneous
//! polynomial spaces, and the rank tests used for k-generality.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::poincare::omega;
use crate::scalar::Scalar;

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Exponent vectors of total degree `deg` in graded-lex order
/// (`x1^deg` first).
pub fn monomials(nvars: usize, deg: u32) -> Vec<Vec<u32>> {
    fn rec(nvars: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == nvars {
            prefix.push(deg);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=deg).rev() {
            prefix.push(e);
            rec(nvars, deg - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if nvars == 0 {
        if deg == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(nvars, deg, &mut Vec::with_capacity(nvars), &mut out);
    out
}

/// Homogeneous polynomials of one degree, with a coefficient basis.
#[derive(Clone, Debug)]
pub struct PolySpace {
    pub nvars: usize,
    pub degree: u32,
    pub basis: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl PolySpace {
    pub fn new(nvars: usize, degree: u32) -> Self {
        let basis = monomials(nvars, degree);
        let index = basis.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Self { nvars, degree, basis, index }
    }

    /// `ℝ_k[y, v]` for `d` degrees of freedom.
    pub fn phase(d: usize, k: u32) -> Self {
        Self::new(2 * d, k)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Closed form `C(nvars − 1 + k, k)`.
    pub fn formula_dim(nvars: usize, k: u32) -> u64 {
        binomial(nvars as u64 - 1 + u64::from(k), u64::from(k))
    }

    pub fn coords(&self, p: &Poly) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim()];
        for (m, c) in &p.terms {
            let i = self.index.get(m).ok_or(GeoError::DegreeMismatch { expected: self.degree as usize, got: m.iter().sum::<u32>() as usize })?;
            v[*i] = *c;
        }
        Ok(v)
    }

    pub fn poly(&self, coeffs: &[f64]) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (m, &c) in self.basis.iter().zip(coeffs) {
            if c != 0.0 {
                p.terms.insert(m.clone(), c);
            }
        }
        p
    }
}

/// Sparse polynomial in `nvars` variables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Poly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::monomial(nvars, vec![0; nvars], c)
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, e, 1.0)
    }

    pub fn monomial(nvars: usize, exps: Vec<u32>, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(exps, c);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|&c| c == 0.0)
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.iter().filter(|(_, &c)| c != 0.0).map(|(m, _)| m.iter().sum()).max()
    }

    pub fn is_homogeneous(&self, deg: u32) -> bool {
        self.terms.iter().all(|(m, &c)| c == 0.0 || m.iter().sum::<u32>() == deg)
    }

    pub fn add_term(&mut self, m: Vec<u32>, c: f64) {
        *self.terms.entry(m).or_insert(0.0) += c;
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut p = self.clone();
        for (m, c) in &o.terms {
            p.add_term(m.clone(), *c);
        }
        p
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly { nvars: self.nvars, terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect() }
    }

    /// Product with terms above degree `max_deg` dropped.
    pub fn mul_trunc(&self, o: &Poly, max_deg: u32) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (ma, ca) in &self.terms {
            let da: u32 = ma.iter().sum();
            for (mb, cb) in &o.terms {
                if da + mb.iter().sum::<u32>() > max_deg {
                    continue;
                }
                p.add_term(ma.iter().zip(mb).map(|(a, b)| a + b).collect(), ca * cb);
            }
        }
        p
    }

    pub fn truncate(&self, max_deg: u32) -> Poly {
        Poly { nvars: self.nvars, terms: self.terms.iter().filter(|(m, _)| m.iter().sum::<u32>() <= max_deg).map(|(m, c)| (m.clone(), *c)).collect() }
    }

    /// Part of exact degree `deg`.
    pub fn homogeneous_part(&self, deg: u32) -> Poly {
        Poly { nvars: self.nvars, terms: self.terms.iter().filter(|(m, _)| m.iter().sum::<u32>() == deg).map(|(m, c)| (m.clone(), *c)).collect() }
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (m, c) in &self.terms {
            if m[i] > 0 {
                let mut e = m.clone();
                e[i] -= 1;
                p.add_term(e, c * f64::from(m[i]));
            }
        }
        p
    }

    pub fn gradient(&self) -> Vec<Poly> {
        (0..self.nvars).map(|i| self.derivative(i)).collect()
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        let mut s = T::zero();
        for (m, c) in &self.terms {
            let mut t = T::cst(*c);
            for (xi, &e) in x.iter().zip(m) {
                if e > 0 {
                    t *= xi.powi(e as i32);
                }
            }
            s += t;
        }
        s
    }

    /// `p(g_1, …, g_nvars)` truncated at `max_deg`, with `g` in a common
    /// ring.
    pub fn substitute(&self, g: &[Poly], max_deg: u32) -> Poly {
        let nv = g.first().map_or(0, |q| q.nvars);
        let top = self.degree().unwrap_or(0);
        let mut powers: Vec<Vec<Poly>> = Vec::with_capacity(g.len());
        for gi in g {
            let mut pw = vec![Poly::constant(nv, 1.0)];
            for e in 1..=top {
                let next = pw[e as usize - 1].mul_trunc(gi, max_deg);
                pw.push(next);
            }
            powers.push(pw);
        }
        let mut out = Poly::zero(nv);
        for (m, c) in &self.terms {
            let mut t = Poly::constant(nv, *c);
            for (i, &e) in m.iter().enumerate() {
                if e > 0 {
                    t = t.mul_trunc(&powers[i][e as usize], max_deg);
                }
            }
            out = out.add(&t);
        }
        out.prune()
    }

    /// `p ∘ A` for a linear map given as an `nvars × m` matrix.
    pub fn compose_linear(&self, a: &DMatrix<f64>) -> Poly {
        let m = a.ncols();
        let g: Vec<Poly> = (0..a.nrows())
            .map(|r| {
                let mut p = Poly::zero(m);
                for c in 0..m {
                    if a[(r, c)] != 0.0 {
                        p.add_term((0..m).map(|j| u32::from(j == c)).collect(), a[(r, c)]);
                    }
                }
                p
            })
            .collect();
        self.substitute(&g, self.degree().unwrap_or(0))
    }

    fn prune(mut self) -> Poly {
        self.terms.retain(|_, c| *c != 0.0);
        self
    }

    pub fn max_abs_diff(&self, o: &Poly) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, c) in &self.terms {
            worst = worst.max((c - o.terms.get(m).copied().unwrap_or(0.0)).abs());
        }
        for (m, c) in &o.terms {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }
}

/// `y_1^k` in the `d` position variables.
pub fn y1_power(d: usize, k: u32) -> Poly {
    let mut e = vec![0; d];
    e[0] = k;
    Poly::monomial(d, e, 1.0)
}

/// A k-jet of a map `ℝ^{2d} → ℝ^{2d}` fixing the origin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JetMap {
    pub d: usize,
    pub k: u32,
    pub comps: Vec<Poly>,
}

impl JetMap {
    pub fn identity(d: usize, k: u32) -> Self {
        Self { d, k, comps: (0..2 * d).map(|i| Poly::var(2 * d, i)).collect() }
    }

    pub fn linear(m: &DMatrix<f64>, k: u32) -> Self {
        let n = m.nrows();
        let comps = (0..n)
            .map(|r| {
                let mut p = Poly::zero(n);
                for c in 0..n {
                    if m[(r, c)] != 0.0 {
                        p.add_term((0..n).map(|j| u32::from(j == c)).collect(), m[(r, c)]);
                    }
                }
                p
            })
            .collect();
        Self { d: n / 2, k, comps }
    }

    pub fn from_comps(d: usize, k: u32, comps: Vec<Poly>) -> Result<Self> {
        if comps.len() != 2 * d {
            return Err(GeoError::WrongTupleLength { expected: 2 * d, got: comps.len() });
        }
        for c in &comps {
            if c.nvars != 2 * d {
                return Err(GeoError::DimensionMismatch { expected: 2 * d, got: c.nvars });
            }
            if c.terms.iter().any(|(m, v)| *v != 0.0 && m.iter().all(|&e| e == 0)) {
                return Err(GeoError::InvalidArgument("jet must fix the origin".into()));
            }
        }
        Ok(Self { d, k, comps: comps.into_iter().map(|c| c.truncate(k)).collect() })
    }

    pub fn linear_part(&self) -> DMatrix<f64> {
        let n = 2 * self.d;
        DMatrix::from_fn(n, n, |r, c| {
            let e: Vec<u32> = (0..n).map(|j| u32::from(j == c)).collect();
            self.comps[r].terms.get(&e).copied().unwrap_or(0.0)
        })
    }

    pub fn symplectic_defect(&self) -> f64 {
        crate::poincare::symplectic_defect(&self.linear_part())
    }

    pub fn truncate(&self, m: u32) -> Self {
        Self { d: self.d, k: m.min(self.k), comps: self.comps.iter().map(|c| c.truncate(m)).collect() }
    }

    /// Whether the `m`-truncation equals the identity jet.
    pub fn in_kernel(&self, m: u32, tol: f64) -> bool {
        self.truncate(m).max_abs_diff(&JetMap::identity(self.d, m)) <= tol
    }

    pub fn max_abs_diff(&self, o: &JetMap) -> f64 {
        self.comps.iter().zip(&o.comps).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    pub fn eval<T: Scalar>(&self, z: &[T]) -> Vec<T> {
        self.comps.iter().map(|c| c.eval(z)).collect()
    }

    pub fn add(&self, o: &JetMap) -> JetMap {
        JetMap { d: self.d, k: self.k, comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.add(b)).collect() }
    }
}

/// `g ∘ f` truncated at order `k`, written `J f · J g` in composition
/// order.
pub fn jet_compose(f: &JetMap, g: &JetMap) -> Result<JetMap> {
    if f.d != g.d {
        return Err(GeoError::DimensionMismatch { expected: f.d, got: g.d });
    }
    if f.k != g.k {
        return Err(GeoError::DegreeMismatch { expected: f.k as usize, got: g.k as usize });
    }
    Ok(JetMap { d: f.d, k: f.k, comps: g.comps.iter().map(|c| c.substitute(&f.comps, f.k)).collect() })
}

/// Inverse jet by fixed-point iteration `h ← L⁻¹(id − N∘h)`.
pub fn jet_invert(f: &JetMap) -> Result<JetMap> {
    let l = f.linear_part();
    let linv = l.clone().try_inverse().ok_or(GeoError::SingularU { t: 0.0 })?;
    let nonlinear: Vec<Poly> = f.comps.iter().map(|c| c.add(&c.homogeneous_part(1).scale(-1.0)).truncate(f.k)).collect();
    let linv_jet = JetMap::linear(&linv, f.k);
    let mut h = linv_jet.clone();
    for _ in 0..f.k {
        let nh: Vec<Poly> = nonlinear.iter().map(|c| c.substitute(&h.comps, f.k)).collect();
        let rhs: Vec<Poly> = (0..2 * f.d).map(|i| Poly::var(2 * f.d, i).add(&nh[i].scale(-1.0))).collect();
        h = JetMap { d: f.d, k: f.k, comps: linv_jet.comps.iter().map(|c| c.substitute(&rhs, f.k)).collect() };
    }
    Ok(h)
}

/// `exp(ΩS)` for a random symmetric `S` with entries in `[−scale, scale]`.
pub fn random_symplectic<R: Rng>(d: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let n = 2 * d;
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-scale..scale);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    (omega(d) * s).exp()
}

fn rank_and_condition(m: &DMatrix<f64>) -> (usize, f64) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0, f64::INFINITY);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return (0, f64::INFINITY);
    }
    let rank = sv.iter().filter(|&&s| s > 1e-8 * smax).count();
    let smin = sv.min();
    (rank, if smin > 0.0 { smax / smin } else { f64::INFINITY })
}

#[derive(Clone, Debug, Serialize)]
pub struct KGeneralReport {
    pub is_general: bool,
    pub rank: usize,
    pub n: usize,
    pub condition: f64,
    /// Exponent vector (in `y`) of the polynomial chosen for each matrix.
    pub chosen: Vec<Vec<u32>>,
    pub used_fallback: bool,
}

fn position_rows(sigma: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    sigma.rows(0, d).into_owned()
}

/// Decides whether `f_i ∘ σ_i` can form a basis of `ℝ_k[y, v]`, trying
/// `f_i = y_1^k` first and then a greedy search over monomials in `y`.
pub fn k_general_test(tuple: &[DMatrix<f64>], d: usize, k: u32) -> Result<KGeneralReport> {
    let space = PolySpace::phase(d, k);
    let n = space.dim();
    if tuple.len() != n {
        return Err(GeoError::WrongTupleLength { expected: n, got: tuple.len() });
    }
    for s in tuple {
        if s.nrows() != 2 * d || s.ncols() != 2 * d {
            return Err(GeoError::DimensionMismatch { expected: 2 * d, got: s.nrows() });
        }
    }
    let column = |f: &Poly, s: &DMatrix<f64>| -> Result<Vec<f64>> { space.coords(&f.compose_linear(&position_rows(s, d))) };
    let f0 = y1_power(d, k);
    let mut a = DMatrix::zeros(n, n);
    for (i, s) in tuple.iter().enumerate() {
        a.set_column(i, &nalgebra::DVector::from_vec(column(&f0, s)?));
    }
    let (rank, condition) = rank_and_condition(&a);
    let first = f0.terms.keys().next().cloned().unwrap_or_default();
    if rank == n {
        return Ok(KGeneralReport { is_general: true, rank, n, condition, chosen: vec![first; n], used_fallback: false });
    }
    let dict = monomials(d, k);
    let mut chosen = Vec::with_capacity(n);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for s in tuple {
        let mut best: Option<(f64, Vec<u32>, Vec<f64>)> = None;
        for m in &dict {
            let c = column(&Poly::monomial(d, m.clone(), 1.0), s)?;
            let mut r = c.clone();
            for b in &cols {
                let bb: f64 = b.iter().map(|x| x * x).sum();
                if bb > 0.0 {
                    let p: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / bb;
                    r.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            let score = r.iter().map(|x| x * x).sum::<f64>().sqrt() / c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            if best.as_ref().is_none_or(|(sc, _, _)| score > *sc) {
                best = Some((score, m.clone(), r));
            }
        }
        let (_, m, r) = best.expect("non-empty dictionary");
        chosen.push(m);
        cols.push(r);
    }
    let mut a = DMatrix::zeros(n, n);
    for (i, (s, m)) in tuple.iter().zip(&chosen).enumerate() {
        a.set_column(i, &nalgebra::DVector::from_vec(column(&Poly::monomial(d, m.clone(), 1.0), s)?));
    }
    let (rank, condition) = rank_and_condition(&a);
    Ok(KGeneralReport { is_general: rank == n, rank, n, condition, chosen, used_fallback: true })
}

#[derive(Clone, Debug, Serialize)]
pub struct PersistenceReport {
    /// Sign changes between consecutive samples plus runs of exact zeros.
    pub bad_eps_count: usize,
    pub samples: Vec<(f64, f64)>,
    pub within_bound: bool,
}

/// Samples `det[u_i + εv_i]` on `[0, ε*]` and counts its roots.
pub fn basis_persistence_scan(u: &[Vec<f64>], v: &[Vec<f64>], eps_star: f64, grid: usize) -> Result<PersistenceReport> {
    let n = u.len();
    if v.len() != n || u.iter().chain(v).any(|c| c.len() != n) {
        return Err(GeoError::DimensionMismatch { expected: n, got: v.len() });
    }
    let det = |e: f64| DMatrix::from_fn(n, n, |r, c| u[c][r] + e * v[c][r]).determinant();
    let scale: f64 = (0..n).map(|i| u[i].iter().zip(&v[i]).map(|(a, b)| (a + eps_star * b).powi(2)).sum::<f64>().sqrt()).product();
    let top = det(eps_star);
    if top.abs() <= 1e-12 * scale.max(1e-300) || !top.is_finite() {
        return Err(GeoError::PreconditionBasisFails { det: top });
    }
    let grid = grid.max(2);
    let samples: Vec<(f64, f64)> = (0..=grid).map(|i| eps_star * i as f64 / grid as f64).map(|e| (e, det(e))).collect();
    let mut count = 0;
    let mut last_sign = 0.0;
    let mut in_zero = false;
    for &(_, f) in &samples {
        if f == 0.0 {
            if !in_zero {
                count += 1;
            }
            in_zero = true;
            continue;
        }
        let s = f.signum();
        if last_sign != 0.0 && s != last_sign && !in_zero {
            count += 1;
        }
        in_zero = false;
        last_sign = s;
    }
    Ok(PersistenceReport { bad_eps_count: count, within_bound: count <= n, samples })
}

/// Hamiltonian vector field `Ω∇h` of a polynomial in `(y, v)`.
pub fn hamiltonian_field(h: &Poly, d: usize) -> Vec<Poly> {
    let g = h.gradient();
    let mut out = Vec::with_capacity(2 * d);
    for i in 0..d {
        out.push(g[d + i].clone());
    }
    for i in 0..d {
        out.push(g[i].scale(-1.0));
    }
    out
}

/// Rank of the vectors `Ω∇(f_n ∘ DP_n)` in the space of homogeneous
/// degree-`m` map increments.
pub fn jet_span_rank(dps: &[DMatrix<f64>], polys: &[Poly], m: u32) -> Result<usize> {
    if dps.len() != polys.len() {
        return Err(GeoError::WrongTupleLength { expected: dps.len(), got: polys.len() });
    }
    let Some(first) = dps.first() else { return Ok(0) };
    let d = first.nrows() / 2;
    let space = PolySpace::phase(d, m);
    let mut cols = Vec::with_capacity(dps.len());
    for (dp, f) in dps.iter().zip(polys) {
        if !f.is_zero() && !f.is_homogeneous(m + 1) {
            return Err(GeoError::DegreeMismatch { expected: m as usize + 1, got: f.degree().unwrap_or(0) as usize });
        }
        let h = f.compose_linear(&position_rows(dp, d));
        let mut col = Vec::with_capacity(2 * d * space.dim());
        for c in hamiltonian_field(&h, d) {
            col.extend(space.coords(&c)?);
        }
        cols.push(col);
    }
    let a = DMatrix::from_fn(cols[0].len(), cols.len(), |r, c| cols[c][r]);
    Ok(rank_and_condition(&a).0)
}

/// Whether `σ 𝒥 σ⁻¹ = 𝒥` holds on the given samples for a membership
/// predicate on jets.
pub fn invariance_on_samples<P: Fn(&JetMap) -> bool>(pred: P, samples: &[JetMap], conjugators: &[DMatrix<f64>]) -> Result<bool> {
    for j in samples {
        let inside = pred(j);
        for s in conjugators {
            let sj = JetMap::linear(s, j.k);
            let si = jet_invert(&sj)?;
            let conj = jet_compose(&jet_compose(&si, j)?, &sj)?;
            if pred(&conj) != inside {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graded_lex_order() {
        assert_eq!(monomials(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(PolySpace::phase(1, 2).dim(), 3);
    }

    #[test]
    fn linear_composition_is_matrix_product() {
        let f = JetMap::linear(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), 1);
        let g = JetMap::linear(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]), 1);
        let h = jet_compose(&f, &g).unwrap();
        assert_eq!(h.linear_part(), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn inverse_of_quadratic_jet() {
        let mut comps = JetMap::identity(1, 3).comps;
        comps[0].add_term(vec![2, 0], 0.7);
        comps[1].add_term(vec![1, 1], -0.3);
        comps[1].add_term(vec![0, 3], 0.2);
        let f = JetMap::from_comps(1, 3, comps).unwrap();
        let fi = jet_invert(&f).unwrap();
        let id = jet_compose(&f, &fi).unwrap();
        assert!(id.max_abs_diff(&JetMap::identity(1, 3)) < 1e-12);
        let id = jet_compose(&fi, &f).unwrap();
        assert!(id.max_abs_diff(&JetMap::identity(1, 3)) < 1e-12);
    }

    #[test]
    fn k_general_examples() {
        let id = DMatrix::identity(2, 2);
        let r = k_general_test(&[id.clone(), omega(1)], 1, 1).unwrap();
        assert!(r.is_general);
        let r = k_general_test(&[id.clone(), id.clone()], 1, 1).unwrap();
        assert!(!r.is_general);
        assert!(matches!(k_general_test(&[id], 1, 1), Err(GeoError::WrongTupleLength { .. })));
    }

    #[test]
    fn random_symplectic_is_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            let s = random_symplectic(d, 0.5, &mut rng);
            assert!(crate::poincare::symplectic_defect(&s) < 1e-12);
        }
    }

    #[test]
    fn persistence_hand_example() {
        let u = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let v = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        let r = basis_persistence_scan(&u, &v, 1.0, 50).unwrap();
        assert_eq!(r.bad_eps_count, 1);
        let r = basis_persistence_scan(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0; 2], vec![0.0; 2]], 1.0, 50).unwrap();
        assert_eq!(r.bad_eps_count, 0);
    }

    #[test]
    fn span_rank_examples() {
        let rot = |t: f64| DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
        let y2 = y1_power(1, 2);
        let r = jet_span_rank(&[rot(0.3), rot(1.1), rot(2.0)], &[y2.clone(), y2.clone(), y2.clone()], 1).unwrap();
        assert_eq!(r, 3);
        let id = DMatrix::identity(2, 2);
        let r = jet_span_rank(&[id.clone(), id.clone(), id.clone()], &[y2.clone(), y2.clone(), y2], 1).unwrap();
        assert_eq!(r, 1);
        let r = jet_span_rank(std::slice::from_ref(&id), &[Poly::zero(1)], 1).unwrap();
        assert_eq!(r, 0);
        assert!(matches!(jet_span_rank(&[id], &[y1_power(1, 3)], 1), Err(GeoError::DegreeMismatch { .. })));
    }
}

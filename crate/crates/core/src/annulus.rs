//! Birkhoff annulus map of a convex surface (`d = 1`) around a simple
//! planar closed geodesic `γ`: the return map on `A = 𝕋 × [0, π]`,
//! periodic points, invariant-manifold branches, crossing detection and
//! invariant-curve fits.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fermi::{build_chart, ChartSettings, FermiChart};
use crate::flow::{project_phase, PhaseState};
use crate::integrator::LinearSection;
use crate::poincare::{classify, eigenvalues, flow_to_section, solve_least_squares, Classification, ClassifySettings, ReturnSettings};
use crate::scalar::{self, dot, Dual, Scalar};
use crate::surface::{certify_strict_convexity, ConvexityReport, Field, Surface};
use crate::variational::jacobi_fundamental;

/// `(φ, y)`: position along `γ` in radians and angle to `γ'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusPoint {
    pub phi: f64,
    pub y: f64,
}

impl AnnulusPoint {
    pub fn new(phi: f64, y: f64) -> Self {
        Self { phi, y }
    }

    pub fn wrapped(self) -> Self {
        Self { phi: self.phi.rem_euclid(TAU), y: self.y }
    }

    /// Distance with `φ` taken modulo `2π`.
    pub fn dist(&self, o: &AnnulusPoint) -> f64 {
        wrap_pi(self.phi - o.phi).hypot(self.y - o.y)
    }
}

/// Representative of `a` modulo `2π` in `(−π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnulusSettings {
    pub ret: ReturnSettings,
    pub convexity_samples: usize,
    pub planarity_tol: f64,
}

impl Default for AnnulusSettings {
    fn default() -> Self {
        Self { ret: ReturnSettings { t_max: 200.0, ..ReturnSettings::default() }, convexity_samples: 2000, planarity_tol: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// The return map `P` and return time `τ` of the geodesic flow to the
/// northward crossings of `γ`.
#[derive(Clone, Debug)]
pub struct AnnulusMap<F> {
    pub surface: Surface<F>,
    pub chart: FermiChart,
    /// Unit normal of the plane of `γ`; it selects the northern hemisphere.
    pub north: Vec<f64>,
    pub offset: f64,
    pub settings: AnnulusSettings,
    pub convexity: ConvexityReport,
    orient: f64,
}

impl<F: Field + Clone> AnnulusMap<F> {
    /// Builds the map around the closed geodesic through `anchor` with the
    /// given length.
    pub fn build(s: &Surface<F>, anchor: &PhaseState, length: f64, north: &[f64], settings: AnnulusSettings) -> Result<Self> {
        if s.dim() != 3 {
            return Err(GeoError::DimensionMismatch { expected: 3, got: s.dim() });
        }
        let convexity = certify_strict_convexity(s, settings.convexity_samples)?;
        if !convexity.convex {
            return Err(GeoError::NotConvex { kappa: convexity.min_kappa });
        }
        let anchor = anchor.scaled(1.0 / anchor.speed());
        let chart = build_chart(s, &anchor, length, &ChartSettings::default())?;
        if !chart.closed {
            return Err(GeoError::InvalidArgument("the geodesic does not close after the given length".into()));
        }
        let nn = scalar::norm(north);
        if north.len() != 3 || nn == 0.0 {
            return Err(GeoError::InvalidArgument("north must be a nonzero vector in R^3".into()));
        }
        let north: Vec<f64> = north.iter().map(|v| v / nn).collect();
        let offset = dot(&north, &chart.gamma[0]);
        let off_plane = chart.gamma.iter().map(|g| (dot(&north, g) - offset).abs()).fold(0.0, f64::max);
        if off_plane > settings.planarity_tol {
            return Err(GeoError::InvalidArgument(format!("γ is not planar: distance {off_plane:.3e} from the plane")));
        }
        let c = dot(&chart.frames[0][0], &north);
        if c.abs() < 0.5 {
            return Err(GeoError::InvalidArgument("north is not transverse to γ in the surface".into()));
        }
        Ok(Self { surface: s.clone(), chart, north, offset, settings, convexity, orient: c.signum() })
    }

    pub fn length(&self) -> f64 {
        self.chart.length
    }

    fn section(&self, dir: Direction) -> LinearSection {
        let sg = if dir == Direction::Forward { 1.0 } else { -1.0 };
        let mut coeffs: Vec<f64> = self.north.iter().map(|v| sg * v).collect();
        coeffs.extend([0.0; 3]);
        LinearSection { coeffs, offset: sg * self.offset }
    }

    /// Unit tangent vector at `γ(φ)` making angle `y` with `γ'` towards
    /// the north.
    pub fn lift<T: Scalar>(&self, z: [T; 2]) -> Result<Vec<T>> {
        let t = z[0].scale(self.length() / TAU);
        let (x, v) = self.chart.gamma_at(t);
        let e = &self.chart.frame_at(t)[0];
        let (c, s) = (z[1].cos(), z[1].sin());
        let mut y = x;
        for i in 0..3 {
            y.push(c * v[i] + s * e[i].scale(self.orient));
        }
        project_phase(&self.surface.field, &mut y, 3, Some(T::one()))?;
        Ok(y)
    }

    /// Annulus coordinates of a phase point on `γ` crossing northward.
    pub fn coords<T: Scalar>(&self, y: &[T]) -> Result<[T; 2]> {
        let l = self.length();
        let (t, _) = self
            .chart
            .foot_point(&y[..3], -self.chart.spacing, l + self.chart.spacing)
            .ok_or(GeoError::ChartInversionFailed { residual: f64::NAN })?;
        let t = t - T::cst((t.re() / l).floor() * l);
        let (_, v) = self.chart.gamma_at(t);
        let e = &self.chart.frame_at(t)[0];
        let a = dot(&y[3..], &v);
        let b = dot(&y[3..], e).scale(self.orient);
        if b.re() <= 0.0 {
            return Err(GeoError::MapEvaluationFailed("crossing does not point north".into()));
        }
        Ok([t.scale(TAU / l), T::cst(FRAC_PI_2) - (a / b).atan()])
    }

    /// `P(z)` (or `P⁻¹(z)`) and the return time.
    pub fn apply<T: Scalar>(&self, z: [T; 2], dir: Direction) -> Result<([T; 2], T)> {
        let mut y = self.lift(z)?;
        if dir == Direction::Backward {
            for v in &mut y[3..] {
                *v = -*v;
            }
        }
        let (mut y1, tau) = flow_to_section(&self.surface.field, &self.section(dir), &y, 1, &self.settings.ret)?;
        if dir == Direction::Backward {
            for v in &mut y1[3..] {
                *v = -*v;
            }
        }
        Ok((self.coords(&y1)?, tau))
    }

    pub fn map(&self, z: AnnulusPoint) -> Result<AnnulusPoint> {
        let ([p, y], _) = self.apply([z.phi, z.y], Direction::Forward)?;
        Ok(AnnulusPoint::new(p, y))
    }

    pub fn return_time(&self, z: AnnulusPoint) -> Result<f64> {
        Ok(self.apply([z.phi, z.y], Direction::Forward)?.1)
    }

    /// `m`-fold iterate with `φ` kept continuous.
    pub fn iterate(&self, z: AnnulusPoint, m: usize, dir: Direction) -> Result<AnnulusPoint> {
        let mut w = [z.phi, z.y];
        for _ in 0..m {
            let (nw, _) = self.apply(w, dir)?;
            w = [w[0] + wrap_pi(nw[0] - w[0]), nw[1]];
        }
        Ok(AnnulusPoint::new(w[0], w[1]))
    }

    /// `P^m(z)` with `φ` continuous and `DP^m(z)` from dual-number runs.
    pub fn jacobian(&self, z: AnnulusPoint, m: usize, dir: Direction) -> Result<(AnnulusPoint, DMatrix<f64>)> {
        let mut jac = DMatrix::zeros(2, 2);
        let mut out = z;
        for c in 0..2 {
            let mut w = [Dual::new(z.phi, f64::from(u8::from(c == 0))), Dual::new(z.y, f64::from(u8::from(c == 1)))];
            for _ in 0..m {
                let (nw, _) = self.apply(w, dir)?;
                let shift = wrap_pi(nw[0].re - w[0].re) - (nw[0].re - w[0].re);
                w = [nw[0] + Dual::constant(shift), nw[1]];
            }
            jac[(0, c)] = w[0].eps;
            jac[(1, c)] = w[1].eps;
            out = AnnulusPoint::new(w[0].re, w[1].re);
        }
        Ok((out, jac))
    }

    /// Orbit of `n` iterates including the start, with `φ` wrapped.
    pub fn orbit(&self, z: AnnulusPoint, n: usize) -> Result<Vec<AnnulusPoint>> {
        let mut out = Vec::with_capacity(n + 1);
        let mut w = z.wrapped();
        out.push(w);
        for _ in 0..n {
            w = self.map(w)?.wrapped();
            out.push(w);
        }
        Ok(out)
    }

    /// Continuous extension of `(P, τ)` to `y = 0`: the return happens at
    /// the second zero of the Jacobi field along `γ` vanishing at `φ`.
    pub fn boundary_return(&self, phi: f64) -> Result<(AnnulusPoint, f64)> {
        let l = self.length();
        let t0 = phi.rem_euclid(TAU) * l / TAU;
        let fund = jacobi_fundamental(&self.surface, &self.chart, t0 + 3.0 * l, &[t0], self.settings.ret.ctrl)?;
        let inv = fund.at(t0)?.try_inverse().ok_or(GeoError::SingularU { t: t0 })?;
        let jac = |t: f64| -> Result<f64> { Ok((fund.at(t)? * &inv)[(0, 1)]) };
        let mut zeros = 0;
        let mut prev = (t0 + 1e-6, jac(t0 + 1e-6)?);
        for &t in fund.times.iter().filter(|&&t| t > t0 + 1e-6) {
            let cur = (t, jac(t)?);
            if prev.1 * cur.1 <= 0.0 && prev.1 != cur.1 {
                zeros += 1;
                if zeros == 2 {
                    let (mut a, mut b) = (prev, cur);
                    for _ in 0..80 {
                        let m = 0.5 * (a.0 + b.0);
                        let jm = jac(m)?;
                        if jm * a.1 <= 0.0 {
                            b = (m, jm);
                        } else {
                            a = (m, jm);
                        }
                    }
                    let tau = 0.5 * (a.0 + b.0) - t0;
                    return Ok((AnnulusPoint::new((phi + TAU * tau / l).rem_euclid(TAU), 0.0), tau));
                }
            }
            prev = cur;
        }
        Err(GeoError::NoReturnWithinTmax { t_max: 3.0 * l })
    }

    /// Largest deviation of `P` from commuting with `(φ, y) ↦ (φ + π, y)`.
    pub fn half_turn_defect(&self, samples: &[AnnulusPoint]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for z in samples {
            let a = self.map(*z)?;
            let b = self.map(AnnulusPoint::new(z.phi + PI, z.y))?;
            worst = worst.max(AnnulusPoint::new(a.phi + PI, a.y).dist(&b));
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicPoint {
    pub point: AnnulusPoint,
    pub period: usize,
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub classification: Option<Classification>,
    pub label: String,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointSettings {
    pub periods: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub dedup: f64,
    pub classify: ClassifySettings,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self { periods: vec![1, 2], tol: 1e-12, max_iter: 30, dedup: 1e-6, classify: ClassifySettings::default() }
    }
}

/// Multiple-shooting Newton for a period-`m` orbit: unknowns
/// `z_0, …, z_{m−1}` with `P(z_i) = z_{i+1 mod m}`, started from the orbit
/// of the seed.
pub fn refine_periodic_point<F: Field + Clone>(map: &AnnulusMap<F>, seed: AnnulusPoint, m: usize, cfg: &FixedPointSettings) -> Result<PeriodicPoint> {
    if m == 0 {
        return Err(GeoError::InvalidArgument("period must be positive".into()));
    }
    let mut zs = vec![seed];
    for i in 1..m {
        zs.push(map.map(zs[i - 1])?);
    }
    let eval = |zs: &[AnnulusPoint]| -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let mut r = DVector::zeros(2 * m);
        let mut jacs = Vec::with_capacity(m);
        for i in 0..m {
            let (p, j) = map.jacobian(zs[i], 1, Direction::Forward)?;
            let next = zs[(i + 1) % m];
            r[2 * i] = wrap_pi(p.phi - next.phi);
            r[2 * i + 1] = p.y - next.y;
            jacs.push(j);
        }
        Ok((r, jacs))
    };
    let (mut r, mut jacs) = eval(&zs)?;
    let mut iterations = 0;
    while r.amax() > cfg.tol {
        if iterations == cfg.max_iter {
            return Err(GeoError::NewtonDiverged { iters: iterations, residual: r.amax() });
        }
        iterations += 1;
        let mut a = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            a.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&jacs[i]);
            let c = 2 * ((i + 1) % m);
            let block = a.view((2 * i, c), (2, 2)) - DMatrix::identity(2, 2);
            a.view_mut((2 * i, c), (2, 2)).copy_from(&block);
        }
        let step = solve_least_squares(a, &(-&r));
        if step.norm() < 1e-15 {
            break;
        }
        let mut lambda = 1.0;
        loop {
            let trial: Vec<AnnulusPoint> = zs.iter().enumerate().map(|(i, z)| AnnulusPoint::new(z.phi + lambda * step[2 * i], z.y + lambda * step[2 * i + 1])).collect();
            if trial.iter().all(|z| z.y > 0.0 && z.y < PI) {
                if let Ok((tr, tj)) = eval(&trial) {
                    if tr.amax() < r.amax() || lambda < 1e-3 {
                        zs = trial;
                        r = tr;
                        jacs = tj;
                        break;
                    }
                }
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return Err(GeoError::NewtonDiverged { iters: iterations, residual: r.amax() });
            }
        }
    }
    let jac = jacs.iter().fold(DMatrix::identity(2, 2), |acc, j| j * acc);
    let z0 = zs[0];
    let residual = map.iterate(z0, m, Direction::Forward)?.dist(&z0);
    let eig = eigenvalues(&jac);
    let classification = classify(&jac, &cfg.classify).ok();
    let label = classification.as_ref().map_or_else(|| "unclassified".to_string(), |c| c.label());
    Ok(PeriodicPoint {
        point: z0.wrapped(),
        period: m,
        eigenvalues: eig.iter().map(|c| [c.re, c.im]).collect(),
        jacobian: jac,
        classification,
        label,
        residual,
        iterations,
    })
}

/// Periodic points of the annulus map found from a seed list, deduplicated
/// by orbit and reported with their minimal period.
pub fn annulus_fixed_points<F: Field + Clone>(map: &AnnulusMap<F>, seeds: &[AnnulusPoint], cfg: &FixedPointSettings) -> Result<Vec<PeriodicPoint>> {
    let mut found: Vec<PeriodicPoint> = Vec::new();
    let mut periods = cfg.periods.clone();
    periods.sort_unstable();
    for &m in &periods {
        for &seed in seeds {
            let Ok(p) = refine_periodic_point(map, seed, m, cfg) else { continue };
            if found.iter().any(|q| m % q.period == 0 && q.point.dist(&p.point) < cfg.dedup) {
                continue;
            }
            if m > 1 && (1..m).any(|k| m % k == 0 && map.iterate(p.point, k, Direction::Forward).is_ok_and(|w| w.dist(&p.point) < cfg.dedup)) {
                continue;
            }
            found.push(p);
        }
    }
    Ok(found)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Stable,
    Unstable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchSettings {
    pub max_spacing: f64,
    pub max_turn: f64,
    /// Outer end of the seed segment; the inner end is `seed_distance / λ`.
    pub seed_distance: f64,
    pub seed_points: usize,
    pub max_arclength: f64,
    pub max_points: usize,
    pub max_generations: usize,
    /// Growth stops on entering this radius around any of `stop_at`, once
    /// the branch has left its origin.
    pub stop_radius: f64,
    pub stop_at: Vec<AnnulusPoint>,
}

impl Default for BranchSettings {
    fn default() -> Self {
        Self {
            max_spacing: 1e-2,
            max_turn: 0.2,
            seed_distance: 1e-6,
            seed_points: 8,
            max_arclength: 10.0,
            max_points: 200_000,
            max_generations: 400,
            stop_radius: 0.25,
            stop_at: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GrowthStats {
    pub map_evaluations: usize,
    pub generations: usize,
    pub inserted: usize,
    pub max_spacing: f64,
    pub first_segment_ratio: f64,
}

/// A branch of `W^s` or `W^u` as a polyline with continuous `φ`.
#[derive(Clone, Debug, Serialize)]
pub struct BranchCurve {
    pub side: Side,
    pub origin: AnnulusPoint,
    pub direction: f64,
    pub eigenvalue: f64,
    pub points: Vec<AnnulusPoint>,
    pub arclength: Vec<f64>,
    pub stats: GrowthStats,
}

impl BranchCurve {
    /// CSV rows `(phi, y, arclength)` with `φ` wrapped to `[0, 2π)`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["phi", "y", "arclength"])?;
        for (p, s) in self.points.iter().zip(&self.arclength) {
            let q = p.wrapped();
            wr.write_record(&[q.phi.to_string(), q.y.to_string(), s.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn pdist(a: &AnnulusPoint, b: &AnnulusPoint) -> f64 {
    (a.phi - b.phi).hypot(a.y - b.y)
}

fn turn(a: &AnnulusPoint, b: &AnnulusPoint, c: &AnnulusPoint) -> f64 {
    let (u0, u1) = (b.phi - a.phi, b.y - a.y);
    let (v0, v1) = (c.phi - b.phi, c.y - b.y);
    (u0 * v1 - u1 * v0).atan2(u0 * v0 + u1 * v1).abs()
}

/// Midpoint of the chordal cubic Hermite interpolant on `[p_i, p_{i+1}]`.
fn interpolate_mid(p: &[AnnulusPoint], i: usize) -> AnnulusPoint {
    let h = pdist(&p[i], &p[i + 1]);
    let slope = |a: usize, b: usize| -> (f64, f64) {
        let d = pdist(&p[a], &p[b]).max(1e-300);
        ((p[b].phi - p[a].phi) / d, (p[b].y - p[a].y) / d)
    };
    let m0 = if i > 0 { slope(i - 1, i + 1) } else { slope(i, i + 1) };
    let m1 = if i + 2 < p.len() { slope(i, i + 2) } else { slope(i, i + 1) };
    AnnulusPoint::new(
        0.5 * (p[i].phi + p[i + 1].phi) + h * (m0.0 - m1.0) / 8.0,
        0.5 * (p[i].y + p[i + 1].y) + h * (m0.1 - m1.1) / 8.0,
    )
}

/// Unstable eigenvalue and unit eigenvectors `(v_u, v_s)` of a hyperbolic
/// 2×2 map differential.
pub fn saddle_directions(jac: &DMatrix<f64>) -> Result<(f64, [f64; 2], [f64; 2])> {
    let (a, b, c, d) = (jac[(0, 0)], jac[(0, 1)], jac[(1, 0)], jac[(1, 1)]);
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr / 4.0 - det;
    if disc <= 0.0 {
        return Err(GeoError::InvalidArgument("fixed point is not hyperbolic".into()));
    }
    let r = disc.sqrt();
    let (l1, l2) = (tr / 2.0 + r, tr / 2.0 - r);
    let (lu, ls) = if l1.abs() >= l2.abs() { (l1, l2) } else { (l2, l1) };
    if lu.abs() <= 1.0 + 1e-4 {
        return Err(GeoError::InvalidArgument(format!("eigenvalue {lu} too close to the unit circle")));
    }
    let vec_for = |l: f64| -> [f64; 2] {
        let (p, q) = if b.abs() + (l - a).abs() >= (l - d).abs() + c.abs() { (b, l - a) } else { (l - d, c) };
        let n = p.hypot(q);
        [p / n, q / n]
    };
    Ok((lu, vec_for(lu), vec_for(ls)))
}

/// Grows one branch of `W^u` (forward iterates) or `W^s` (backward
/// iterates) of a hyperbolic periodic point from a fundamental segment
/// along the eigenvector, refining so consecutive points stay within
/// `max_spacing` and the polyline turns by at most `max_turn`.
pub fn grow_branches<F: Field + Clone>(map: &AnnulusMap<F>, fp: &PeriodicPoint, side: Side, direction: f64, cfg: &BranchSettings) -> Result<BranchCurve> {
    let (lu, vu, vs) = saddle_directions(&fp.jacobian)?;
    let period = if lu < 0.0 { 2 * fp.period } else { fp.period };
    let lam = lu.abs().powi(i32::try_from(period / fp.period).unwrap_or(1));
    let (v, dir) = match side {
        Side::Unstable => (vu, Direction::Forward),
        Side::Stable => (vs, Direction::Backward),
    };
    let z = fp.point;
    let mut stats = GrowthStats::default();
    let sd = cfg.seed_distance;
    let mut gen: Vec<AnnulusPoint> = (0..=cfg.seed_points)
        .map(|j| {
            let s = direction * sd * lam.powf(j as f64 / cfg.seed_points as f64 - 1.0);
            AnnulusPoint::new(z.phi + s * v[0], z.y + s * v[1])
        })
        .collect();
    let mut curve = BranchCurve {
        side,
        origin: z,
        direction,
        eigenvalue: lu,
        points: vec![gen[0]],
        arclength: vec![0.0],
        stats: GrowthStats::default(),
    };
    if cfg.max_arclength <= 0.0 {
        return Ok(curve);
    }
    for p in &gen[1..] {
        push_point(&mut curve, *p);
    }
    let eval = |p: AnnulusPoint, near: AnnulusPoint, stats: &mut GrowthStats| -> Result<AnnulusPoint> {
        stats.map_evaluations += period;
        let w = map.iterate(p, period, dir).map_err(|e| GeoError::MapEvaluationFailed(e.to_string()))?;
        Ok(AnnulusPoint::new(near.phi + wrap_pi(w.phi - near.phi), w.y))
    };
    let first_len = polyline_length(&gen);
    'outer: for g in 0..cfg.max_generations {
        stats.generations = g + 1;
        let mut pre = gen.clone();
        let mut img = Vec::with_capacity(pre.len());
        let mut anchor = *curve.points.last().expect("curve has a seed");
        for p in &pre {
            let w = eval(*p, anchor, &mut stats)?;
            anchor = w;
            img.push(w);
        }
        let base = *curve.arclength.last().expect("non-empty");
        if let Some(k) = stop_index(&img, base, cfg) {
            img.truncate((k + 2).min(img.len()));
            pre.truncate(img.len());
        }
        for _pass in 0..60 {
            let n = pre.len();
            let mut flag = vec![false; n - 1];
            for i in 0..n - 1 {
                if pdist(&img[i], &img[i + 1]) > cfg.max_spacing {
                    flag[i] = true;
                }
                if i + 2 < n && turn(&img[i], &img[i + 1], &img[i + 2]) > cfg.max_turn {
                    flag[i] = true;
                    flag[i + 1] = true;
                }
            }
            let mut np = Vec::with_capacity(2 * n);
            let mut ni = Vec::with_capacity(2 * n);
            let mut changed = false;
            for i in 0..n - 1 {
                np.push(pre[i]);
                ni.push(img[i]);
                if flag[i] && pdist(&pre[i], &pre[i + 1]) > 1e-13 {
                    let m = interpolate_mid(&pre, i);
                    let w = eval(m, img[i], &mut stats)?;
                    np.push(m);
                    ni.push(w);
                    stats.inserted += 1;
                    changed = true;
                }
            }
            np.push(pre[n - 1]);
            ni.push(img[n - 1]);
            pre = np;
            img = ni;
            if !changed {
                break;
            }
        }
        if g == 0 {
            stats.first_segment_ratio = polyline_length(&img) / first_len;
        }
        for w in &img[1..] {
            push_point(&mut curve, *w);
            let s = *curve.arclength.last().expect("non-empty");
            if s >= cfg.max_arclength {
                break 'outer;
            }
            if s > 4.0 * cfg.stop_radius && cfg.stop_at.iter().any(|q| q.dist(w) < cfg.stop_radius) {
                break 'outer;
            }
        }
        if curve.points.len() > cfg.max_points {
            return Err(GeoError::ArclengthBudgetExceeded { points: curve.points.len() });
        }
        gen = coarsen(img, cfg);
    }
    stats.max_spacing = curve.points.windows(2).map(|w| pdist(&w[0], &w[1])).fold(0.0, f64::max);
    curve.stats = stats;
    Ok(curve)
}

/// First index of a chord polyline that reaches the arclength budget or a
/// stop point.
fn stop_index(img: &[AnnulusPoint], base: f64, cfg: &BranchSettings) -> Option<usize> {
    let mut s = base;
    for i in 1..img.len() {
        s += pdist(&img[i - 1], &img[i]);
        if s >= cfg.max_arclength || (s > 4.0 * cfg.stop_radius && cfg.stop_at.iter().any(|q| q.dist(&img[i]) < cfg.stop_radius)) {
            return Some(i);
        }
    }
    None
}

/// Drops interior points whose neighbours are already close and nearly
/// collinear.
fn coarsen(p: Vec<AnnulusPoint>, cfg: &BranchSettings) -> Vec<AnnulusPoint> {
    if p.len() < 3 {
        return p;
    }
    let mut out = vec![p[0]];
    for i in 1..p.len() - 1 {
        let prev = *out.last().expect("non-empty");
        let keep = pdist(&prev, &p[i + 1]) >= 0.5 * cfg.max_spacing || turn(&prev, &p[i], &p[i + 1]) >= 0.25 * cfg.max_turn;
        if keep {
            out.push(p[i]);
        }
    }
    out.push(p[p.len() - 1]);
    out
}

fn push_point(c: &mut BranchCurve, p: AnnulusPoint) {
    let last = c.points.last().copied().expect("non-empty");
    let s = c.arclength.last().copied().unwrap_or(0.0) + pdist(&last, &p);
    c.points.push(p);
    c.arclength.push(s);
}

pub fn polyline_length(p: &[AnnulusPoint]) -> f64 {
    p.windows(2).map(|w| pdist(&w[0], &w[1])).sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct Crossing {
    pub point: AnnulusPoint,
    /// Angle between the local tangents, in `[0, π/2]`.
    pub angle: f64,
    pub segment_a: usize,
    pub segment_b: usize,
    pub transverse: bool,
}

/// Tangent of the cubic through the four points around segment `i`, with
/// chord-length parameters, at fraction `s` of the segment.
fn local_tangent(p: &[AnnulusPoint], i: usize, s: f64) -> [f64; 2] {
    let lo = i.saturating_sub(1);
    let hi = (i + 2).min(p.len() - 1);
    let idx: Vec<usize> = (lo..=hi).collect();
    let mut tau = vec![0.0; idx.len()];
    for k in 1..idx.len() {
        tau[k] = tau[k - 1] + pdist(&p[idx[k - 1]], &p[idx[k]]);
    }
    let base = idx.iter().position(|&j| j == i).expect("segment start is in the stencil");
    let t = tau[base] + s * (tau[base + 1] - tau[base]);
    let mut d = [0.0, 0.0];
    for j in 0..idx.len() {
        let mut lj = 0.0;
        for m in 0..idx.len() {
            if m == j {
                continue;
            }
            let mut prod = 1.0 / (tau[j] - tau[m]);
            for l in 0..idx.len() {
                if l != j && l != m {
                    prod *= (t - tau[l]) / (tau[j] - tau[l]);
                }
            }
            lj += prod;
        }
        d[0] += lj * p[idx[j]].phi;
        d[1] += lj * p[idx[j]].y;
    }
    d
}

/// Intersections of two polylines in `A`, with `φ` matched modulo `2π`.
/// Crossings within `exclude_radius` of any point in `exclude` are skipped.
pub fn detect_crossing(a: &[AnnulusPoint], b: &[AnnulusPoint], angle_floor: f64, exclude: &[AnnulusPoint], exclude_radius: f64) -> Vec<Crossing> {
    let mut out = Vec::new();
    if a.len() < 2 || b.len() < 2 {
        return out;
    }
    let bbox = |p: &AnnulusPoint, q: &AnnulusPoint| (p.phi.min(q.phi), p.phi.max(q.phi), p.y.min(q.y), p.y.max(q.y));
    for i in 0..a.len() - 1 {
        let (a0, a1) = (a[i], a[i + 1]);
        let ba = bbox(&a0, &a1);
        let amid = 0.5 * (a0.phi + a1.phi);
        for j in 0..b.len() - 1 {
            let shift = TAU * ((amid - 0.5 * (b[j].phi + b[j + 1].phi)) / TAU).round();
            let (b0, b1) = (AnnulusPoint::new(b[j].phi + shift, b[j].y), AnnulusPoint::new(b[j + 1].phi + shift, b[j + 1].y));
            let bb = bbox(&b0, &b1);
            if bb.0 > ba.1 || bb.1 < ba.0 || bb.2 > ba.3 || bb.3 < ba.2 {
                continue;
            }
            let (r0, r1) = (a1.phi - a0.phi, a1.y - a0.y);
            let (s0, s1) = (b1.phi - b0.phi, b1.y - b0.y);
            let den = r0 * s1 - r1 * s0;
            if den == 0.0 {
                continue;
            }
            let (q0, q1) = (b0.phi - a0.phi, b0.y - a0.y);
            let t = (q0 * s1 - q1 * s0) / den;
            let u = (q0 * r1 - q1 * r0) / den;
            if !(0.0..1.0).contains(&t) || !(0.0..1.0).contains(&u) {
                continue;
            }
            let point = AnnulusPoint::new(a0.phi + t * r0, a0.y + t * r1);
            if exclude.iter().any(|e| e.dist(&point) < exclude_radius) {
                continue;
            }
            let ta = local_tangent(a, i, t);
            let tb = local_tangent(b, j, u);
            let cross = (ta[0] * tb[1] - ta[1] * tb[0]).abs();
            let dotp = (ta[0] * tb[0] + ta[1] * tb[1]).abs();
            let angle = cross.atan2(dotp);
            out.push(Crossing { point: point.wrapped(), angle, segment_a: i, segment_b: j, transverse: angle >= angle_floor });
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub enum CurveKind {
    /// `y = f(φ)` over the whole circle.
    Graph,
    /// Closed loop around a centre, `r = f(θ)`.
    Loop { center: AnnulusPoint },
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveFit {
    pub kind: CurveKind,
    pub harmonics: usize,
    pub coeffs: Vec<f64>,
    pub max_residual: f64,
}

fn fourier_fit(theta: &[f64], val: &[f64], harmonics: usize) -> (Vec<f64>, f64) {
    let cols = 2 * harmonics + 1;
    let a = DMatrix::from_fn(theta.len(), cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            let k = c.div_ceil(2) as f64;
            if c % 2 == 1 {
                (k * theta[r]).cos()
            } else {
                (k * theta[r]).sin()
            }
        }
    });
    let b = DVector::from_column_slice(val);
    let coef = solve_least_squares(a.clone(), &b);
    let res = (a * &coef - b).amax();
    (coef.iter().copied().collect(), res)
}

/// Fits a smooth closed curve to an orbit: a Fourier graph `y(φ)` when
/// the orbit winds around the annulus, otherwise a Fourier loop `r(θ)`
/// around its centroid.
pub fn fit_invariant_curve(orbit: &[AnnulusPoint], harmonics: usize) -> Result<CurveFit> {
    if orbit.len() < 2 * harmonics + 2 {
        return Err(GeoError::InvalidArgument("orbit too short for the requested harmonics".into()));
    }
    let mut phis: Vec<f64> = orbit.iter().map(|p| p.phi.rem_euclid(TAU)).collect();
    phis.sort_by(f64::total_cmp);
    let mut gap = TAU - phis[phis.len() - 1] + phis[0];
    for w in phis.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    if gap < PI / 4.0 {
        let th: Vec<f64> = orbit.iter().map(|p| p.phi).collect();
        let v: Vec<f64> = orbit.iter().map(|p| p.y).collect();
        let (coeffs, max_residual) = fourier_fit(&th, &v, harmonics);
        return Ok(CurveFit { kind: CurveKind::Graph, harmonics, coeffs, max_residual });
    }
    let ref_phi = orbit[0].phi;
    let un: Vec<AnnulusPoint> = orbit.iter().map(|p| AnnulusPoint::new(ref_phi + wrap_pi(p.phi - ref_phi), p.y)).collect();
    let n = un.len() as f64;
    let center = AnnulusPoint::new(un.iter().map(|p| p.phi).sum::<f64>() / n, un.iter().map(|p| p.y).sum::<f64>() / n);
    let th: Vec<f64> = un.iter().map(|p| (p.y - center.y).atan2(p.phi - center.phi)).collect();
    let r: Vec<f64> = un.iter().map(|p| pdist(p, &center)).collect();
    let (coeffs, max_residual) = fourier_fit(&th, &r, harmonics);
    Ok(CurveFit { kind: CurveKind::Loop { center: center.wrapped() }, harmonics, coeffs, max_residual })
}

/// Writes an orbit as CSV rows `(n, phi, y)`.
pub fn write_orbit_csv<W: Write>(orbit: &[AnnulusPoint], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "phi", "y"])?;
    for (i, p) in orbit.iter().enumerate() {
        wr.write_record(&[i.to_string(), p.phi.to_string(), p.y.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct TangleReport {
    pub points: Vec<AnnulusPoint>,
    pub crossings: Vec<Crossing>,
    pub transverse: usize,
    pub max_angle: f64,
    pub branches: Vec<BranchCurve>,
}

/// Grows both branches of `W^u` and `W^s` at each point of `set` and
/// reports all crossings between unstable and stable branches away from
/// the points themselves.
pub fn tangle_report<F: Field + Clone + Send + Sync>(map: &AnnulusMap<F>, set: &[PeriodicPoint], cfg: &BranchSettings, angle_floor: f64) -> Result<TangleReport> {
    let points: Vec<AnnulusPoint> = set.iter().map(|p| p.point).collect();
    let mut cfg = cfg.clone();
    cfg.stop_at.extend(points.iter().copied());
    let jobs: Vec<(usize, Side, f64)> = (0..set.len())
        .flat_map(|i| [(i, Side::Unstable, 1.0), (i, Side::Unstable, -1.0), (i, Side::Stable, 1.0), (i, Side::Stable, -1.0)])
        .collect();
    let grow = |&(i, side, dir): &(usize, Side, f64)| grow_branches(map, &set[i], side, dir, &cfg);
    #[cfg(feature = "parallel")]
    let branches: Vec<BranchCurve> = {
        use rayon::prelude::*;
        jobs.par_iter().map(grow).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let branches: Vec<BranchCurve> = jobs.iter().map(grow).collect::<Result<Vec<_>>>()?;
    let exclude_radius = 10.0 * cfg.seed_distance.max(1e-5);
    let mut crossings = Vec::new();
    for u in branches.iter().filter(|b| b.side == Side::Unstable) {
        for s in branches.iter().filter(|b| b.side == Side::Stable) {
            crossings.extend(detect_crossing(&u.points, &s.points, angle_floor, &points, exclude_radius));
        }
    }
    let transverse = crossings.iter().filter(|c| c.transverse).count();
    let max_angle = crossings.iter().map(|c| c.angle).fold(0.0, f64::max);
    Ok(TangleReport { points, crossings, transverse, max_angle, branches })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse_perimeter(a: f64, b: f64) -> f64 {
        let n = 4000;
        let h = TAU / n as f64;
        (0..n).map(|i| (a * a * ((i as f64 + 0.5) * h).sin().powi(2) + b * b * ((i as f64 + 0.5) * h).cos().powi(2)).sqrt() * h).sum()
    }

    fn ellipsoid_map() -> AnnulusMap<crate::expr::Expr> {
        let e = Surface::ellipsoid(2.0, 2f64.sqrt(), 1.0);
        let st = PhaseState::new(&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        AnnulusMap::build(&e, &st, ellipse_perimeter(2.0, 2f64.sqrt()), &[0.0, 0.0, 1.0], AnnulusSettings::default()).unwrap()
    }

    #[test]
    fn sphere_map_is_identity_with_return_time_two_pi() {
        let s = Surface::sphere();
        let st = PhaseState::new(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let map = AnnulusMap::build(&s, &st, TAU, &[0.0, 0.0, 1.0], AnnulusSettings::default()).unwrap();
        for z in [AnnulusPoint::new(0.3, 0.4), AnnulusPoint::new(4.0, 2.5)] {
            assert!(map.map(z).unwrap().dist(&z) < 1e-9);
            assert!((map.return_time(z).unwrap() - TAU).abs() < 1e-9);
            let back = map.iterate(z, 1, Direction::Backward).unwrap();
            assert!(back.dist(&z) < 1e-9);
        }
    }

    #[test]
    fn ellipsoid_fixed_points_and_symmetry() {
        let map = ellipsoid_map();
        let seeds: Vec<_> = (0..4).map(|k| AnnulusPoint::new(f64::from(k) * FRAC_PI_2 + 0.03, FRAC_PI_2 - 0.04)).collect();
        let cfg = FixedPointSettings { periods: vec![1], ..FixedPointSettings::default() };
        let fps = annulus_fixed_points(&map, &seeds, &cfg).unwrap();
        assert_eq!(fps.len(), 4);
        for p in &fps {
            assert!(p.residual < 1e-10);
            assert!((p.point.y - FRAC_PI_2).abs() < 1e-9);
            let k = (p.point.phi / FRAC_PI_2).round() as i64;
            assert!((p.point.phi - k as f64 * FRAC_PI_2).abs() < 1e-9);
            let expected = if k % 2 == 0 { "hyperbolic" } else { "1-elliptic" };
            assert_eq!(p.label, expected, "{p:?}");
            assert!((p.jacobian.determinant() - 1.0).abs() < 1e-8);
        }
        assert!(map.half_turn_defect(&seeds).unwrap() < 1e-9);
    }

    #[test]
    fn boundary_extension_is_continuous() {
        let map = ellipsoid_map();
        let (b, tau) = map.boundary_return(0.4).unwrap();
        let z = AnnulusPoint::new(0.4, 1e-5);
        let pz = map.map(z).unwrap();
        assert!(pz.dist(&b) < 1e-4, "{pz:?} {b:?}");
        assert!((map.return_time(z).unwrap() - tau).abs() < 1e-4);
    }

    #[test]
    fn saddle_eigenvectors() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let (lu, vu, vs) = saddle_directions(&m).unwrap();
        assert!((lu - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        let mv = &m * DVector::from_column_slice(&vu);
        assert!((mv[0] - lu * vu[0]).abs() + (mv[1] - lu * vu[1]).abs() < 1e-13);
        assert!((vu[0] * vs[0] + vu[1] * vs[1]).abs() < 1e-13);
        assert!(saddle_directions(&DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn crossings_of_lines_across_the_seam() {
        let a: Vec<_> = (0..=20).map(|i| AnnulusPoint::new(TAU - 0.5 + 0.05 * f64::from(i), 1.0)).collect();
        let b: Vec<_> = (0..=20).map(|i| AnnulusPoint::new(0.2, 0.5 + 0.05 * f64::from(i))).collect();
        let c = detect_crossing(&a, &b, 1e-3, &[], 0.0);
        assert_eq!(c.len(), 1);
        assert!((c[0].angle - FRAC_PI_2).abs() < 1e-12);
        assert!(c[0].point.dist(&AnnulusPoint::new(0.2, 1.0)) < 1e-12);
        assert!(detect_crossing(&a, &b, 1e-3, &[AnnulusPoint::new(0.2, 1.0)], 0.1).is_empty());
        let tilted: Vec<_> = (0..=20).map(|i| AnnulusPoint::new(TAU - 0.5 + 0.05 * f64::from(i), 0.99975 + 2.5e-5 * f64::from(i))).collect();
        let c = detect_crossing(&a, &tilted, 1e-3, &[], 0.0);
        assert_eq!(c.len(), 1);
        assert!(!c[0].transverse);
        assert!((c[0].angle - 5e-4f64.atan()).abs() < 1e-9);
    }

    #[test]
    fn curve_fits() {
        let graph: Vec<_> = (0..200).map(|i| {
            let p = 0.77 * f64::from(i);
            AnnulusPoint::new(p.rem_euclid(TAU), 1.2 + 0.1 * p.sin() - 0.03 * (3.0 * p).cos())
        }).collect();
        let f = fit_invariant_curve(&graph, 6).unwrap();
        assert!(matches!(f.kind, CurveKind::Graph));
        assert!(f.max_residual < 1e-10, "{}", f.max_residual);
        let lp: Vec<_> = (0..200).map(|i| {
            let t = 0.61 * f64::from(i);
            AnnulusPoint::new((0.05 + 0.3 * t.cos()).rem_euclid(TAU), 1.5 + 0.3 * t.sin())
        }).collect();
        let f = fit_invariant_curve(&lp, 6).unwrap();
        assert!(matches!(f.kind, CurveKind::Loop { .. }));
        assert!(f.max_residual < 1e-6, "{}", f.max_residual);
    }

    #[test]
    fn branch_seed_and_first_segment() {
        let map = ellipsoid_map();
        let fp = refine_periodic_point(&map, AnnulusPoint::new(0.02, 1.6), 1, &FixedPointSettings::default()).unwrap();
        let zero = BranchSettings { max_arclength: 0.0, ..BranchSettings::default() };
        let b = grow_branches(&map, &fp, Side::Unstable, 1.0, &zero).unwrap();
        assert_eq!(b.points.len(), 1);
        let short = BranchSettings { max_arclength: 1e-3, ..BranchSettings::default() };
        let b = grow_branches(&map, &fp, Side::Stable, -1.0, &short).unwrap();
        let lu = b.eigenvalue.abs();
        assert!((b.stats.first_segment_ratio - lu).abs() / lu < 1e-4, "{:?}", b.stats);
        assert!(b.stats.max_spacing <= 1e-2);
    }
}

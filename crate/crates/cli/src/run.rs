use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use geolab::annulus::{
    annulus_fixed_points, fit_invariant_curve, tangle_report, write_orbit_csv, AnnulusMap, AnnulusPoint, AnnulusSettings, BranchSettings, FixedPointSettings,
};
use geolab::expr::Expr;
use geolab::flow::{integrate, FlowSettings, Trajectory};
use geolab::jets::{basis_persistence_scan, k_general_test, random_symplectic, y1_power, PolySpace};
use geolab::perturbation::{finite_difference_check, first_order_hamiltonian, richardson_ratios};
use geolab::poincare::{find_closed_geodesic, monodromy, return_map, ClassifySettings, ClosedSearch, MonodromyResult, SectionSpec};
use geolab::{PhaseState, Surface};

use crate::error::CliError;
use crate::manifest::OutDir;
use crate::scenario::{annulus_point, Kind, Scenario, Tolerances};
use crate::suites;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol_scale: f64,
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out: None, seed: None, tol_scale: 1.0, threads: None }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub result: Value,
    pub manifest: Value,
}

/// The scenario as it will actually run: seed override applied and
/// tolerances scaled.
pub fn effective(sc: &Scenario, opts: &RunOptions) -> Scenario {
    let mut e = sc.clone();
    if let Some(s) = opts.seed {
        e.seed = s;
    }
    if opts.tol_scale != 1.0 {
        e.tolerances = e.tolerances.scaled(opts.tol_scale);
    }
    e
}

pub fn output_dir(sc: &Scenario, opts: &RunOptions) -> PathBuf {
    opts.out.clone().or_else(|| sc.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&sc.name))
}

pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let sc = effective(sc, opts);
    let root = output_dir(&sc, opts);
    let mut out = OutDir::create(&root)?;
    out.write("scenario.toml", sc.to_toml().as_bytes())?;
    let header = json!({
        "scenario": sc.name,
        "kind": sc.kind,
        "config_sha256": sc.config_hash(),
        "seed": sc.seed,
        "tol_scale": opts.tol_scale,
        "threads": rayon::current_num_threads(),
    });
    match execute(&sc, opts, &mut out) {
        Ok(result) => {
            let mut h = header;
            h["status"] = "ok".into();
            let manifest = out.finish(h)?;
            Ok(RunSummary { out: root, result, manifest })
        }
        Err(e) => {
            let mut diag = e.diagnostic();
            diag["scenario"] = sc.name.clone().into();
            diag["seed"] = sc.seed.into();
            out.json("failure.json", &diag)?;
            let mut h = header;
            h["status"] = "failed".into();
            out.finish(h)?;
            Err(e)
        }
    }
}

fn execute(sc: &Scenario, opts: &RunOptions, out: &mut OutDir) -> Result<Value, CliError> {
    let result = match sc.kind {
        Kind::Integrate => run_integrate(sc, out)?,
        Kind::Closed => run_closed(sc, out, true)?,
        Kind::Classify => run_closed(sc, out, false)?,
        Kind::Section => run_section(sc, out)?,
        Kind::Perturb => run_perturb(sc, out)?,
        Kind::Jets => run_jets(sc, out)?,
        Kind::Annulus => run_annulus(sc, out)?,
        Kind::Branches => run_branches(sc, out)?,
        Kind::Verify => {
            let name = &sc.verify.as_ref().expect("validated").suite;
            let rep = suites::run_suite(name, opts.tol_scale)?;
            let v = rep.to_json();
            out.json("verify.json", &v)?;
            v
        }
    };
    Ok(result)
}

fn states(sc: &Scenario) -> Result<Vec<PhaseState>, CliError> {
    sc.states.iter().map(|s| s.unit()).collect()
}

fn flow_settings(t: &Tolerances) -> FlowSettings {
    FlowSettings { ctrl: t.ctrl(), ..FlowSettings::default() }
}

fn run_integrate(sc: &Scenario, out: &mut OutDir) -> Result<Value, CliError> {
    let s = sc.surface()?;
    let spec = sc.integrate.clone().unwrap_or_default();
    let fs = flow_settings(&sc.tolerances);
    let trs: Vec<Trajectory> = states(sc)?
        .par_iter()
        .map(|st| integrate(&s, st, spec.t_end, &fs).map_err(CliError::at("integrate")))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, tr) in trs.iter().enumerate() {
        let stride = spec.stride.max(1);
        let keep = |j: &usize| j.is_multiple_of(stride) || *j + 1 == tr.times.len();
        let thin = Trajectory {
            times: tr.times.iter().enumerate().filter(|(j, _)| keep(j)).map(|(_, v)| *v).collect(),
            states: tr.states.iter().enumerate().filter(|(j, _)| keep(j)).map(|(_, v)| v.clone()).collect(),
            energy: tr.energy.iter().enumerate().filter(|(j, _)| keep(j)).map(|(_, v)| *v).collect(),
            stats: tr.stats.clone(),
        };
        out.csv(&format!("trajectory_{i}.csv"), |w| thin.write_csv(w))?;
        let speed_drift = tr.states.iter().map(|z| (z.speed() - 1.0).abs()).fold(0.0, f64::max);
        let off = tr.states.iter().map(|z| s.value(&z.x).abs()).fold(0.0, f64::max);
        rows.push(json!({
            "index": i,
            "steps": tr.stats.steps,
            "rejected": tr.stats.rejected,
            "max_energy_drift": tr.stats.max_energy_drift,
            "max_speed_drift": speed_drift,
            "max_constraint_residual": off,
            "final": tr.last(),
        }));
    }
    let v = json!({ "t_end": spec.t_end, "trajectories": rows });
    out.json("integrate.json", &v)?;
    Ok(v)
}

fn mono_json(i: usize, st: &PhaseState, m: &MonodromyResult, iterations: Option<usize>) -> Value {
    json!({
        "index": i,
        "label": m.label,
        "length": m.period,
        "eigenvalues": m.eigenvalues,
        "closing_residual": m.residual,
        "symplectic_defect": m.symplectic_defect,
        "reciprocal_defect": m.reciprocal_defect,
        "newton_iterations": iterations,
        "state": st,
    })
}

fn run_closed(sc: &Scenario, out: &mut OutDir, registry: bool) -> Result<Value, CliError> {
    let s = sc.surface()?;
    let spec = sc.closed.clone().unwrap_or_default();
    let search = ClosedSearch {
        ret: sc.tolerances.ret(),
        classify: ClassifySettings::default(),
        capture_radius: spec.capture_radius,
        tol: sc.tolerances.newton_tol,
        max_iter: spec.max_iter,
        ..ClosedSearch::default()
    };
    let refine = registry || spec.refine;
    let found: Vec<(PhaseState, MonodromyResult, Option<usize>)> = states(sc)?
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            let stage = format!("closed geodesic {i}");
            if refine {
                let g = find_closed_geodesic(&s, st, &search).map_err(CliError::at(&stage))?;
                Ok((g.state, g.monodromy, Some(g.iterations)))
            } else {
                let m = monodromy(&s, st, &search.ret, &search.classify).map_err(CliError::at(&stage))?;
                Ok((st.clone(), m, None))
            }
        })
        .collect::<Result<_, CliError>>()?;
    let hash = sc.surface.as_ref().expect("validated").hash();
    if registry {
        let entries: Vec<Value> = found
            .iter()
            .map(|(st, m, it)| {
                let mut e = geolab::poincare::ClosedGeodesic { state: st.clone(), monodromy: m.clone(), iterations: it.unwrap_or(0) }.registry_entry(&hash);
                e["length"] = m.period.into();
                e["closing_residual"] = m.residual.into();
                e
            })
            .collect();
        let v = json!({ "surface": hash, "geodesics": entries });
        out.json("registry.json", &v)?;
        Ok(v)
    } else {
        let rows: Vec<Value> = found.iter().enumerate().map(|(i, (st, m, it))| mono_json(i, st, m, *it)).collect();
        let labels: Vec<&str> = found.iter().map(|(_, m, _)| m.label.as_str()).collect();
        let v = json!({ "surface": hash, "labels": labels, "orbits": rows });
        out.json("classify.json", &v)?;
        Ok(v)
    }
}

fn run_section(sc: &Scenario, out: &mut OutDir) -> Result<Value, CliError> {
    let s = sc.surface()?;
    let anchor = states(sc)?.remove(0);
    let sec = SectionSpec::at(&s, &anchor).map_err(CliError::at("section"))?;
    let spec = sc.section.clone().unwrap_or_default();
    let m = 2 * sec.d();
    if let Some(p) = spec.points.iter().find(|p| p.len() != m) {
        return Err(CliError::Config(format!("section point {p:?} needs {m} coordinates")));
    }
    let ret = sc.tolerances.ret();
    let orbits: Vec<Vec<(Vec<f64>, f64)>> = spec
        .points
        .par_iter()
        .enumerate()
        .map(|(i, z0)| {
            let stage = format!("section orbit {i}");
            let mut z = z0.clone();
            let mut pts = vec![(z.clone(), 0.0)];
            for _ in 0..spec.iterates {
                let (pz, t) = return_map(&s.field, &sec, &z, &ret).map_err(CliError::at(&stage))?;
                z = pz;
                pts.push((z.clone(), t));
            }
            Ok(pts)
        })
        .collect::<Result<_, CliError>>()?;
    out.csv("section.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["orbit".to_string(), "n".into(), "t".into()];
        header.extend((1..=m).map(|i| format!("z{i}")));
        wr.write_record(&header)?;
        for (o, pts) in orbits.iter().enumerate() {
            for (n, (z, t)) in pts.iter().enumerate() {
                let mut row = vec![o.to_string(), n.to_string(), format!("{t:.17e}")];
                row.extend(z.iter().map(|v| format!("{v:.17e}")));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    let v = json!({
        "d": sec.d(),
        "transversality": sec.transversality(),
        "orbits": orbits.len(),
        "iterates": spec.iterates,
        "anchor": anchor,
    });
    out.json("section.json", &v)?;
    Ok(v)
}

fn run_perturb(sc: &Scenario, out: &mut OutDir) -> Result<Value, CliError> {
    let s = sc.surface()?;
    let spec = sc.perturb.clone().expect("validated");
    let surf = sc.surface.as_ref().expect("validated");
    let psi = Expr::parse(&spec.psi, surf.dim, &surf.params).map_err(|e| CliError::Config(format!("perturb.psi: {e}")))?;
    let mut rows = Vec::new();
    let mut csv_rows = Vec::new();
    for (i, st) in states(sc)?.iter().enumerate() {
        let stage = format!("perturbation at state {i}");
        let predicted = first_order_hamiltonian(&s, &psi, st).map_err(CliError::at(&stage))?;
        let reps: Vec<_> = spec.eps.iter().map(|&e| finite_difference_check(&s, &psi, st, e)).collect::<Result<_, _>>().map_err(CliError::at(&stage))?;
        for r in &reps {
            csv_rows.push([i as f64, r.eps, r.predicted, r.slope, r.error]);
        }
        rows.push(json!({ "index": i, "predicted_slope": predicted, "reports": reps, "richardson_ratios": richardson_ratios(&reps) }));
    }
    out.csv("perturb.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["state", "eps", "predicted", "slope", "error"])?;
        for r in &csv_rows {
            wr.write_record(&[format!("{}", r[0] as usize), format!("{:e}", r[1]), format!("{:.17e}", r[2]), format!("{:.17e}", r[3]), format!("{:.17e}", r[4])])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    let v = json!({ "psi": spec.psi, "states": rows });
    out.json("perturb.json", &v)?;
    Ok(v)
}

fn jet_columns(tuple: &[DMatrix<f64>], d: usize, k: u32) -> Result<Vec<Vec<f64>>, CliError> {
    let space = PolySpace::phase(d, k);
    let f = y1_power(d, k);
    tuple.iter().map(|s| space.coords(&f.compose_linear(&s.rows(0, d).into_owned())).map_err(CliError::at("jets"))).collect()
}

fn run_jets(sc: &Scenario, out: &mut OutDir) -> Result<Value, CliError> {
    let spec = sc.jets.clone().unwrap_or_default();
    if spec.d == 0 || spec.k == 0 {
        return Err(CliError::Config("jets.d and jets.k must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let (d, k) = (spec.d, spec.k);
    let dims: Vec<Value> = (1..=k).map(|m| json!({ "k": m, "dim": PolySpace::phase(d, m).dim(), "formula": PolySpace::formula_dim(2 * d, m) })).collect();
    let n = PolySpace::phase(d, k).dim();
    let mut trials = Vec::new();
    let mut general = 0;
    let mut persistence = Vec::new();
    for _ in 0..spec.trials {
        let tuple: Vec<DMatrix<f64>> = (0..n).map(|_| random_symplectic(d, spec.scale, &mut rng)).collect();
        let rep = k_general_test(&tuple, d, k).map_err(CliError::at("k-general test"))?;
        general += usize::from(rep.is_general);
        if rep.is_general && !rep.used_fallback {
            let other: Vec<DMatrix<f64>> = (0..n).map(|_| random_symplectic(d, spec.scale, &mut rng)).collect();
            let (u, v) = (jet_columns(&tuple, d, k)?, jet_columns(&other, d, k)?);
            let v: Vec<Vec<f64>> = v.iter().zip(&u).map(|(b, a)| b.iter().zip(a).map(|(x, y)| x - y).collect()).collect();
            match basis_persistence_scan(&u, &v, spec.eps_star, spec.grid) {
                Ok(p) => persistence.push(json!({ "bad_eps_count": p.bad_eps_count, "within_bound": p.within_bound })),
                Err(e) => persistence.push(json!({ "skipped": e.to_string() })),
            }
        }
        trials.push(json!({ "is_general": rep.is_general, "rank": rep.rank, "condition": rep.condition, "used_fallback": rep.used_fallback }));
    }
    let v = json!({ "d": d, "k": k, "dim": n, "dimensions": dims, "general": general, "trials": trials, "persistence": persistence });
    out.json("jets.json", &v)?;
    Ok(v)
}

fn build_annulus(sc: &Scenario, s: &Surface<Expr>) -> Result<(AnnulusMap<Expr>, f64), CliError> {
    let spec = sc.annulus.clone().unwrap_or_default();
    let anchor = states(sc)?.remove(0);
    let ret = sc.tolerances.ret();
    let length = match spec.length {
        Some(l) => l,
        None => monodromy(s, &anchor, &ret, &ClassifySettings::default()).map_err(CliError::at("base geodesic length"))?.period,
    };
    let settings = AnnulusSettings { ret: geolab::poincare::ReturnSettings { t_max: ret.t_max.min(200.0), ..ret }, ..AnnulusSettings::default() };
    let map = AnnulusMap::build(s, &anchor, length, &spec.north, settings).map_err(CliError::at("annulus map"))?;
    Ok((map, length))
}

fn fixed_point_settings(sc: &Scenario) -> FixedPointSettings {
    let spec = sc.annulus.clone().unwrap_or_default();
    FixedPointSettings { periods: spec.periods, ..FixedPointSettings::default() }
}

fn run_annulus(sc: &Scenario, out: &mut OutDir) -> Result<Value, CliError> {
    let s = sc.surface()?;
    let spec = sc.annulus.clone().unwrap_or_default();
    let (map, length) = build_annulus(sc, &s)?;
    let orbits: Vec<Vec<AnnulusPoint>> = spec
        .orbits
        .par_iter()
        .enumerate()
        .map(|(i, z)| map.orbit(annulus_point(z), spec.iterates).map_err(CliError::at(&format!("annulus orbit {i}"))))
        .collect::<Result<_, _>>()?;
    out.csv("orbits.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["orbit", "n", "phi", "y"])?;
        for (o, pts) in orbits.iter().enumerate() {
            for (n, p) in pts.iter().enumerate() {
                wr.write_record(&[o.to_string(), n.to_string(), format!("{:.17e}", p.phi), format!("{:.17e}", p.y)])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    for (o, pts) in orbits.iter().enumerate() {
        out.csv(&format!("orbit_{o}.csv"), |w| write_orbit_csv(pts, w))?;
    }
    let fits: Vec<Value> = orbits
        .iter()
        .map(|o| match fit_invariant_curve(o, spec.harmonics) {
            Ok(f) => json!({ "start": o[0], "fit": f }),
            Err(e) => json!({ "start": o[0], "fit": null, "note": e.to_string() }),
        })
        .collect();
    let seeds: Vec<AnnulusPoint> = spec.fixed_point_seeds.iter().map(annulus_point).collect();
    let fps = annulus_fixed_points(&map, &seeds, &fixed_point_settings(sc)).map_err(CliError::at("periodic points"))?;
    let fixed: Vec<Value> = fps.iter().map(|p| json!({ "point": p.point, "period": p.period, "label": p.label, "eigenvalues": p.eigenvalues, "residual": p.residual })).collect();
    let mut v = json!({
        "length": length,
        "north": spec.north,
        "min_kappa": map.convexity.min_kappa,
        "orbits": fits,
        "periodic_points": fixed,
    });
    if spec.symmetric {
        let samples: Vec<AnnulusPoint> = (0..8).map(|i| AnnulusPoint::new(0.3 + 0.77 * i as f64, 0.25 + 0.33 * i as f64)).collect();
        v["half_turn_defect"] = map.half_turn_defect(&samples).map_err(CliError::at("half-turn check"))?.into();
    }
    out.json("annulus.json", &v)?;
    Ok(v)
}

fn run_branches(sc: &Scenario, out: &mut OutDir) -> Result<Value, CliError> {
    let s = sc.surface()?;
    let spec = sc.annulus.clone().unwrap_or_default();
    let bs = sc.branches.clone().unwrap_or_default();
    let (map, length) = build_annulus(sc, &s)?;
    let seeds: Vec<AnnulusPoint> = spec.fixed_point_seeds.iter().map(annulus_point).collect();
    let set: Vec<_> = annulus_fixed_points(&map, &seeds, &fixed_point_settings(sc))
        .map_err(CliError::at("periodic points"))?
        .into_iter()
        .filter(|p| p.label == "hyperbolic")
        .collect();
    if set.is_empty() {
        return Err(CliError::Numerical { stage: "periodic points".into(), error: geolab::GeoError::InvalidArgument("no hyperbolic periodic point found from the given seeds".into()) });
    }
    let cfg = BranchSettings { max_spacing: bs.max_spacing, max_arclength: bs.max_arclength, stop_radius: bs.stop_radius, ..BranchSettings::default() };
    let rep = tangle_report(&map, &set, &cfg, bs.angle_floor).map_err(CliError::at("branch growth"))?;
    let mut branches = Vec::new();
    for (i, b) in rep.branches.iter().enumerate() {
        let side = format!("{:?}", b.side).to_lowercase();
        let dir = if b.direction > 0.0 { "plus" } else { "minus" };
        let name = format!("branch_{i}_{side}_{dir}.csv");
        out.csv(&name, |w| b.write_csv(w))?;
        branches.push(json!({
            "file": name,
            "side": side,
            "direction": b.direction,
            "origin": b.origin,
            "eigenvalue": b.eigenvalue,
            "points": b.points.len(),
            "arclength": b.arclength.last(),
            "map_evaluations": b.stats.map_evaluations,
        }));
    }
    out.csv("crossings.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["phi", "y", "angle", "transverse"])?;
        for c in &rep.crossings {
            let p = c.point.wrapped();
            wr.write_record(&[format!("{:.17e}", p.phi), format!("{:.17e}", p.y), format!("{:.17e}", c.angle), c.transverse.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    let v = json!({
        "length": length,
        "periodic_points": set.iter().map(|p| json!({ "point": p.point, "period": p.period, "eigenvalues": p.eigenvalues })).collect::<Vec<_>>(),
        "angle_floor": bs.angle_floor,
        "crossings": rep.crossings.len(),
        "transverse": rep.transverse,
        "max_angle": rep.max_angle,
        "branches": branches,
    });
    out.json("tangle.json", &v)?;
    Ok(v)
}

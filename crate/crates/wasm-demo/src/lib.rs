//! Browser bindings: geodesics on an ellipsoid, the three principal
//! ellipses with their monodromy labels, and annulus-map orbits.

use std::f64::consts::TAU;

use geolab::annulus::{AnnulusMap, AnnulusPoint, AnnulusSettings};
use geolab::expr::Expr;
use geolab::flow::{integrate, FlowSettings};
use geolab::poincare::{monodromy, ClassifySettings, ReturnSettings};
use geolab::{PhaseState, Surface};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn ellipsoid(a: f64, b: f64, c: f64, eps: f64) -> Result<Surface<Expr>, JsValue> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(js_err("semi-axes must be positive"));
    }
    let src = format!("0.5*(x1^2/{} + x2^2/{} + x3^2/{} - 1) + {eps}*x1^2*x3^2", a * a, b * b, c * c);
    Ok(Surface::parse(&src, 3).map_err(js_err)?.with_bbox(3.0 * a.max(b).max(c)))
}

/// Unit-speed geodesic from `(a, 0, 0)` leaving at angle `theta` to the
/// x-y plane; returns a flat `[x, y, z, x, y, z, ...]` array.
#[wasm_bindgen]
pub fn geodesic(a: f64, b: f64, c: f64, theta: f64, t_end: f64) -> Result<Vec<f64>, JsValue> {
    let s = ellipsoid(a, b, c, 0.0)?;
    let st = PhaseState::new(&[a, 0.0, 0.0], &[0.0, theta.cos(), theta.sin()]);
    let tr = integrate(&s, &st, t_end.clamp(0.0, 500.0), &FlowSettings::default()).map_err(js_err)?;
    Ok(tr.states.iter().flat_map(|z| z.x.iter().copied()).collect())
}

/// Labels, periods and monodromy eigenvalues of the principal ellipses,
/// as a JSON string.
#[wasm_bindgen]
pub fn classify_principal(a: f64, b: f64, c: f64) -> Result<String, JsValue> {
    let s = ellipsoid(a, b, c, 0.0)?;
    let cases = [("x-y", [a, 0.0, 0.0], [0.0, 1.0, 0.0]), ("x-z", [a, 0.0, 0.0], [0.0, 0.0, 1.0]), ("y-z", [0.0, b, 0.0], [0.0, 0.0, 1.0])];
    let mut out = Vec::new();
    for (name, x, u) in cases {
        let m = monodromy(&s, &PhaseState::new(&x, &u), &ReturnSettings::default(), &ClassifySettings::default()).map_err(js_err)?;
        out.push(json!({ "plane": name, "label": m.label, "length": m.period, "eigenvalues": m.eigenvalues }));
    }
    Ok(serde_json::Value::Array(out).to_string())
}

/// Annulus map over the x-y ellipse of the (optionally perturbed)
/// ellipsoid; keeps the map between calls.
#[wasm_bindgen]
pub struct Annulus {
    map: AnnulusMap<Expr>,
}

#[wasm_bindgen]
impl Annulus {
    #[wasm_bindgen(constructor)]
    pub fn new(a: f64, b: f64, c: f64, eps: f64) -> Result<Annulus, JsValue> {
        let s = ellipsoid(a, b, c, eps)?;
        let st = PhaseState::new(&[a, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let m = monodromy(&s, &st, &ReturnSettings::default(), &ClassifySettings::default()).map_err(js_err)?;
        let map = AnnulusMap::build(&s, &st, m.period, &[0.0, 0.0, 1.0], AnnulusSettings::default()).map_err(js_err)?;
        Ok(Annulus { map })
    }

    pub fn length(&self) -> f64 {
        self.map.length()
    }

    /// `n` iterates from `(phi, y)` as `[phi, y, phi, y, ...]` with `phi`
    /// in `[0, 2π)`; stops early if an iterate fails.
    pub fn orbit(&self, phi: f64, y: f64, n: usize) -> Vec<f64> {
        let mut z = AnnulusPoint::new(phi, y);
        let mut out = Vec::with_capacity(2 * n + 2);
        for _ in 0..=n {
            let w = z.wrapped();
            out.push(w.phi.rem_euclid(TAU));
            out.push(w.y);
            match self.map.map(z) {
                Ok(next) => z = next,
                Err(_) => break,
            }
        }
        out
    }
}

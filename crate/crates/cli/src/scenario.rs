use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use geolab::annulus::AnnulusPoint;
use geolab::expr::Expr;
use geolab::integrator::StepControl;
use geolab::poincare::ReturnSettings;
use geolab::{PhaseState, Surface};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Integrate,
    Closed,
    Classify,
    Section,
    Perturb,
    Jets,
    Annulus,
    Branches,
    Verify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub expr: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<Surface<Expr>, CliError> {
        let e = Expr::parse(&self.expr, self.dim, &self.params).map_err(|e| CliError::Config(format!("surface.expr: {e}")))?;
        let s = Surface::new(e);
        Ok(match self.bbox {
            Some(b) => s.with_bbox(b),
            None => s,
        })
    }

    /// Hex SHA-256 of the expression, dimension and parameters.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.expr.as_bytes());
        h.update(self.dim.to_le_bytes());
        for (k, v) in &self.params {
            h.update(k.as_bytes());
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    pub event_tol: f64,
    pub t_max: f64,
    pub newton_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = StepControl::default();
        let r = ReturnSettings::default();
        Self { rtol: c.rtol, atol: c.atol, h_init: c.h_init, h_min: c.h_min, h_max: c.h_max, max_steps: c.max_steps, event_tol: r.event_tol, t_max: r.t_max, newton_tol: 1e-9 }
    }
}

impl Tolerances {
    pub fn ctrl(&self) -> StepControl {
        StepControl { rtol: self.rtol, atol: self.atol, h_init: self.h_init, h_min: self.h_min, h_max: self.h_max, max_steps: self.max_steps }
    }

    pub fn ret(&self) -> ReturnSettings {
        ReturnSettings { ctrl: self.ctrl(), t_max: self.t_max, n_hits: 1, event_tol: self.event_tol }
    }

    /// Scales the integration and root-finding tolerances, clamped away
    /// from the round-off floor.
    pub fn scaled(&self, s: f64) -> Self {
        let c = |v: f64| (v * s).max(1e-15);
        Self { rtol: c(self.rtol), atol: c(self.atol), event_tol: c(self.event_tol), newton_tol: c(self.newton_tol), ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl StateSpec {
    /// The state with `u` rescaled to unit length.
    pub fn unit(&self) -> Result<PhaseState, CliError> {
        let n: f64 = self.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if self.x.len() != self.u.len() || n == 0.0 || !n.is_finite() {
            return Err(CliError::Config(format!("state x = {:?}, u = {:?} is malformed", self.x, self.u)));
        }
        Ok(PhaseState::new(&self.x, &self.u.iter().map(|v| v / n).collect::<Vec<_>>()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateSpec {
    pub t_end: f64,
    pub stride: usize,
}

impl Default for IntegrateSpec {
    fn default() -> Self {
        Self { t_end: 100.0, stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedSpec {
    pub capture_radius: f64,
    pub max_iter: usize,
    /// Classify the anchors as given instead of refining them first.
    pub refine: bool,
}

impl Default for ClosedSpec {
    fn default() -> Self {
        Self { capture_radius: 0.1, max_iter: 40, refine: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionRun {
    pub points: Vec<Vec<f64>>,
    pub iterates: usize,
}

impl Default for SectionRun {
    fn default() -> Self {
        Self { points: Vec::new(), iterates: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSpec {
    pub psi: String,
    pub eps: Vec<f64>,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self { psi: String::new(), eps: (0..6).map(|i| 1e-3 / f64::from(1u32 << i)).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JetsSpec {
    pub d: usize,
    pub k: u32,
    pub trials: usize,
    pub scale: f64,
    pub eps_star: f64,
    pub grid: usize,
}

impl Default for JetsSpec {
    fn default() -> Self {
        Self { d: 1, k: 3, trials: 20, scale: 0.5, eps_star: 1.0, grid: 400 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnulusSpec {
    /// Length of the base closed geodesic; measured by monodromy when absent.
    pub length: Option<f64>,
    pub north: Vec<f64>,
    pub orbits: Vec<[f64; 2]>,
    pub iterates: usize,
    pub harmonics: usize,
    pub fixed_point_seeds: Vec<[f64; 2]>,
    pub periods: Vec<usize>,
    /// Check commutation with the half turn `φ ↦ φ + π`.
    pub symmetric: bool,
}

impl Default for AnnulusSpec {
    fn default() -> Self {
        Self { length: None, north: vec![0.0, 0.0, 1.0], orbits: Vec::new(), iterates: 500, harmonics: 12, fixed_point_seeds: Vec::new(), periods: vec![1, 2], symmetric: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchSpec {
    pub max_spacing: f64,
    pub max_arclength: f64,
    pub stop_radius: f64,
    pub angle_floor: f64,
}

impl Default for BranchSpec {
    fn default() -> Self {
        Self { max_spacing: 1e-2, max_arclength: 4.0, stop_radius: 0.25, angle_floor: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub suite: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrate: Option<IntegrateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<ClosedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<SectionRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jets: Option<JetsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annulus: Option<AnnulusSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branches: Option<BranchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn surface(&self) -> Result<Surface<Expr>, CliError> {
        self.surface.as_ref().ok_or_else(|| CliError::Config(format!("kind {:?} needs a [surface] table", self.kind)))?.build()
    }

    fn validate(&self) -> Result<(), CliError> {
        let needs_surface = !matches!(self.kind, Kind::Jets | Kind::Verify);
        if needs_surface {
            self.surface()?;
        }
        let needs_states = matches!(self.kind, Kind::Integrate | Kind::Closed | Kind::Classify | Kind::Section | Kind::Perturb | Kind::Annulus | Kind::Branches);
        if needs_states && self.states.is_empty() {
            return Err(CliError::Config(format!("kind {:?} needs at least one [[states]] entry", self.kind)));
        }
        if let Some(s) = &self.surface {
            for st in &self.states {
                if st.x.len() != s.dim || st.u.len() != s.dim {
                    return Err(CliError::Config(format!("state dimension {} does not match surface.dim = {}", st.x.len(), s.dim)));
                }
            }
        }
        if self.kind == Kind::Verify && self.verify.is_none() {
            return Err(CliError::Config("kind verify needs a [verify] table with a suite name".into()));
        }
        if self.kind == Kind::Perturb && self.perturb.as_ref().is_none_or(|p| p.psi.is_empty()) {
            return Err(CliError::Config("kind perturb needs [perturb] psi".into()));
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn annulus_point(p: &[f64; 2]) -> AnnulusPoint {
    AnnulusPoint::new(p[0], p[1])
}

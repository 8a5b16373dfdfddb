//! Scenario files (TOML) and the objects built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::charts::Windows;
use crate::energy::{self, AnisotropyForm, EnergyOptions, GradientForm, TimeRule};
use crate::error::{Error, Result};
use crate::fields::{Intensity, Mms, SingularField};
use crate::geom::{self, CrackPath, Domain, GrowthLaw, PathSpec, ScenarioDiagnostics, ValidationOptions};
use crate::material::TensorField;
use crate::solver::MeshSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub domain: Domain,
    pub path: PathSpec,
    pub law: GrowthLaw,
    #[serde(default = "identity")]
    pub material: TensorField,
    /// Intensity for `k-mode = custom`.
    #[serde(default)]
    pub intensity: Option<Intensity>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn identity() -> TensorField {
    TensorField::Identity
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub eta: f64,
    /// Half-width of the manufactured cutoff support in transformed coordinates.
    pub xi_eps: f64,
    pub t_start: f64,
    /// Defaults to the growth-law horizon.
    pub t_end: Option<f64>,
    pub time_samples: usize,
    /// Balance residual tolerance relative to `max E`.
    pub balance_tol: f64,
    pub quad_abs_tol: f64,
    pub quad_rel_tol: f64,
    pub max_cells: usize,
    /// Time quadrature of the work integral on each sample interval.
    pub time_rule: TimeRule,
    pub gradient: GradientForm,
    pub anisotropy: AnisotropyForm,
    /// Arc-length window behind the tip for the jump fit.
    pub sif_window: [f64; 2],
    pub sif_annulus: [f64; 2],
}

impl Default for Options {
    fn default() -> Self {
        Options {
            eta: 0.3,
            xi_eps: 0.1,
            t_start: 0.0,
            t_end: None,
            time_samples: 20,
            balance_tol: 1e-2,
            quad_abs_tol: 1e-7,
            quad_rel_tol: 1e-5,
            max_cells: 40000,
            time_rule: TimeRule::Gauss3,
            gradient: GradientForm::Tensor,
            anisotropy: AnisotropyForm::Formula,
            sif_window: [1e-3, 1e-2],
            sif_annulus: [0.01, 0.04],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub h: f64,
    pub h_tip: f64,
    pub dt: f64,
    /// Defaults to as many steps as fit in the first chart window.
    pub steps: Option<usize>,
    /// Keep a state every this many steps (the last state is always kept).
    pub snapshot_every: usize,
    /// Projection annulus for the SIF of pulled-back discrete fields.
    pub sif_annulus: [f64; 2],
    /// Mesh levels (`h`, `h/2`, ...) for convergence and mesh-stability runs.
    pub levels: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { h: 0.1, h_tip: 0.01, dt: 0.01, steps: None, snapshot_every: 5, sif_annulus: [0.03, 0.09], levels: 3 }
    }
}

/// Intensity choice for balance runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum KMode {
    /// `k = 2/√(π a)`, which makes the Griffith balance exact.
    Griffith,
    Constant(f64),
    /// The `[intensity]` table of the scenario.
    Custom,
}

impl std::str::FromStr for KMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<KMode> {
        match s {
            "griffith" => Ok(KMode::Griffith),
            "custom" => Ok(KMode::Custom),
            _ => {
                let v = s.strip_prefix("constant:").unwrap_or(s);
                v.parse::<f64>()
                    .map(KMode::Constant)
                    .map_err(|_| Error::Parameter(format!("k-mode must be griffith, custom or constant:<k>, got {s:?}")))
            }
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        Domain::new(s.domain.vertices.clone(), s.domain.dirichlet.clone())?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text).map_err(|e| match e {
            Error::Scenario(m) => Error::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn crack(&self) -> Result<CrackPath> {
        CrackPath::from_spec(&self.path)
    }

    pub fn t_end(&self) -> f64 {
        self.options.t_end.unwrap_or(self.law.t_end)
    }

    pub fn times(&self) -> Vec<f64> {
        let (a, b) = (self.options.t_start, self.t_end());
        let n = self.options.time_samples.max(2);
        (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * (i as f64 / (n - 1) as f64) }).collect()
    }

    pub fn validate(&self, opts: &ValidationOptions) -> Result<ScenarioDiagnostics> {
        let path = self.crack()?;
        Ok(geom::validate_scenario(&self.domain, &path, &self.law, &self.material, opts))
    }

    pub fn windows(&self) -> Result<Windows> {
        Windows::cover(&self.crack()?, &self.law, &self.material, &self.domain, self.options.eta, self.options.t_start, self.t_end())
    }

    /// Whether the `ξ` support stays inside the plateau of `k_η`. Outside it
    /// the forcing jumps across the circle `r = η/2` and the cubature gets
    /// expensive.
    pub fn xi_inside_plateau(&self) -> bool {
        self.options.xi_eps * std::f64::consts::SQRT_2 <= 0.5 * self.options.eta
    }

    pub fn singular_field(&self) -> Result<SingularField> {
        Ok(SingularField::new(&self.crack()?, &self.law, &self.material))
    }

    pub fn energy_options(&self) -> EnergyOptions {
        let o = &self.options;
        EnergyOptions {
            abs_tol: o.quad_abs_tol,
            rel_tol: o.quad_rel_tol,
            max_cells: o.max_cells,
            time_order: o.time_rule,
            gradient: o.gradient,
            anisotropy: o.anisotropy,
        }
    }

    /// Intensity for `mode`. The Griffith choice needs `a(t)` constant.
    pub fn intensity(&self, mode: KMode) -> Result<Intensity> {
        match mode {
            KMode::Constant(k) => Ok(Intensity::constant(k)),
            KMode::Custom => self
                .intensity
                .clone()
                .ok_or_else(|| Error::Scenario("k-mode custom needs an [intensity] table".into())),
            KMode::Griffith => {
                let path = self.crack()?;
                let a: Vec<f64> = self
                    .times()
                    .iter()
                    .map(|&t| energy::anisotropy(self.options.anisotropy, t, &path, &self.law, &self.material))
                    .collect::<Result<_>>()?;
                let (lo, hi) = a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                if hi - lo > 1e-9 * hi {
                    return Err(Error::Parameter(format!(
                        "griffith k-mode needs a time-independent anisotropy factor; a(t) ranges over [{lo}, {hi}]"
                    )));
                }
                Ok(Intensity::constant(2.0 / (std::f64::consts::PI * a[0]).sqrt()))
            }
        }
    }

    pub fn mms(&self, mode: KMode) -> Result<Mms> {
        Ok(Mms::new(self.windows()?, &self.material, self.intensity(mode)?, self.options.xi_eps))
    }

    pub fn mesh_spec(&self, lo: [f64; 2], hi: [f64; 2], slit_tip: Option<f64>, dirichlet: [bool; 4]) -> MeshSpec {
        MeshSpec { lo, hi, slit_tip, h: self.solver.h, h_tip: self.solver.h_tip, dirichlet }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STRAIGHT: &str = r#"
[domain]
vertices = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]

[path]
kind = "segment"
start = [-1.0, 0.0]
heading = 0.0
length = 2.0

[law]
coeffs = [0.8, 0.5]
t_end = 0.8
c0 = 1.0
delta = 0.5
"#;

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_toml(STRAIGHT).unwrap();
        assert_eq!(s.material, TensorField::Identity);
        assert_eq!(s.times().len(), 20);
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_field_reports_location() {
        let bad = STRAIGHT.replace("delta = 0.5", "delta = 0.5\nspeed = 3");
        let e = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("speed"), "{e}");
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn k_modes() {
        let s = Scenario::from_toml(STRAIGHT).unwrap();
        let k = s.intensity(KMode::Griffith).unwrap().at(0.3);
        assert!((k - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert_eq!("constant:1".parse::<KMode>().unwrap(), KMode::Constant(1.0));
        assert!("nope".parse::<KMode>().is_err());
        assert!(s.intensity(KMode::Custom).is_err());
    }
}

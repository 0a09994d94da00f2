//! JSON-facing descriptions of operators, initial data and ε-sweeps.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{GeomError, Result};
use crate::grid::{BoundaryRule, CurvatureScheme, Grid, GridDoc, GridFunction};
use crate::operators::{ForcingField, OperatorSpec, Perturbation};
use crate::oracles::vshape_level_set;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorConfig {
    /// Forced mean curvature flow; `force` is `builtin:const1`, `builtin:sin1`,
    /// `builtin:const:<K>` or a path to a field file.
    Mcf {
        force: String,
        #[serde(default)]
        perturbation: Perturbation,
    },
    /// Curvature G-equation with Markstein number `d` and cellular flow of intensity `amplitude`.
    G {
        d: f64,
        amplitude: f64,
        #[serde(default)]
        perturbation: Perturbation,
    },
}

impl OperatorConfig {
    pub fn build(&self) -> Result<OperatorSpec> {
        match self {
            OperatorConfig::Mcf { force, perturbation } => {
                OperatorSpec::forced_mcf(ForcingField::from_source(force, 2)?)?.with_perturbation(*perturbation)
            }
            OperatorConfig::G { d, amplitude, perturbation } => {
                OperatorSpec::curvature_g(*d, *amplitude)?.with_perturbation(*perturbation)
            }
        }
    }

    /// K when the operator is forced MCF with the constant force K > 0 and no perturbation.
    pub fn constant_force(&self) -> Result<Option<f64>> {
        match self {
            OperatorConfig::Mcf { force, perturbation: Perturbation::None } => {
                let c = ForcingField::from_source(force, 2)?;
                Ok((c.is_constant() && c.min_value() > 0.0).then(|| c.min_value()))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    /// u₀ = −|x|
    Cone,
    /// Level-set data cot α · max_{ν∈A} ν x₁ − x₂ of a V-shaped front.
    VShape { alpha: f64, directions: Vec<f64> },
    /// u₀ = p·x
    Plane { p: [f64; 2] },
    /// A grid function document, sampled bilinearly (clamped outside its box).
    File { path: PathBuf },
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialData::VShape { alpha, directions } => {
                if !(*alpha > 0.0 && *alpha <= std::f64::consts::FRAC_PI_2) {
                    return Err(GeomError::Invalid(format!("alpha must lie in (0, pi/2], got {alpha}")));
                }
                if directions.is_empty() || directions.iter().any(|d| d.abs() != 1.0) {
                    return Err(GeomError::Invalid("v-shape directions must be a nonempty subset of {-1, 1}".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// True for data with u₀(a x) = a u₀(x), a > 0.
    pub fn is_homogeneous(&self) -> bool {
        !matches!(self, InitialData::File { .. })
    }

    /// Samples the data on `grid`.
    pub fn sample(&self, grid: Grid) -> Result<GridFunction> {
        self.validate()?;
        Ok(match self {
            InitialData::Cone => GridFunction::from_fn(grid, |x| -(x[0] * x[0] + x[1] * x[1]).sqrt()),
            InitialData::VShape { alpha, directions } => {
                let a: Vec<Vec<f64>> = directions.iter().map(|d| vec![*d]).collect();
                GridFunction::from_fn(grid, |x| vshape_level_set(&x, 0.0, *alpha, &a).expect("validated"))
            }
            InitialData::Plane { p } => GridFunction::from_fn(grid, |x| p[0] * x[0] + p[1] * x[1]),
            InitialData::File { path } => {
                let doc: GridDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                let src = GridFunction::from_doc(doc)?;
                GridFunction::from_fn(grid, |x| src.interpolate(x))
            }
        })
    }
}

fn default_h_over_eps() -> f64 {
    0.125
}
fn default_refinement() -> Option<f64> {
    Some(0.5)
}
fn default_measure() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    1.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPolicy {
    /// h = h_over_eps · ε.
    #[serde(default = "default_h_over_eps")]
    pub h_over_eps: f64,
    /// Companion run at h · refinement for scheme-error control (none when null).
    #[serde(default = "default_refinement")]
    pub refinement: Option<f64>,
    /// Errors are measured on |x|∞ ≤ measure_half_width.
    #[serde(default = "default_measure")]
    pub measure_half_width: f64,
    /// Buffer = buffer_margin · speed · T outside the measured square.
    #[serde(default = "default_margin")]
    pub buffer_margin: f64,
    #[serde(default)]
    pub boundary: BoundaryRule,
    #[serde(default)]
    pub curvature: CurvatureScheme,
    /// Extra comparison times in (0, T); T itself is always used.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy {
            h_over_eps: default_h_over_eps(),
            refinement: default_refinement(),
            measure_half_width: default_measure(),
            buffer_margin: default_margin(),
            boundary: BoundaryRule::default(),
            curvature: CurvatureScheme::default(),
            snapshots: Vec::new(),
        }
    }
}

fn default_directions() -> usize {
    64
}
fn default_lambda() -> f64 {
    1e-2
}
fn default_nodes() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// Exact effective solution; needs a constant positive force.
    ClosedForm,
    /// Effective Hamiltonian table, loaded from `path` when present, else built (and saved there).
    Table {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_directions")]
        directions: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

fn default_r_max() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolverMode {
    /// Two-dimensional runs on a box.
    #[default]
    Planar2d,
    /// Radial reduction of the cone with c ≡ 1; the error is measured just outside |x| = T.
    Radial {
        #[serde(default = "default_r_max")]
        r_max: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub operator: OperatorConfig,
    pub initial: InitialData,
    /// Strictly decreasing, in (0, 1).
    pub eps: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub grid: GridPolicy,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub solver: SolverMode,
    /// Also compare every ε-run with a single unit-scale run (homogeneous data only).
    #[serde(default)]
    pub scaling_check: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(GeomError::Invalid("empty eps list".into()));
        }
        if self.eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(GeomError::Invalid(format!("eps values must lie in (0, 1): {:?}", self.eps)));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(GeomError::Invalid(format!("eps list must be strictly decreasing: {:?}", self.eps)));
        }
        if !(self.horizon > 0.0) {
            return Err(GeomError::Invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        let g = &self.grid;
        if !(g.h_over_eps > 0.0) || !(g.measure_half_width > 0.0) || !(g.buffer_margin >= 1.0) {
            return Err(GeomError::Invalid(
                "grid policy needs h_over_eps > 0, measure_half_width > 0, buffer_margin >= 1".into(),
            ));
        }
        if let Some(f) = g.refinement {
            if !(f > 0.0) || f == 1.0 {
                return Err(GeomError::Invalid(format!("refinement factor must be positive and != 1, got {f}")));
            }
        }
        if g.snapshots.iter().any(|&t| !(t > 0.0 && t <= self.horizon)) {
            return Err(GeomError::Invalid("snapshot times must lie in (0, T]".into()));
        }
        self.initial.validate()?;
        if matches!(self.reference, ReferenceConfig::ClosedForm) {
            if self.operator.constant_force()?.is_none() {
                return Err(GeomError::Invalid("closed-form reference needs a constant positive force".into()));
            }
            if matches!(self.initial, InitialData::File { .. }) {
                return Err(GeomError::Invalid("closed-form reference needs cone, v-shape or plane data".into()));
            }
        }
        if let SolverMode::Radial { r_max } = self.solver {
            if self.operator.constant_force()? != Some(1.0) || self.initial != InitialData::Cone {
                return Err(GeomError::Invalid("radial mode needs c = 1 and cone data".into()));
            }
            if !(r_max > self.horizon) {
                return Err(GeomError::Invalid(format!("radial r_max {r_max} must exceed T")));
            }
        }
        if self.scaling_check && !self.initial.is_homogeneous() {
            return Err(GeomError::Invalid("scaling check needs positively homogeneous initial data".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SweepConfig {
        serde_json::from_str(
            r#"{"operator": {"kind": "mcf", "force": "builtin:const1"},
                "initial": {"kind": "cone"},
                "eps": [0.1, 0.05, 0.025], "horizon": 0.5,
                "reference": {"kind": "closed-form"}}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base();
        c.validate().unwrap();
        assert_eq!(c.grid, GridPolicy::default());
        assert_eq!(c.solver, SolverMode::Planar2d);
        let back: SweepConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_sweeps() {
        let mut c = base();
        c.eps = vec![0.1, 0.2];
        assert!(c.validate().is_err());
        c.eps = vec![];
        assert!(c.validate().is_err());
        c.eps = vec![1.5];
        assert!(c.validate().is_err());
        let mut c = base();
        c.operator = OperatorConfig::Mcf { force: "builtin:sin1".into(), perturbation: Perturbation::None };
        assert!(c.validate().is_err());
        let mut c = base();
        c.initial = InitialData::VShape { alpha: 2.0, directions: vec![1.0] };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<SweepConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn constant_force_detection() {
        let k = OperatorConfig::Mcf { force: "builtin:const:2.5".into(), perturbation: Perturbation::None };
        assert_eq!(k.constant_force().unwrap(), Some(2.5));
        let g = OperatorConfig::G { d: 0.1, amplitude: 0.0, perturbation: Perturbation::None };
        assert_eq!(g.constant_force().unwrap(), None);
        assert!(g.build().is_ok());
    }

    #[test]
    fn samples_initial_data() {
        let grid = Grid::Box(crate::grid::BoxGrid::centered(1.0, 0.25, BoundaryRule::Clamp, 0.0).unwrap());
        let v = InitialData::VShape { alpha: std::f64::consts::FRAC_PI_4, directions: vec![-1.0, 1.0] };
        let u = v.sample(grid).unwrap();
        let x = grid.coord(1, 6);
        assert!((u.at(1, 6) - (x[0].abs() - x[1])).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u0.json");
        std::fs::write(&path, serde_json::to_string(&u.to_doc()).unwrap()).unwrap();
        let back = InitialData::File { path }.sample(grid).unwrap();
        assert!(back.values().iter().zip(u.values()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

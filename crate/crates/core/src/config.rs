//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::linalg;
use crate::lmi::{self, ConstraintSet};
use crate::sdp::SolverOptions;
use crate::system::LipschitzOptions;
use crate::trajectory::InputSchedule;
use crate::validation::ValidationOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub tf: f64,
    /// Number of intervals.
    pub n: usize,
}

/// Either a CSV file or an initial state plus input schedule to integrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputSchedule>,
    /// Relative defect tolerance of the dynamics check.
    #[serde(default = "default_defect_tol")]
    pub defect_tol: f64,
}

fn default_defect_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelConfig {
    pub alpha: f64,
    pub lambda_w: f64,
    pub w_c: f64,
    pub w_q0: f64,
    pub w_qbar: f64,
    /// Row-major.
    pub q_init: Vec<Vec<f64>>,
    pub q_final: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub trajectory: TrajectoryConfig,
    pub funnel: FunnelConfig,
    #[serde(default)]
    pub constraints: ConstraintSet,
    #[serde(default)]
    pub lipschitz: LipschitzOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub validation: ValidationOptions,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// State and input dimensions of the built-in systems.
pub fn known_system_dims(name: &str) -> Option<(usize, usize)> {
    match name {
        "unicycle" => Some((3, 2)),
        _ => None,
    }
}

fn check_spd(name: &str, rows: &[Vec<f64>], n: usize, errs: &mut Vec<String>) {
    match linalg::from_rows(rows) {
        Some(m) if m.shape() == (n, n) => {
            if m != m.transpose() || linalg::lambda_min(&m) <= 0.0 {
                errs.push(format!("{name}: must be symmetric positive definite"));
            }
        }
        _ => errs.push(format!("{name}: must be a {n}x{n} matrix")),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FunnelError::Config(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FunnelError::Config(vec![e.to_string()]))
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn q_init(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.funnel.q_init).expect("validated")
    }

    pub fn q_final(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.funnel.q_final).expect("validated")
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let Some((n_x, n_u)) = known_system_dims(&self.system) else {
            return Err(FunnelError::Config(vec![format!(
                "system: unknown system {:?} (available: unicycle)",
                self.system
            )]));
        };
        let g = &self.grid;
        if !(g.t0.is_finite() && g.tf.is_finite() && g.tf > g.t0) {
            errs.push(format!("grid: need t0 < tf (got t0 = {}, tf = {})", g.t0, g.tf));
        }
        if g.n < 1 {
            errs.push("grid.n: must be at least 1".into());
        }

        let tr = &self.trajectory;
        match (&tr.file, &tr.x0, &tr.inputs) {
            (Some(_), None, None) => {}
            (None, Some(x0), Some(inputs)) => {
                if x0.len() != n_x {
                    errs.push(format!("trajectory.x0: expected {n_x} entries, got {}", x0.len()));
                }
                if let Err(e) = inputs.validate(n_u) {
                    errs.push(format!("trajectory.inputs: {e}"));
                }
            }
            _ => errs.push("trajectory: give either `file` or both `x0` and `inputs`".into()),
        }
        if !(tr.defect_tol > 0.0) {
            errs.push("trajectory.defect_tol: must be > 0".into());
        }

        let f = &self.funnel;
        for (name, v) in [
            ("alpha", f.alpha),
            ("lambda_w", f.lambda_w),
            ("w_c", f.w_c),
            ("w_q0", f.w_q0),
            ("w_qbar", f.w_qbar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("funnel.{name}: must be > 0 (got {v})"));
            }
        }
        check_spd("funnel.q_init", &f.q_init, n_x, &mut errs);
        check_spd("funnel.q_final", &f.q_final, n_x, &mut errs);

        let c = &self.constraints;
        for (i, o) in c.obstacles.iter().enumerate() {
            let m = o.coords.len();
            let shape_ok = linalg::from_rows(&o.shape).is_some_and(|s| s.shape() == (m, m) && linalg::sym_eigenvalues(&(s.transpose() * &s))[0] > 0.0);
            if m == 0 || o.center.len() != m || o.coords.iter().any(|&j| j >= n_x) || !shape_ok {
                errs.push(format!("constraints.obstacles[{i}]: coords, center and a nonsingular square shape must agree"));
            }
        }
        for (i, h) in c.state_halfspaces.iter().enumerate() {
            if h.a.len() != n_x {
                errs.push(format!("constraints.state_halfspaces[{i}].a: expected {n_x} entries"));
            }
        }
        let mut inputs_ok = true;
        for (i, h) in c.input_halfspaces.iter().enumerate() {
            if h.a.len() != n_u {
                errs.push(format!("constraints.input_halfspaces[{i}].a: expected {n_u} entries"));
                inputs_ok = false;
            }
        }
        if inputs_ok && !c.input_halfspaces.is_empty() {
            match lmi::polytope_is_bounded(&c.input_halfspaces, n_u) {
                Ok(true) => {}
                Ok(false) => errs.push("constraints.input_halfspaces: input polytope must be bounded".into()),
                Err(e) => errs.push(format!("constraints.input_halfspaces: {e}")),
            }
        }

        let l = &self.lipschitz;
        if l.n_samples < 2 {
            errs.push("lipschitz.n_samples: must be at least 2".into());
        }
        if !(l.inflation >= 1.0) {
            errs.push("lipschitz.inflation: must be >= 1".into());
        }
        // TOML integers are signed 64-bit.
        for (name, seed) in [("lipschitz.seed", l.seed), ("validation.seed", self.validation.seed)] {
            if seed > i64::MAX as u64 {
                errs.push(format!("{name}: must be at most {}", i64::MAX));
            }
        }
        if !(self.solver.tol > 0.0) {
            errs.push("solver.tol: must be > 0".into());
        }
        if self.solver.max_iter == 0 {
            errs.push("solver.max_iter: must be > 0".into());
        }
        errs.extend(self.validation.problems().into_iter().map(|p| format!("validation.{p}")));
        if errs.is_empty() {
            Ok(())
        } else {
            Err(FunnelError::Config(errs))
        }
    }
}

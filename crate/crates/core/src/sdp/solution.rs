//! Funnel extracted from a solved program, its continuous-time
//! reconstruction and the `funnel-v1` file format.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::assemble::FunnelProgram;
use super::solver::{ConicResult, SolveStatus};
use crate::discretization::{discretization_ode_options, DiscreteTransition, LinearizationPath, VectorizedOde};
use crate::error::{FunnelError, Result};
use crate::linalg;
use crate::ode;
use crate::trajectory::{NominalTrajectory, TimeGrid};

pub const FUNNEL_VERSION: &str = "funnel-v1";

/// Condition number above which a gain extraction is flagged.
pub const CONDITION_WARN: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelSolution {
    pub grid: TimeGrid,
    pub alpha: f64,
    pub lambda_w: f64,
    pub q: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub c: Vec<f64>,
    pub nu: Vec<f64>,
    pub v_q: Vec<f64>,
    pub z: Vec<DMatrix<f64>>,
    pub gamma: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
    pub nominal: NominalTrajectory,
}

/// `K_k = Y_k Q_k⁻¹` by a Cholesky solve, with a warning for every node whose
/// `Q_k` is badly conditioned.
pub fn extract_gains(q: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, Vec<String>)> {
    let mut warnings = Vec::new();
    let gains = q
        .iter()
        .zip(y)
        .enumerate()
        .map(|(k, (q, y))| {
            let cond = linalg::spd_condition(q);
            if !(cond <= CONDITION_WARN) {
                warnings.push(format!("Q_{k} is ill-conditioned (condition number {cond:.3e})"));
            }
            linalg::solve_right_spd(y, q).ok_or_else(|| FunnelError::Solver(format!("Q_{k} is singular")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gains, warnings))
}

/// `c(t) = c_k c_{k+1} / (λ^m c_{k+1} + λ^p c_k)`: linear interpolation of
/// `1/c` between nodes.
pub fn harmonic_c(grid: &TimeGrid, c: &[f64], t: f64) -> f64 {
    let k = grid.interval_of(t);
    let (lm, lp) = grid.foh_weights(k, t);
    let (a, b) = (c[k], c[k + 1]);
    a * b / (lm * b + lp * a)
}

impl FunnelSolution {
    /// Reads the node values out of an optimal solver result.
    pub fn from_result(fp: &FunnelProgram, res: &ConicResult, alpha: f64, lambda_w: f64, gamma: &[f64], nominal: &NominalTrajectory) -> Result<Self> {
        let x = &res.x;
        let q: Vec<_> = fp.nodes.iter().map(|v| linalg::symmetrize(&v.q.eval(x))).collect();
        let y: Vec<_> = fp.nodes.iter().map(|v| v.y.eval(x)).collect();
        let (k, mut warnings) = extract_gains(&q, &y)?;
        if res.status == SolveStatus::OptimalInaccurate {
            warnings.push("solver reached only reduced accuracy".into());
        }
        for w in &warnings {
            warn!("{w}");
        }
        Ok(Self {
            grid: nominal.grid,
            alpha,
            lambda_w,
            k,
            c: fp.nodes.iter().map(|v| v.c.eval(x)).collect(),
            nu: fp.nodes.iter().map(|v| v.nu.eval(x)).collect(),
            v_q: fp.nodes.iter().map(|v| v.v_q.eval(x)).collect(),
            z: fp.nodes.iter().map(|v| linalg::symmetrize(&v.z.eval(x))).collect(),
            q,
            y,
            gamma: gamma.to_vec(),
            objective: res.objective,
            status: res.status,
            warnings,
            nominal: nominal.clone(),
        })
    }

    pub fn n_x(&self) -> usize {
        self.q[0].nrows()
    }

    pub fn n_u(&self) -> usize {
        self.y[0].nrows()
    }

    pub fn c_at(&self, t: f64) -> f64 {
        harmonic_c(&self.grid, &self.c, t)
    }

    /// First-order-hold interpolation of `Y`, `ν` and `Z` at `t`.
    pub fn foh_at(&self, t: f64) -> (DMatrix<f64>, f64, DMatrix<f64>) {
        let k = self.grid.interval_of(t);
        let (lm, lp) = self.grid.foh_weights(k, t);
        (
            &self.y[k] * lm + &self.y[k + 1] * lp,
            self.nu[k] * lm + self.nu[k + 1] * lp,
            &self.z[k] * lm + &self.z[k + 1] * lp,
        )
    }

    /// Largest entrywise multiple-shooting defect on each interval.
    pub fn shooting_residuals(&self, transitions: &[DiscreteTransition]) -> Vec<f64> {
        let n = self.n_x();
        transitions
            .iter()
            .enumerate()
            .map(|(k, tr)| {
                let z0 = linalg::vec(&self.z[k].view((0, 0), (n, n)).into_owned());
                let z1 = linalg::vec(&self.z[k + 1].view((0, 0), (n, n)).into_owned());
                let pred = tr.propagate(&linalg::vec(&self.q[k]), &linalg::vec(&self.y[k]), &linalg::vec(&self.y[k + 1]), &z0, &z1);
                (pred - linalg::vec(&self.q[k + 1])).amax()
            })
            .collect()
    }
}

/// Funnel quantities at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelPoint {
    pub t: f64,
    pub q: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub k: Option<DMatrix<f64>>,
    pub c: f64,
    pub nu: f64,
    pub z: DMatrix<f64>,
    /// Nominal state (auxiliary path state, when present).
    pub aux: DVector<f64>,
}

/// Evaluates the continuous funnel at increasing `times` inside interval `k`
/// by integrating the Lyapunov matrix ODE from `Q_k` with first-order-hold
/// `Y` and `Z¹¹`. `K(t)` is `None` where `Q(t)` is not positive definite.
pub fn reconstruct_interval(sol: &FunnelSolution, path: &dyn LinearizationPath, k: usize, times: &[f64]) -> Result<Vec<FunnelPoint>> {
    let n = sol.n_x();
    let ode_q = VectorizedOde::new(n, sol.n_u(), sol.alpha, sol.lambda_w);
    let n_aux = path.aux_dim();
    let tk = sol.grid.t(k);
    let mut y0 = DVector::zeros(n_aux + n * n);
    y0.rows_mut(0, n_aux).copy_from(&path.aux_init(k));
    y0.rows_mut(n_aux, n * n).copy_from(&linalg::vec(&sol.q[k]));
    let interp = |t: f64| {
        let (lm, lp) = sol.grid.foh_weights(k, t);
        let y = &sol.y[k] * lm + &sol.y[k + 1] * lp;
        let z = &sol.z[k] * lm + &sol.z[k + 1] * lp;
        (y, z)
    };
    let rhs = |t: f64, s: &DVector<f64>, ds: &mut DVector<f64>| {
        let aux = s.rows(0, n_aux).into_owned();
        ds.rows_mut(0, n_aux).copy_from(&path.aux_rhs(k, t, &aux));
        let (a, b) = path.jacobians(k, t, &aux);
        let (y, z) = interp(t);
        let z11 = z.view((0, 0), (n, n)).into_owned();
        let dq = ode_q.rhs(&a, &b, &s.rows(n_aux, n * n).into_owned(), &linalg::vec(&y), &linalg::vec(&z11));
        ds.rows_mut(n_aux, n * n).copy_from(&dq);
    };
    let mut ts = Vec::with_capacity(times.len() + 1);
    ts.push(tk);
    ts.extend_from_slice(times);
    let states = ode::integrate_through(rhs, &ts, y0, &discretization_ode_options())?;
    Ok(states
        .into_iter()
        .zip(ts)
        .skip(1)
        .map(|(s, t)| {
            let q = linalg::symmetrize(&linalg::unvec(&s.rows(n_aux, n * n).into_owned(), n, n));
            let (y, z) = interp(t);
            let (lm, lp) = sol.grid.foh_weights(k, t);
            let k_gain = if linalg::lambda_min(&q) > 0.0 {
                linalg::solve_right_spd(&y, &q)
            } else {
                None
            };
            FunnelPoint {
                t,
                k: k_gain,
                c: sol.c_at(t),
                nu: sol.nu[k] * lm + sol.nu[k + 1] * lp,
                y,
                z,
                q,
                aux: s.rows(0, n_aux).into_owned(),
            }
        })
        .collect())
}

/// Continuous-time funnel at a single instant.
pub fn reconstruct_continuous(sol: &FunnelSolution, path: &dyn LinearizationPath, t: f64) -> Result<FunnelPoint> {
    if t < sol.grid.t0 || t > sol.grid.tf {
        return Err(FunnelError::InvalidArgument(format!("t = {t} outside the funnel horizon")));
    }
    let k = sol.grid.interval_of(t);
    Ok(reconstruct_interval(sol, path, k, &[t])?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl MatrixJson {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(FunnelError::InvalidArgument(format!(
                "matrix data has {} entries, expected {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FunnelFile {
    version: String,
    grid: TimeGrid,
    alpha: f64,
    lambda_w: f64,
    #[serde(rename = "Q")]
    q: Vec<MatrixJson>,
    #[serde(rename = "Y")]
    y: Vec<MatrixJson>,
    #[serde(rename = "K")]
    k: Vec<MatrixJson>,
    c: Vec<f64>,
    nu: Vec<f64>,
    #[serde(rename = "vQ")]
    v_q: Vec<f64>,
    #[serde(rename = "Z")]
    z: Vec<MatrixJson>,
    gamma: Vec<f64>,
    x_nominal: Vec<Vec<f64>>,
    u_nominal: Vec<Vec<f64>>,
    objective: f64,
    solver_status: SolveStatus,
    warnings: Vec<String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<String>,
}

fn mats(v: &[DMatrix<f64>]) -> Vec<MatrixJson> {
    v.iter().map(MatrixJson::from).collect()
}

fn unmats(v: &[MatrixJson]) -> Result<Vec<DMatrix<f64>>> {
    v.iter().map(MatrixJson::to_matrix).collect()
}

impl FunnelSolution {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = FunnelFile {
            version: FUNNEL_VERSION.into(),
            grid: self.grid,
            alpha: self.alpha,
            lambda_w: self.lambda_w,
            q: mats(&self.q),
            y: mats(&self.y),
            k: mats(&self.k),
            c: self.c.clone(),
            nu: self.nu.clone(),
            v_q: self.v_q.clone(),
            z: mats(&self.z),
            gamma: self.gamma.clone(),
            x_nominal: self.nominal.states.iter().map(|v| v.as_slice().to_vec()).collect(),
            u_nominal: self.nominal.inputs.iter().map(|v| v.as_slice().to_vec()).collect(),
            objective: self.objective,
            solver_status: self.status,
            warnings: self.warnings.clone(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let probe: VersionProbe = serde_json::from_str(&text)?;
        match probe.version.as_deref() {
            Some(FUNNEL_VERSION) => {}
            other => return Err(FunnelError::UnsupportedVersion(other.unwrap_or("<missing>").to_string())),
        }
        let f: FunnelFile = serde_json::from_str(&text)?;
        let nodes = f.grid.nodes();
        let lens = [
            f.q.len(),
            f.y.len(),
            f.k.len(),
            f.c.len(),
            f.nu.len(),
            f.v_q.len(),
            f.z.len(),
            f.gamma.len(),
            f.x_nominal.len(),
            f.u_nominal.len(),
        ];
        if lens.iter().any(|&l| l != nodes) {
            return Err(FunnelError::InvalidArgument(format!("funnel file arrays must all have {nodes} entries")));
        }
        let grid = TimeGrid::new(f.grid.t0, f.grid.tf, f.grid.n)?;
        let q = unmats(&f.q)?;
        let n_x = q[0].nrows();
        if q.iter().any(|m| m.shape() != (n_x, n_x)) {
            return Err(FunnelError::InvalidArgument("Q matrices must be square and of equal size".into()));
        }
        Ok(Self {
            grid,
            alpha: f.alpha,
            lambda_w: f.lambda_w,
            q,
            y: unmats(&f.y)?,
            k: unmats(&f.k)?,
            c: f.c,
            nu: f.nu,
            v_q: f.v_q,
            z: unmats(&f.z)?,
            gamma: f.gamma,
            objective: f.objective,
            status: f.solver_status,
            warnings: f.warnings,
            nominal: NominalTrajectory {
                grid,
                states: f.x_nominal.iter().map(|v| DVector::from_column_slice(v)).collect(),
                inputs: f.u_nominal.iter().map(|v| DVector::from_column_slice(v)).collect(),
            },
        })
    }
}

//! Nominal trajectories on a uniform time grid.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::ode::{self, OdeOptions};
use crate::system::NonlinearSystem;

/// Uniform grid `t_k = t_0 + (k/N)(t_f − t_0)`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    /// Number of intervals; there are `n + 1` nodes.
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, n: usize) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite()) || tf <= t0 {
            return Err(FunnelError::InvalidArgument(format!("time grid needs t0 < tf, got [{t0}, {tf}]")));
        }
        if n == 0 {
            return Err(FunnelError::InvalidArgument("time grid needs at least one interval".into()));
        }
        Ok(Self { t0, tf, n })
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.n {
            self.tf
        } else {
            self.t0 + (k as f64 / self.n as f64) * (self.tf - self.t0)
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.t(k)).collect()
    }

    pub fn step(&self) -> f64 {
        (self.tf - self.t0) / self.n as f64
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    /// Interval index `k` with `t ∈ [t_k, t_{k+1}]`, clamped to the grid.
    pub fn interval_of(&self, t: f64) -> usize {
        let s = ((t - self.t0) / self.step()).floor();
        (s.max(0.0) as usize).min(self.n - 1)
    }

    /// `(λ^m, λ^p)` weights of the first-order hold on interval `k`.
    pub fn foh_weights(&self, k: usize, t: f64) -> (f64, f64) {
        let (a, b) = (self.t(k), self.t(k + 1));
        let lp = ((t - a) / (b - a)).clamp(0.0, 1.0);
        (1.0 - lp, lp)
    }

    /// `m` evenly spaced points per interval (both nodes included), in order.
    pub fn dense(&self, m: usize) -> Vec<(usize, f64)> {
        let m = m.max(1);
        let mut out = Vec::with_capacity(self.n * m + 1);
        for k in 0..self.n {
            let (a, b) = (self.t(k), self.t(k + 1));
            for j in 0..m {
                out.push((k, a + (b - a) * j as f64 / m as f64));
            }
        }
        out.push((self.n - 1, self.tf));
        out
    }
}

/// Piecewise-linear input schedule through `(time, value)` knots, held
/// constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSchedule {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl InputSchedule {
    pub fn constant(u: &[f64]) -> Self {
        Self {
            times: vec![0.0],
            values: vec![u.to_vec()],
        }
    }

    pub fn validate(&self, n_u: usize) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.values.len() {
            return Err(FunnelError::InvalidArgument("input schedule needs matching, non-empty times and values".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FunnelError::InvalidArgument("input schedule times must be strictly increasing".into()));
        }
        if let Some(v) = self.values.iter().find(|v| v.len() != n_u) {
            return Err(FunnelError::DimensionMismatch {
                context: "input schedule",
                expected: n_u,
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return DVector::from_column_slice(&self.values[0]);
        }
        if t >= self.times[n - 1] {
            return DVector::from_column_slice(&self.values[n - 1]);
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (a, b) = (self.times[i], self.times[i + 1]);
        let l = (t - a) / (b - a);
        let va = DVector::from_column_slice(&self.values[i]);
        let vb = DVector::from_column_slice(&self.values[i + 1]);
        va * (1.0 - l) + vb * l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

/// Tolerances of the nominal-trajectory integrator.
pub fn nominal_ode_options() -> OdeOptions {
    OdeOptions {
        rtol: 1e-12,
        atol: 1e-13,
        min_steps: 10,
        ..OdeOptions::default()
    }
}

impl NominalTrajectory {
    pub fn n_x(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }

    /// First-order-hold input at `t`.
    pub fn input_at(&self, t: f64) -> DVector<f64> {
        let k = self.grid.interval_of(t);
        let (lm, lp) = self.grid.foh_weights(k, t);
        &self.inputs[k] * lm + &self.inputs[k + 1] * lp
    }

    /// Nominal state at `t`, integrated from the preceding node under the
    /// first-order-hold input with zero disturbance.
    pub fn state_at(&self, sys: &dyn NonlinearSystem, t: f64) -> Result<DVector<f64>> {
        let k = self.grid.interval_of(t);
        let t_k = self.grid.t(k);
        if t == t_k {
            return Ok(self.states[k].clone());
        }
        if t == self.grid.t(k + 1) {
            return Ok(self.states[k + 1].clone());
        }
        let w0 = DVector::zeros(sys.dims().n_w);
        ode::integrate(
            |s, x, dx| dx.copy_from(&sys.dynamics(s, x, &self.input_at(s), &w0)),
            t_k,
            t,
            self.states[k].clone(),
            &nominal_ode_options(),
        )
    }

    /// `‖x̄_{k+1} − Φ(x̄_k)‖ / max(1, ‖x̄_{k+1}‖)` per interval.
    pub fn defects(&self, sys: &dyn NonlinearSystem) -> Result<Vec<f64>> {
        let w0 = DVector::zeros(sys.dims().n_w);
        (0..self.grid.n)
            .map(|k| {
                let end = ode::integrate(
                    |s, x, dx| dx.copy_from(&sys.dynamics(s, x, &self.input_at(s), &w0)),
                    self.grid.t(k),
                    self.grid.t(k + 1),
                    self.states[k].clone(),
                    &nominal_ode_options(),
                )?;
                Ok((&end - &self.states[k + 1]).norm() / self.states[k + 1].norm().max(1.0))
            })
            .collect()
    }

    pub fn check_dynamics(&self, sys: &dyn NonlinearSystem, tol: f64) -> Result<()> {
        for (k, d) in self.defects(sys)?.into_iter().enumerate() {
            if d > tol {
                return Err(FunnelError::InvalidArgument(format!(
                    "nominal trajectory is not dynamically consistent on interval {k} (defect {d:.3e} > {tol:.1e})"
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_x()).map(|i| format!("x{i}")));
        header.extend((1..=self.n_u()).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for (k, (x, u)) in self.states.iter().zip(&self.inputs).enumerate() {
            let row: Vec<String> = std::iter::once(self.grid.t(k))
                .chain(x.iter().copied())
                .chain(u.iter().copied())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(FunnelError::InvalidArgument("trajectory CSV must start with a `t` column".into()));
        }
        let n_x = header.iter().filter(|h| h.starts_with('x')).count();
        let n_u = header.iter().filter(|h| h.starts_with('u')).count();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n_x).map(|i| format!("x{i}")))
            .chain((1..=n_u).map(|i| format!("u{i}")))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() || n_x == 0 || n_u == 0 {
            return Err(FunnelError::InvalidArgument(format!(
                "trajectory CSV header must be t,x1..xn,u1..um; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| FunnelError::InvalidArgument(format!("bad number in trajectory CSV: {e}")))?;
            times.push(vals[0]);
            states.push(DVector::from_column_slice(&vals[1..=n_x]));
            inputs.push(DVector::from_column_slice(&vals[1 + n_x..]));
        }
        if times.len() < 2 {
            return Err(FunnelError::InvalidArgument("trajectory CSV needs at least two rows".into()));
        }
        let grid = TimeGrid::new(times[0], *times.last().unwrap(), times.len() - 1)?;
        let span = grid.tf - grid.t0;
        for (k, &t) in times.iter().enumerate() {
            if (t - grid.t(k)).abs() > 1e-9 * span {
                return Err(FunnelError::InvalidArgument(format!("trajectory CSV time grid is not uniform at row {k}")));
            }
        }
        Ok(Self { grid, states, inputs })
    }
}

/// Integrates the dynamics with zero disturbance from `x0`, sampling the
/// schedule at the nodes and holding it piecewise-linear in between.
pub fn integrate_nominal(sys: &dyn NonlinearSystem, x0: &DVector<f64>, schedule: &InputSchedule, grid: TimeGrid) -> Result<NominalTrajectory> {
    let dims = sys.dims();
    if x0.len() != dims.n_x {
        return Err(FunnelError::DimensionMismatch {
            context: "initial state",
            expected: dims.n_x,
            got: x0.len(),
        });
    }
    schedule.validate(dims.n_u)?;
    let inputs: Vec<DVector<f64>> = grid.times().iter().map(|&t| schedule.at(t)).collect();
    let mut traj = NominalTrajectory {
        grid,
        states: vec![x0.clone()],
        inputs,
    };
    let w0 = DVector::zeros(dims.n_w);
    for k in 0..grid.n {
        let next = ode::integrate(
            |s, x, dx| dx.copy_from(&sys.dynamics(s, x, &traj.input_at(s), &w0)),
            grid.t(k),
            grid.t(k + 1),
            traj.states[k].clone(),
            &nominal_ode_options(),
        )?;
        traj.states.push(next);
    }
    Ok(traj)
}

/// Re-integrates `traj` onto a grid with `n_new` intervals, using its own
/// first-order-hold input as the schedule.
pub fn resample(sys: &dyn NonlinearSystem, traj: &NominalTrajectory, n_new: usize) -> Result<NominalTrajectory> {
    if n_new < 2 {
        return Err(FunnelError::InvalidArgument("resample needs at least 2 intervals".into()));
    }
    let schedule = InputSchedule {
        times: traj.grid.times(),
        values: traj.inputs.iter().map(|u| u.iter().copied().collect()).collect(),
    };
    let grid = TimeGrid::new(traj.grid.t0, traj.grid.tf, n_new)?;
    integrate_nominal(sys, &traj.states[0], &schedule, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unicycle::Unicycle;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn grid_is_uniform() {
        let g = TimeGrid::new(0.0, 5.0, 30).unwrap();
        let ts = g.times();
        assert_eq!(ts.len(), 31);
        assert_eq!(ts[30], 5.0);
        for w in ts.windows(2) {
            assert!(((w[1] - w[0]) - 5.0 / 30.0).abs() <= 1e-12 * 5.0);
        }
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn straight_line_and_rotation() {
        let sys = Unicycle::new();
        let g = TimeGrid::new(0.0, 5.0, 30).unwrap();
        let tr = integrate_nominal(&sys, &v(&[0.0, 0.0, 0.0]), &InputSchedule::constant(&[1.0, 0.0]), g).unwrap();
        assert!((tr.states[30].clone() - v(&[5.0, 0.0, 0.0])).norm() < 1e-10);
        let tr = integrate_nominal(&sys, &v(&[0.0, 0.0, 0.0]), &InputSchedule::constant(&[0.0, 1.0]), g).unwrap();
        assert!((tr.states[30].clone() - v(&[0.0, 0.0, 5.0])).norm() < 1e-10);
    }

    #[test]
    fn resample_same_n_is_identity() {
        let sys = Unicycle::new();
        let g = TimeGrid::new(0.0, 5.0, 30).unwrap();
        let sched = InputSchedule {
            times: vec![0.0, 2.5, 5.0],
            values: vec![vec![1.0, 0.5], vec![1.2, -0.5], vec![1.0, 0.5]],
        };
        let tr = integrate_nominal(&sys, &v(&[0.0, 0.0, 0.0]), &sched, g).unwrap();
        let same = resample(&sys, &tr, 30).unwrap();
        for (a, b) in tr.states.iter().zip(&same.states) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(tr.defects(&sys).unwrap().iter().all(|&d| d < 1e-6));
    }

    #[test]
    fn straight_line_resample_is_collinear() {
        let sys = Unicycle::new();
        let g = TimeGrid::new(0.0, 5.0, 30).unwrap();
        let tr = integrate_nominal(&sys, &v(&[0.0, 1.0, 0.0]), &InputSchedule::constant(&[1.0, 0.0]), g).unwrap();
        let fine = resample(&sys, &tr, 60).unwrap();
        assert_eq!(fine.states.len(), 61);
        assert!(fine.states.iter().all(|x| (x[1] - 1.0).abs() < 1e-12 && x[2].abs() < 1e-12));
    }

    #[test]
    fn csv_round_trip() {
        let sys = Unicycle::new();
        let g = TimeGrid::new(0.0, 2.0, 4).unwrap();
        let tr = integrate_nominal(&sys, &v(&[0.0, 0.0, 0.1]), &InputSchedule::constant(&[1.0, 0.2]), g).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,u1,u2\n"));
        let back = NominalTrajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let data = "time,x1,u1\n0,0,0\n1,1,1\n";
        assert!(NominalTrajectory::read_csv(data.as_bytes()).is_err());
    }

    #[test]
    fn schedule_interpolates() {
        let s = InputSchedule {
            times: vec![0.0, 2.0],
            values: vec![vec![0.0], vec![2.0]],
        };
        assert_eq!(s.at(0.5)[0], 0.5);
        assert_eq!(s.at(-1.0)[0], 0.0);
        assert_eq!(s.at(3.0)[0], 2.0);
    }
}

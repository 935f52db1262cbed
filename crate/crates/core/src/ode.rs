//! Thin adapter over the Dormand-Prince 5(4) integrator from `ode_solvers`.

use nalgebra::DVector;
use ode_solvers::dopri5::Dopri5;
use ode_solvers::{OutputType, System};

use crate::error::{FunnelError, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Lower bound on the number of steps taken across one call.
    pub min_steps: u32,
    pub max_steps: u32,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            min_steps: 10,
            max_steps: 200_000,
        }
    }
}

struct Rhs<F>(F);

impl<F> System<f64, DVector<f64>> for Rhs<F>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    fn system(&self, t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        (self.0)(t, y, dy)
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` and returns `y(t1)`.
pub fn integrate<F>(rhs: F, t0: f64, t1: f64, y0: DVector<f64>, opts: &OdeOptions) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    if t1 == t0 {
        return Ok(y0);
    }
    let span = t1 - t0;
    let h_max = span.abs() / f64::from(opts.min_steps.max(1));
    let mut stepper = Dopri5::from_param(
        Rhs(rhs),
        t0,
        t1,
        span,
        y0,
        opts.rtol,
        opts.atol,
        0.9,
        0.04,
        0.2,
        10.0,
        h_max,
        0.0,
        opts.max_steps,
        // Stiffness detection off: failures surface as step-size underflow.
        u32::MAX,
        OutputType::Sparse,
    );
    stepper.integrate().map_err(|e| FunnelError::Integration { t0, t1, reason: e.to_string() })?;
    let y = stepper.y_out().last().cloned().ok_or_else(|| FunnelError::Integration {
        t0,
        t1,
        reason: "integrator produced no output".into(),
    })?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FunnelError::Integration {
            t0,
            t1,
            reason: "non-finite state".into(),
        });
    }
    Ok(y)
}

/// Integrates through consecutive `times`, returning the state at each of them
/// (the first entry is `y0`). The right-hand side is re-entered at every point,
/// so piecewise-defined inputs may switch exactly at the given times.
pub fn integrate_through<F>(rhs: F, times: &[f64], y0: DVector<f64>, opts: &OdeOptions) -> Result<Vec<DVector<f64>>>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0;
    out.push(y.clone());
    for w in times.windows(2) {
        y = integrate(&rhs, w[0], w[1], y, opts)?;
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y = integrate(|_t, y, dy| dy[0] = -2.0 * y[0], 0.0, 1.5, DVector::from_element(1, 1.0), &OdeOptions::default()).unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_through_grid() {
        let times: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        let ys = integrate_through(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &times,
            DVector::from_vec(vec![1.0, 0.0]),
            &OdeOptions::default(),
        )
        .unwrap();
        for (t, y) in times.iter().zip(&ys) {
            assert!((y[0] - t.cos()).abs() < 1e-10);
        }
    }
}

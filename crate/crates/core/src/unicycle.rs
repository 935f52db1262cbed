//! Unicycle with additive position disturbances, the built-in benchmark.
//!
//! State `(r_x, r_y, θ)`, input `(u_v, u_θ)`, disturbance `(w_1, w_2)`:
//!
//! ```text
//! ṙ_x = u_v cos θ + 0.1 w_1
//! ṙ_y = u_v sin θ + 0.1 w_2
//! θ̇   = u_θ
//! ```
//!
//! The nonlinearity enters the two position rates (`E = [I₂; 0]`) and takes
//! `q = (θ, u_v)` as its argument.

use nalgebra::{DMatrix, DVector};

use crate::system::{Dims, Jacobians, LureSelectors, NonlinearSystem, OperatingPoint};

pub const DISTURBANCE_GAIN: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Unicycle {
    selectors: LureSelectors,
}

impl Default for Unicycle {
    fn default() -> Self {
        Self::new()
    }
}

impl Unicycle {
    pub fn new() -> Self {
        Self {
            selectors: LureSelectors {
                e: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
                c: DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
                d: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
                g: DMatrix::zeros(2, 2),
            },
        }
    }
}

impl NonlinearSystem for Unicycle {
    fn name(&self) -> &str {
        "unicycle"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: 3,
            n_u: 2,
            n_w: 2,
            n_p: 2,
            n_q: 2,
        }
    }

    fn dynamics(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        DVector::from_vec(vec![u[0] * c + DISTURBANCE_GAIN * w[0], u[0] * s + DISTURBANCE_GAIN * w[1], u[1]])
    }

    fn jacobians(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Option<Jacobians> {
        let (s, c) = x[2].sin_cos();
        Some(Jacobians {
            a: DMatrix::from_row_slice(3, 3, &[0.0, 0.0, -u[0] * s, 0.0, 0.0, u[0] * c, 0.0, 0.0, 0.0]),
            b: DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0]),
            f: DMatrix::from_row_slice(3, 2, &[DISTURBANCE_GAIN, 0.0, 0.0, DISTURBANCE_GAIN, 0.0, 0.0]),
        })
    }

    fn selectors(&self) -> &LureSelectors {
        &self.selectors
    }

    fn nonlinearity(&self, q: &DVector<f64>, at: &OperatingPoint) -> DVector<f64> {
        let (theta, speed) = (q[0], q[1]);
        let (s, c) = theta.sin_cos();
        let a = &at.jac.a;
        let b = &at.jac.b;
        DVector::from_vec(vec![
            speed * c - a[(0, 2)] * theta - b[(0, 0)] * speed,
            speed * s - a[(1, 2)] * theta - b[(1, 0)] * speed,
        ])
    }
}

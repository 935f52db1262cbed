//! Plot-ready series derived from a funnel.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::lmi::Halfspace;
use crate::sdp::FunnelSolution;
use crate::validation::project_funnel_2d;

/// Projected state funnel at one node: `{ξ : (ξ − center)ᵀ S⁻¹ (ξ − center) ≤ 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipseRow {
    pub node: usize,
    pub t: f64,
    pub cx: f64,
    pub cy: f64,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
    /// Semi-axis lengths, major first.
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis from the first coordinate, radians.
    pub angle: f64,
}

pub fn ellipse_series(sol: &FunnelSolution, i: usize, j: usize) -> Result<Vec<EllipseRow>> {
    (0..sol.grid.nodes())
        .map(|k| {
            let s = project_funnel_2d(&sol.q[k], sol.c[k], i, j)?;
            let eig = s.symmetric_eigen();
            let (big, small) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
            let v = eig.eigenvectors.column(big);
            let x = &sol.nominal.states[k];
            Ok(EllipseRow {
                node: k,
                t: sol.grid.t(k),
                cx: x[i],
                cy: x[j],
                s11: s[(0, 0)],
                s12: s[(0, 1)],
                s22: s[(1, 1)],
                semi_major: eig.eigenvalues[big].max(0.0).sqrt(),
                semi_minor: eig.eigenvalues[small].max(0.0).sqrt(),
                angle: v[1].atan2(v[0]),
            })
        })
        .collect()
}

/// Input funnel along one bound direction `a`: `aᵀū ± √(aᵀKQKᵀa/c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InputFunnelRow {
    pub bound: usize,
    pub node: usize,
    pub t: f64,
    pub nominal: f64,
    pub lower: f64,
    pub upper: f64,
    pub limit: f64,
}

pub fn input_funnel_series(sol: &FunnelSolution, bounds: &[Halfspace]) -> Vec<InputFunnelRow> {
    let mut out = Vec::new();
    for (b, hs) in bounds.iter().enumerate() {
        let a = hs.normal();
        for k in 0..sol.grid.nodes() {
            let kta = sol.k[k].transpose() * &a;
            let half = (kta.dot(&(&sol.q[k] * &kta)) / sol.c[k]).max(0.0).sqrt();
            let nominal = a.dot(&sol.nominal.inputs[k]);
            out.push(InputFunnelRow {
                bound: b,
                node: k,
                t: sol.grid.t(k),
                nominal,
                lower: nominal - half,
                upper: nominal + half,
                limit: hs.b,
            });
        }
    }
    out
}

/// Support value `1/c(t)` and its lower envelope `max(1, e^{−α(t−t_0)}/c_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportRow {
    pub t: f64,
    pub inv_c: f64,
    pub envelope: f64,
}

pub fn support_series(sol: &FunnelSolution, m: usize) -> Vec<SupportRow> {
    let t0 = sol.grid.t0;
    sol.grid
        .dense(m)
        .into_iter()
        .map(|(_, t)| SupportRow {
            t,
            inv_c: 1.0 / sol.c_at(t),
            envelope: f64::max(1.0, (-sol.alpha * (t - t0)).exp() / sol.c[0]),
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

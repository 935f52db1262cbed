//! Nonlinear system interface, Jacobian linearization, Lur'e decomposition
//! and local Lipschitz estimation.
//!
//! A system is written as
//!
//! ```text
//! ẋ = f(t, x, u, w)
//!   = A(t) x + B(t) u + F(t) w + E p,    p = φ(t, q),   q = C x + D u + G w
//! ```
//!
//! where `A, B, F` are the Jacobians of `f` along the nominal trajectory and
//! `E, C, D, G` are constant selector matrices. The nonlinearity `φ` is
//! evaluated relative to an [`OperatingPoint`], since it is whatever is left of
//! `f` after the linear part at that point has been removed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::linalg;
use crate::trajectory::NominalTrajectory;

/// Dimensions of state, input, disturbance, nonlinearity output and argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub n_p: usize,
    pub n_q: usize,
}

impl Dims {
    /// Side length of the differential-LMI block matrix.
    pub fn n_z(&self) -> usize {
        self.n_x + self.n_p + self.n_w + self.n_q
    }

    /// `n_p = n_q = 0`: no nonlinearity channel at all.
    pub fn is_linear(&self) -> bool {
        self.n_p == 0 && self.n_q == 0
    }
}

/// Constant matrices `E` (n_x×n_p), `C` (n_q×n_x), `D` (n_q×n_u), `G` (n_q×n_w).
#[derive(Debug, Clone, PartialEq)]
pub struct LureSelectors {
    pub e: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl LureSelectors {
    pub fn empty(dims: Dims) -> Self {
        Self {
            e: DMatrix::zeros(dims.n_x, dims.n_p),
            c: DMatrix::zeros(dims.n_q, dims.n_x),
            d: DMatrix::zeros(dims.n_q, dims.n_u),
            g: DMatrix::zeros(dims.n_q, dims.n_w),
        }
    }

    fn check(&self, dims: Dims) -> Result<()> {
        let shape_ok = self.e.shape() == (dims.n_x, dims.n_p)
            && self.c.shape() == (dims.n_q, dims.n_x)
            && self.d.shape() == (dims.n_q, dims.n_u)
            && self.g.shape() == (dims.n_q, dims.n_w);
        if shape_ok {
            Ok(())
        } else {
            Err(FunnelError::InvalidArgument("Lur'e selector shapes do not match system dimensions".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

/// Nominal point `(t, x̄, ū, w̄ = 0)` together with the Jacobians there.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub jac: Jacobians,
}

pub trait NonlinearSystem: Send + Sync {
    fn name(&self) -> &str;

    fn dims(&self) -> Dims;

    /// `f(t, x, u, w)`. Callers go through [`evaluate_dynamics`] for
    /// dimension checking.
    fn dynamics(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobians at `(t, x, u, 0)` if available. The default falls
    /// back to central finite differences.
    fn jacobians(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<Jacobians> {
        None
    }

    fn selectors(&self) -> &LureSelectors;

    /// `φ(t, q)` for the Lur'e split taken about `at`.
    fn nonlinearity(&self, q: &DVector<f64>, at: &OperatingPoint) -> DVector<f64>;
}

fn check_len(context: &'static str, expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(FunnelError::DimensionMismatch {
            context,
            expected,
            got: v.len(),
        })
    }
}

pub fn evaluate_dynamics(sys: &dyn NonlinearSystem, t: f64, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let dims = sys.dims();
    check_len("state", dims.n_x, x)?;
    check_len("input", dims.n_u, u)?;
    check_len("disturbance", dims.n_w, w)?;
    Ok(sys.dynamics(t, x, u, w))
}

fn fd_step(v: &DVector<f64>) -> f64 {
    1e-6f64.max(1e-6 * v.amax())
}

/// Central-difference Jacobians of `f` at `(t, x, u, 0)`.
pub fn finite_difference_jacobians(sys: &dyn NonlinearSystem, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Jacobians {
    let dims = sys.dims();
    let w0 = DVector::zeros(dims.n_w);
    let column = |n: usize, h: f64, eval: &dyn Fn(usize, f64) -> DVector<f64>| {
        let mut m = DMatrix::zeros(dims.n_x, n);
        for j in 0..n {
            let d = (eval(j, h) - eval(j, -h)) / (2.0 * h);
            m.set_column(j, &d);
        }
        m
    };
    let a = column(dims.n_x, fd_step(x), &|j, h| {
        let mut xp = x.clone();
        xp[j] += h;
        sys.dynamics(t, &xp, u, &w0)
    });
    let b = column(dims.n_u, fd_step(u), &|j, h| {
        let mut up = u.clone();
        up[j] += h;
        sys.dynamics(t, x, &up, &w0)
    });
    let f = column(dims.n_w, 1e-6, &|j, h| {
        let mut wp = w0.clone();
        wp[j] += h;
        sys.dynamics(t, x, u, &wp)
    });
    Jacobians { a, b, f }
}

/// Jacobians `A = ∂f/∂x`, `B = ∂f/∂u`, `F = ∂f/∂w` at `(t, x̄, ū, 0)`.
pub fn linearize(sys: &dyn NonlinearSystem, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<Jacobians> {
    let dims = sys.dims();
    check_len("state", dims.n_x, x)?;
    check_len("input", dims.n_u, u)?;
    let jac = sys.jacobians(t, x, u).unwrap_or_else(|| finite_difference_jacobians(sys, t, x, u));
    if jac.a.shape() != (dims.n_x, dims.n_x) || jac.b.shape() != (dims.n_x, dims.n_u) || jac.f.shape() != (dims.n_x, dims.n_w) {
        return Err(FunnelError::Linearization {
            t,
            reason: "Jacobian shapes do not match system dimensions".into(),
        });
    }
    if !(linalg::is_finite(&jac.a) && linalg::is_finite(&jac.b) && linalg::is_finite(&jac.f)) {
        return Err(FunnelError::Linearization {
            t,
            reason: "non-finite Jacobian entry".into(),
        });
    }
    Ok(jac)
}

pub fn operating_point(sys: &dyn NonlinearSystem, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<OperatingPoint> {
    Ok(OperatingPoint {
        t,
        x: x.clone(),
        u: u.clone(),
        jac: linearize(sys, t, x, u)?,
    })
}

/// Returns `(p, q)` with `q = Cx + Du + Gw` and `p = φ(t, q)`.
pub fn nonlinearity_residual(
    sys: &dyn NonlinearSystem,
    at: &OperatingPoint,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dims = sys.dims();
    check_len("state", dims.n_x, x)?;
    check_len("input", dims.n_u, u)?;
    check_len("disturbance", dims.n_w, w)?;
    let sel = sys.selectors();
    sel.check(dims)?;
    let q = &sel.c * x + &sel.d * u + &sel.g * w;
    let p = sys.nonlinearity(&q, at);
    check_len("nonlinearity output", dims.n_p, &p)?;
    Ok((p, q))
}

/// `f − (A x + B u + F w + E φ(Cx+Du+Gw))`; zero when the Lur'e split is exact.
pub fn reconstruction_error(sys: &dyn NonlinearSystem, at: &OperatingPoint, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let f = evaluate_dynamics(sys, at.t, x, u, w)?;
    let (p, _) = nonlinearity_residual(sys, at, x, u, w)?;
    let j = &at.jac;
    Ok(f - (&j.a * x + &j.b * u + &j.f * w + &sys.selectors().e * p))
}

/// Per-node Lur'e data: operating points and Lipschitz constants.
#[derive(Debug, Clone)]
pub struct LureLinearization {
    pub points: Vec<OperatingPoint>,
    pub gamma: Vec<f64>,
}

impl LureLinearization {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn linearize_trajectory(sys: &dyn NonlinearSystem, traj: &NominalTrajectory) -> Result<Vec<OperatingPoint>> {
    traj.grid
        .times()
        .iter()
        .zip(traj.states.iter().zip(&traj.inputs))
        .map(|(&t, (x, u))| operating_point(sys, t, x, u))
        .collect()
}

/// Ellipsoid `{η : ηᵀ shape⁻¹ η ≤ 1}` around a node, with the feedback gain
/// used to map it into input deviations.
#[derive(Debug, Clone)]
pub struct SamplingRegion {
    pub shape: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzOptions {
    pub n_samples: usize,
    pub inflation: f64,
    pub seed: u64,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        Self {
            n_samples: 100,
            inflation: 1.1,
            seed: 0,
        }
    }
}

/// A sampled deviation `(η, w)` from the nominal.
#[derive(Debug, Clone)]
pub struct Deviation {
    pub eta: DVector<f64>,
    pub w: DVector<f64>,
}

fn unit_ball_point(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    if n == 0 {
        return DVector::zeros(0);
    }
    loop {
        let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 0.0 {
            let r: f64 = Uniform::new(0.0, 1.0).sample(rng);
            return g * (r.powf(1.0 / n as f64) / norm);
        }
    }
}

/// Draws `n` deviations uniformly from the region ellipsoid (states) and the
/// unit disturbance ball.
pub fn sample_region(region: &SamplingRegion, n_w: usize, n: usize, seed: u64) -> Result<Vec<Deviation>> {
    if linalg::lambda_min(&region.shape) <= 0.0 {
        return Err(FunnelError::DegenerateRegion { node: 0 });
    }
    let root = linalg::sqrt_psd(&region.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let z = unit_ball_point(&mut rng, root.nrows());
            let w = unit_ball_point(&mut rng, n_w);
            Deviation { eta: &root * z, w }
        })
        .collect())
}

/// Largest observed ratio `‖φ(q) − φ(q̄)‖ / ‖q − q̄‖` over the given
/// deviations, without inflation. Deviations with `q = q̄` are skipped.
pub fn lipschitz_from_samples(sys: &dyn NonlinearSystem, at: &OperatingPoint, gain: &DMatrix<f64>, samples: &[Deviation]) -> f64 {
    let sel = sys.selectors();
    let q_bar = &sel.c * &at.x + &sel.d * &at.u;
    let p_bar = sys.nonlinearity(&q_bar, at);
    samples
        .iter()
        .filter_map(|s| {
            let dq = &sel.c * &s.eta + &sel.d * (gain * &s.eta) + &sel.g * &s.w;
            let n = dq.norm();
            if n <= f64::EPSILON * (1.0 + q_bar.norm()) {
                return None;
            }
            let q = &q_bar + dq;
            Some((sys.nonlinearity(&q, at) - &p_bar).norm() / n)
        })
        .fold(0.0, f64::max)
}

/// Sampling-based local Lipschitz constants, one per operating point.
///
/// Each node uses its own derived seed so the estimate for node `k` does not
/// depend on how many nodes precede it.
pub fn estimate_lipschitz(sys: &dyn NonlinearSystem, points: &[OperatingPoint], regions: &[SamplingRegion], opts: &LipschitzOptions) -> Result<Vec<f64>> {
    if opts.n_samples < 2 {
        return Err(FunnelError::InvalidArgument("lipschitz estimation needs at least 2 samples".into()));
    }
    if opts.inflation < 1.0 {
        return Err(FunnelError::InvalidArgument("lipschitz inflation must be >= 1".into()));
    }
    if points.len() != regions.len() {
        return Err(FunnelError::DimensionMismatch {
            context: "lipschitz sampling regions",
            expected: points.len(),
            got: regions.len(),
        });
    }
    let n_w = sys.dims().n_w;
    points
        .iter()
        .zip(regions)
        .enumerate()
        .map(|(k, (at, region))| {
            let seed = opts.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let samples = sample_region(region, n_w, opts.n_samples, seed).map_err(|_| FunnelError::DegenerateRegion { node: k })?;
            Ok(opts.inflation * lipschitz_from_samples(sys, at, &region.gain, &samples))
        })
        .collect()
}

/// Time-invariant linear system `ẋ = A x + B u + F w` with no nonlinearity
/// channel (`n_p = n_q = 0`).
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    selectors: LureSelectors,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, f: DMatrix<f64>) -> Self {
        let dims = Dims {
            n_x: a.nrows(),
            n_u: b.ncols(),
            n_w: f.ncols(),
            n_p: 0,
            n_q: 0,
        };
        Self {
            a,
            b,
            f,
            selectors: LureSelectors::empty(dims),
        }
    }
}

impl NonlinearSystem for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: self.a.nrows(),
            n_u: self.b.ncols(),
            n_w: self.f.ncols(),
            n_p: 0,
            n_q: 0,
        }
    }

    fn dynamics(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.f * w
    }

    fn jacobians(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<Jacobians> {
        Some(Jacobians {
            a: self.a.clone(),
            b: self.b.clone(),
            f: self.f.clone(),
        })
    }

    fn selectors(&self) -> &LureSelectors {
        &self.selectors
    }

    fn nonlinearity(&self, _q: &DVector<f64>, _at: &OperatingPoint) -> DVector<f64> {
        DVector::zeros(0)
    }
}

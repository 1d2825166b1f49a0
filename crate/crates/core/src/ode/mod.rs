//! Adaptive initial-value-problem integration with dense output.
//!
//! Two embedded pairs are provided:
//!
//! * [`Method::Explicit`]: Dormand–Prince 5(4) with its fourth-order
//!   continuous extension. Suited to the nonstiff moment and
//!   non-observation equations.
//! * [`Method::Implicit`]: a five-stage, stiffly accurate, L-stable SDIRK of
//!   order 4 with an embedded order-3 solution and cubic Hermite dense
//!   output. Newton iterations use the Jacobian supplied by the system, or
//!   forward differences when none is supplied.
//!
//! Step sizes follow an integral controller with fixed gains.

mod band;
mod dense;
mod dopri;
mod sdirk;

use thiserror::Error;

pub use band::BandMatrix;
pub use dense::DenseSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("invalid time span [{0}, {1}]")]
    InvalidSpan(f64, f64),
    #[error("invalid tolerances: {0}")]
    InvalidTolerances(String),
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    StepLimit { t: f64, max_steps: usize },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("right-hand side returned a non-finite value at t = {t}")]
    NonFinite { t: f64 },
    #[error("singular iteration matrix at t = {t}")]
    Singular { t: f64 },
}

/// Error-control tolerances and the step budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), OdeError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.rtol) || !ok(self.atol) || self.max_steps == 0 {
            return Err(OdeError::InvalidTolerances(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Explicit,
    /// For stiff systems.
    Implicit,
}

/// Jacobian of a right-hand side, `J[i][j] = d f_i / d y_j`.
#[derive(Debug, Clone)]
pub enum Jacobian {
    Dense(nalgebra::DMatrix<f64>),
    Banded(BandMatrix),
}

/// A first-order system `y' = f(t, y)`.
///
/// Any `Fn(f64, &[f64], &mut [f64])` closure is a system.
pub trait OdeSystem {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Analytic (or structured) Jacobian for the implicit method. `None`
    /// falls back to dense forward differences.
    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<Jacobian> {
        None
    }
}

impl<F> OdeSystem for F
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self(t, y, dy)
    }
}

/// Integrates `sys` from `y0` over `span = (t0, t1)`, `t0 < t1`.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    span: (f64, f64),
    tol: &Tolerances,
    method: Method,
) -> Result<DenseSolution, OdeError> {
    let (t0, t1) = span;
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(OdeError::InvalidSpan(t0, t1));
    }
    tol.check()?;
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(OdeError::NonFinite { t: t0 });
    }
    match method {
        Method::Explicit => dopri::solve(sys, y0, t0, t1, tol),
        Method::Implicit => sdirk::solve(sys, y0, t0, t1, tol),
    }
}

/// Evaluates the right-hand side and rejects non-finite output.
fn eval_rhs<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
) -> Result<(), OdeError> {
    sys.rhs(t, y, dy);
    if dy.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OdeError::NonFinite { t })
    }
}

/// Max-norm of `err` scaled componentwise by `atol + rtol * max(|a|, |b|)`.
fn scaled_max_norm(err: &[f64], a: &[f64], b: &[f64], tol: &Tolerances) -> f64 {
    err.iter()
        .zip(a.iter().zip(b))
        .map(|(e, (x, y))| e.abs() / (tol.atol + tol.rtol * x.abs().max(y.abs())))
        .fold(0.0, f64::max)
}

fn scaled_rms(v: &[f64], y: &[f64], tol: &Tolerances) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(e, x)| {
            let q = e / (tol.atol + tol.rtol * x.abs());
            q * q
        })
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Starting step size (Hairer, Nørsett & Wanner, II.4).
fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    t1: f64,
    order: i32,
    tol: &Tolerances,
) -> Result<f64, OdeError> {
    let span = t1 - t0;
    let d0 = scaled_rms(y0, y0, tol);
    let d1 = scaled_rms(f0, y0, tol);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    eval_rhs(sys, t0 + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_rms(&diff, y0, tol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order as f64 + 1.0))
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integral step-size controller with fixed gains.
#[derive(Debug, Clone, Copy)]
struct IController {
    exponent: f64,
}

impl IController {
    const SAFETY: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 5.0;

    fn new(error_order: i32) -> Self {
        Self {
            exponent: 1.0 / (error_order as f64 + 1.0),
        }
    }

    /// Factor by which to scale `h` given the scaled error norm.
    fn factor(&self, err: f64, after_reject: bool) -> f64 {
        let raw = if err == 0.0 {
            Self::FAC_MAX
        } else {
            Self::SAFETY * err.powf(-self.exponent)
        };
        let hi = if after_reject { 1.0 } else { Self::FAC_MAX };
        raw.clamp(Self::FAC_MIN, hi)
    }
}

fn underflow(t: f64, h: f64) -> bool {
    h <= 1e-14 * t.abs().max(1.0)
}

#[cfg(test)]
mod tests;

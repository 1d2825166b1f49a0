//! Moment trajectories and self-consistent fields.
//!
//! For an external field `phi`, the moment map solves the linear system
//!
//! ```text
//! r_i' = (lambda_i - mu_tilde_i(phi(t))) r_i + sum_j gamma[j][i] r_j,   r(0) = r0
//! ```
//!
//! and [`solve_scf`] iterates `phi <- T[phi]` from the constant field `r0`
//! until `sum_i ||phi_i - T_i[phi]||_2 <= delta`. The coefficient matrix is
//! `diag(lambda - mu_tilde) + gamma^T` throughout, so that the fixed point,
//! [`solve_moment_direct`] and [`steady_states`] all describe the same
//! nonlinear moment equation.

mod field;
mod steady;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec};
use crate::ode::{self, Jacobian, Method, OdeError, OdeSystem, Tolerances};

pub use field::{l2_residual, sup_distance, FieldTrajectory};
pub use steady::{criticality_residual, default_guesses, steady_states, SkippedGuess, SteadyStates};

#[derive(Debug, Error)]
pub enum ScfError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<FieldTrajectory>,
    },
}

/// Settings for [`solve_scf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScfConfig {
    /// Stopping tolerance on `sum_i ||phi_i - T_i[phi]||_2`.
    pub delta: f64,
    pub max_iters: usize,
    /// Trapezoid nodes for the trajectory norm.
    pub quad_points: usize,
    /// Consecutive iterations without a new best residual before switching
    /// to averaged iteration `phi <- (phi + T[phi]) / 2`.
    pub stall_limit: usize,
    /// When set, the horizon is cut into consecutive windows of this length
    /// and each window is iterated to its own fixed point, starting from the
    /// terminal value of the previous one.
    pub window: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for ScfConfig {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            max_iters: 200,
            quad_points: 512,
            stall_limit: 5,
            window: None,
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

impl ScfConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances::new(self.rtol, self.atol)
    }

    fn check(&self) -> Result<(), ScfError> {
        let bad = |m: &str| Err(ScfError::InvalidConfig(m.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if self.quad_points < 2 {
            return bad("quad_points must be at least 2");
        }
        if let Some(w) = self.window {
            if !(w > 0.0 && w.is_finite()) {
                return bad("window must be positive");
            }
        }
        Ok(())
    }
}

/// Result of [`solve_scf`].
#[derive(Debug, Clone)]
pub struct ScfSolution {
    /// The converged field `phi*`.
    pub field: FieldTrajectory,
    /// `T[phi*]`, computed in the final residual check.
    pub mapped: FieldTrajectory,
    /// Number of updates `phi <- T[phi]` (plain or averaged).
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    /// Whether the averaged fallback was used.
    pub averaged: bool,
}

fn check_horizon(tau: f64) -> Result<(), ScfError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(ScfError::InvalidHorizon(tau))
    }
}

/// Moment equation driven by an external field.
struct FieldDriven<'a> {
    spec: &'a ModelSpec,
    phi: &'a FieldTrajectory,
}

impl FieldDriven<'_> {
    fn rates(&self, t: f64) -> Vec<f64> {
        let mut phi = vec![0.0; self.spec.d];
        self.phi.eval_into(t, &mut phi);
        let mut mu = vec![0.0; self.spec.d];
        self.spec.mu_tilde_into(&phi, &mut mu);
        mu
    }
}

impl OdeSystem for FieldDriven<'_> {
    fn rhs(&self, t: f64, r: &[f64], dr: &mut [f64]) {
        let mu = self.rates(t);
        linear_moment_rhs(self.spec, &mu, r, dr);
    }

    fn jacobian(&self, t: f64, _r: &[f64]) -> Option<Jacobian> {
        let mu = self.rates(t);
        let s = self.spec;
        let j = DMatrix::from_fn(s.d, s.d, |i, k| {
            let diag = if i == k { s.lambda[i] - mu[i] } else { 0.0 };
            diag + s.gamma[k][i]
        });
        Some(Jacobian::Dense(j))
    }
}

/// The closed nonlinear moment equation.
struct SelfCoupled<'a> {
    spec: &'a ModelSpec,
}

impl OdeSystem for SelfCoupled<'_> {
    fn rhs(&self, _t: f64, r: &[f64], dr: &mut [f64]) {
        let mut mu = vec![0.0; self.spec.d];
        self.spec.mu_tilde_into(r, &mut mu);
        linear_moment_rhs(self.spec, &mu, r, dr);
    }

    fn jacobian(&self, _t: f64, r: &[f64]) -> Option<Jacobian> {
        let s = self.spec;
        let mut mu = vec![0.0; s.d];
        s.mu_tilde_into(r, &mut mu);
        let j = DMatrix::from_fn(s.d, s.d, |i, k| {
            let diag = if i == k { s.lambda[i] - mu[i] } else { 0.0 };
            diag + s.gamma[k][i] - r[i] * s.w[i][k]
        });
        Some(Jacobian::Dense(j))
    }
}

/// `dr = diag(lambda - mu) r + gamma^T r`.
fn linear_moment_rhs(spec: &ModelSpec, mu: &[f64], r: &[f64], dr: &mut [f64]) {
    for i in 0..spec.d {
        let inflow: f64 = (0..spec.d).map(|j| spec.gamma[j][i] * r[j]).sum();
        dr[i] = (spec.lambda[i] - mu[i]) * r[i] + inflow;
    }
}

/// Applies the moment map on `[t0, t1]` starting from `r_start`.
pub fn moment_map_on(
    spec: &ModelSpec,
    phi: &FieldTrajectory,
    span: (f64, f64),
    r_start: &[f64],
    tol: &Tolerances,
) -> Result<FieldTrajectory, ScfError> {
    if phi.dim() != spec.d || r_start.len() != spec.d {
        return Err(ModelError::Dimension {
            expected: spec.d,
            got: phi.dim().min(r_start.len()),
        }
        .into());
    }
    let sys = FieldDriven { spec, phi };
    let sol = ode::integrate(&sys, r_start, span, tol, Method::Implicit)?;
    Ok(FieldTrajectory::from_dense(sol))
}

/// `T[phi]` on `[0, tau]` with `r(0) = r0`, at the default SCF tolerances.
pub fn moment_map(
    spec: &ModelSpec,
    phi: &FieldTrajectory,
    tau: f64,
) -> Result<FieldTrajectory, ScfError> {
    spec.check()?;
    check_horizon(tau)?;
    moment_map_on(spec, phi, (0.0, tau), &spec.r0, &ScfConfig::default().tolerances())
}

/// Fixed-point iteration on one interval.
fn iterate(
    spec: &ModelSpec,
    start: FieldTrajectory,
    span: (f64, f64),
    r_start: &[f64],
    delta: f64,
    max_iters: usize,
    config: &ScfConfig,
) -> Result<ScfSolution, ScfError> {
    let tol = config.tolerances();
    let mut phi = start;
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut averaging = false;
    let mut iterations = 0;
    loop {
        let mapped = moment_map_on(spec, &phi, span, r_start, &tol)?;
        let residual = l2_residual(&phi, &mapped, config.quad_points);
        history.push(residual);
        if residual <= delta {
            return Ok(ScfSolution {
                field: phi,
                mapped,
                iterations,
                residual,
                history,
                averaged: averaging,
            });
        }
        if iterations >= max_iters || !residual.is_finite() {
            return Err(ScfError::NonConvergence {
                iterations,
                residual,
                last: Box::new(phi),
            });
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if stalled >= config.stall_limit {
            averaging = true;
        }
        phi = if averaging {
            FieldTrajectory::average(phi, mapped)
        } else {
            mapped
        };
        iterations += 1;
    }
}

/// Self-consistent field on `[0, tau]` by successive approximation.
pub fn solve_scf(spec: &ModelSpec, tau: f64, config: &ScfConfig) -> Result<ScfSolution, ScfError> {
    spec.check()?;
    check_horizon(tau)?;
    config.check()?;
    let initial = || FieldTrajectory::constant(spec.r0.clone(), 0.0, tau);

    let Some(width) = config.window.filter(|&w| w < tau) else {
        return iterate(spec, initial(), (0.0, tau), &spec.r0, config.delta, config.max_iters, config);
    };

    // Each window is iterated to its own fixed point, started from the
    // state the previous window maps to. The residuals add up to at most
    // `delta`.
    let windows = (tau / width).ceil() as usize;
    let delta_w = config.delta / windows as f64;
    let mut fields = Vec::with_capacity(windows);
    let mut mapped = Vec::with_capacity(windows);
    let mut r_start = spec.r0.clone();
    let mut iterations = 0;
    let mut residual = 0.0;
    let mut history = Vec::new();
    let mut averaged = false;
    for k in 0..windows {
        let a = width * k as f64;
        let b = if k + 1 == windows { tau } else { width * (k + 1) as f64 };
        let start = FieldTrajectory::constant(r_start.clone(), a, b);
        let sol = iterate(spec, start, (a, b), &r_start, delta_w, config.max_iters, config).map_err(|e| match e {
            ScfError::NonConvergence {
                iterations: i,
                residual,
                last,
            } => {
                // hold the last state over the windows not reached
                let mut done = std::mem::take(&mut fields);
                let held = last.terminal();
                done.push(*last);
                if b < tau {
                    done.push(FieldTrajectory::constant(held, b, tau));
                }
                ScfError::NonConvergence {
                    iterations: iterations + i,
                    residual,
                    last: Box::new(FieldTrajectory::concat(done)),
                }
            }
            other => other,
        })?;
        iterations += sol.iterations;
        residual += sol.residual;
        history.extend_from_slice(&sol.history);
        averaged |= sol.averaged;
        r_start = sol.mapped.terminal();
        fields.push(sol.field);
        mapped.push(sol.mapped);
    }
    Ok(ScfSolution {
        field: FieldTrajectory::concat(fields),
        mapped: FieldTrajectory::concat(mapped),
        iterations,
        residual,
        history,
        averaged,
    })
}

/// Solves the nonlinear moment equation directly.
pub fn solve_moment_direct(
    spec: &ModelSpec,
    tau: f64,
    tol: &Tolerances,
) -> Result<FieldTrajectory, ScfError> {
    spec.check()?;
    check_horizon(tau)?;
    let sol = ode::integrate(&SelfCoupled { spec }, &spec.r0, (0.0, tau), tol, Method::Explicit)?;
    Ok(FieldTrajectory::from_dense(sol))
}

/// Right-hand side of the nonlinear moment equation at `r`.
pub fn moment_rhs(spec: &ModelSpec, r: &[f64]) -> Vec<f64> {
    let mut dr = vec![0.0; spec.d];
    SelfCoupled { spec }.rhs(0.0, r, &mut dr);
    dr
}

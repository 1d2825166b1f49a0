use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{solve_scf, ScfConfig, ScfError};
use crate::model::ModelSpec;

const RESIDUAL_TOL: f64 = 1e-10;
const MERGE_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-12;
const MAX_NEWTON: usize = 200;
const MAX_HALVINGS: usize = 40;
/// Horizon of the short run that seeds the default guesses.
const SEED_HORIZON: f64 = 20.0;

/// Nonnegative roots of the criticality condition.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyStates {
    /// The zero root first, then nontrivial roots in order of discovery.
    pub roots: Vec<Vec<f64>>,
    pub skipped: Vec<SkippedGuess>,
}

impl SteadyStates {
    /// Roots other than zero.
    pub fn nontrivial(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.roots.iter().filter(|r| r.iter().any(|&x| x != 0.0))
    }
}

/// A guess that did not lead to an admissible root, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct SkippedGuess {
    pub guess: Vec<f64>,
    pub reason: String,
}

/// `(diag(lambda - mu_tilde(phi)) + gamma^T) phi`.
pub fn criticality_residual(spec: &ModelSpec, phi: &[f64]) -> Vec<f64> {
    super::moment_rhs(spec, phi)
}

fn jacobian(spec: &ModelSpec, phi: &[f64]) -> DMatrix<f64> {
    let mut mu = vec![0.0; spec.d];
    spec.mu_tilde_into(phi, &mut mu);
    DMatrix::from_fn(spec.d, spec.d, |i, k| {
        let diag = if i == k { spec.lambda[i] - mu[i] } else { 0.0 };
        diag + spec.gamma[k][i] - phi[i] * spec.w[i][k]
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `r0`, the terminal value of a short self-consistent run, and zero.
pub fn default_guesses(spec: &ModelSpec) -> Vec<Vec<f64>> {
    let mut guesses = vec![spec.r0.clone()];
    let config = ScfConfig {
        max_iters: 100,
        delta: 1e-4,
        ..ScfConfig::default()
    };
    match solve_scf(spec, SEED_HORIZON, &config) {
        Ok(sol) => guesses.push(sol.field.terminal()),
        Err(ScfError::NonConvergence { last, .. }) => guesses.push(last.terminal()),
        Err(_) => {}
    }
    guesses.push(vec![0.0; spec.d]);
    guesses
}

enum Outcome {
    Root(Vec<f64>),
    Failed(String),
}

fn newton(spec: &ModelSpec, guess: &[f64]) -> Outcome {
    let mut x = guess.to_vec();
    let mut f = criticality_residual(spec, &x);
    let mut fnorm = inf_norm(&f);
    let mut last_step = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        // near degenerate roots the residual is small long before x settles
        if fnorm <= RESIDUAL_TOL && last_step <= STEP_TOL * inf_norm(&x).max(1.0) {
            return Outcome::Root(x);
        }
        let lu = jacobian(spec, &x).lu();
        let rhs = DVector::from_iterator(spec.d, f.iter().map(|v| -v));
        let Some(step) = lu.solve(&rhs) else {
            return Outcome::Failed(format!("singular Jacobian at {x:?}"));
        };
        if step.iter().any(|s| !s.is_finite()) {
            return Outcome::Failed(format!("singular Jacobian at {x:?}"));
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let ft = criticality_residual(spec, &trial);
            let nt = inf_norm(&ft);
            if nt < fnorm || (nt == 0.0 && fnorm == 0.0) {
                last_step = alpha * inf_norm(step.as_slice());
                x = trial;
                f = ft;
                fnorm = nt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // the residual is at roundoff and Newton puts the root within
            // merging distance
            if fnorm <= RESIDUAL_TOL && inf_norm(step.as_slice()) <= MERGE_TOL * inf_norm(&x).max(1.0) {
                return Outcome::Root(x);
            }
            return Outcome::Failed(format!("line search stalled at residual {fnorm:e}"));
        }
    }
    if fnorm <= RESIDUAL_TOL && last_step <= MERGE_TOL {
        Outcome::Root(x)
    } else {
        Outcome::Failed(format!("no convergence, residual {fnorm:e}"))
    }
}

/// Damped Newton from each guess; keeps distinct nonnegative roots whose
/// residual max-norm is at most 1e-10. Zero is always the first root.
pub fn steady_states(spec: &ModelSpec, guesses: &[Vec<f64>]) -> Result<SteadyStates, ScfError> {
    spec.check()?;
    let mut roots = vec![vec![0.0; spec.d]];
    let mut skipped = Vec::new();
    for g in guesses {
        if g.len() != spec.d {
            return Err(crate::model::ModelError::Dimension {
                expected: spec.d,
                got: g.len(),
            }
            .into());
        }
        match newton(spec, g) {
            Outcome::Failed(reason) => skipped.push(SkippedGuess {
                guess: g.clone(),
                reason,
            }),
            Outcome::Root(x) => {
                if x.iter().any(|&v| v < -MERGE_TOL) {
                    skipped.push(SkippedGuess {
                        guess: g.clone(),
                        reason: format!("converged to a root with negative entries {x:?}"),
                    });
                    continue;
                }
                let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
                let dup = roots.iter().any(|r| {
                    r.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= MERGE_TOL
                });
                if !dup {
                    roots.push(x);
                }
            }
        }
    }
    Ok(SteadyStates { roots, skipped })
}

//! Birth-death tree likelihoods with a mean-field interaction.
//!
//! Time runs backward from the present (`t = 0`) to the start of the stem
//! (`t = tau`). The field `r` is computed forward from the stem, so at
//! backward time `t` the rates see `r_fwd(tau - t)`.

mod newick;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, SamplingSpec};
use crate::ode::{self, DenseSolution, Jacobian, Method, OdeError, OdeSystem, Tolerances};
use crate::quad;
use crate::scf::{solve_scf, FieldTrajectory, ScfConfig, ScfError};

pub use newick::{parse_tree, write_tree, ULTRAMETRIC_TOL};

#[derive(Debug, Error)]
pub enum PhyloError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid tree at line {line}, column {column}: {message}")]
    Invalid {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("tree uses type {ty} but the model has {d} types")]
    TypeOutOfRange { ty: usize, d: usize },
    #[error("field covers [{start}, {end}] but the tree needs [0, {tau}]")]
    FieldDomain { start: f64, end: f64, tau: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] ScfError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
}

/// What happens at the lower end `t_bottom` of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    /// Sampled at the present.
    Sample,
    /// Observed death before the present.
    Fossil,
    /// Birth; both children keep the parent's type.
    Split,
    /// Change to type `to` (0-based).
    TypeChange { to: usize },
}

/// A node together with the branch above it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub name: Option<String>,
    /// 0-based type of the branch.
    pub ty: usize,
    /// Branch length as written.
    pub length: f64,
    pub event: Event,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    /// Backward time of the node (lower end of the branch).
    pub t_bottom: f64,
    /// Backward time of the upper end of the branch.
    pub t_top: f64,
    /// Annotations other than the reserved keys, kept for writing back.
    pub extra: BTreeMap<String, String>,
}

/// The unary node above the stem, when the tree was written with one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Origin {
    pub name: Option<String>,
    pub extra: BTreeMap<String, String>,
}

/// A typed, time-calibrated tree. Node 0 is the stem; nodes are stored in
/// pre-order, so every child comes after its parent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhyloTree {
    /// Age of the start of the stem.
    pub tau: f64,
    pub nodes: Vec<Node>,
    pub origin: Option<Origin>,
}

impl PhyloTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_type(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n.event {
                Event::TypeChange { to } => n.ty.max(to),
                _ => n.ty,
            })
            .max()
            .unwrap_or(0)
    }

    /// Swaps the children of a split node.
    pub fn swap_children(&mut self, k: usize) {
        self.nodes[k].children.reverse();
    }
}

/// Probabilities of leaving no sampled or fossilized descendant.
#[derive(Debug, Clone)]
pub struct NonObservationSolution {
    p: DenseSolution,
    field: FieldTrajectory,
    tau: f64,
}

impl NonObservationSolution {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `p(t)` clamped to `[0, 1]`.
    pub fn p(&self, t: f64) -> Vec<f64> {
        let mut out = self.p.eval(t);
        for x in &mut out {
            *x = x.clamp(0.0, 1.0);
        }
        out
    }

    pub fn p_component(&self, t: f64, i: usize) -> f64 {
        self.p.eval_component(t, i).clamp(0.0, 1.0)
    }

    /// Solver output without clamping.
    pub fn raw(&self) -> &DenseSolution {
        &self.p
    }

    /// Field in backward time, `r_fwd(tau - t)`.
    pub fn field_at(&self, t: f64) -> Vec<f64> {
        self.field.eval(self.tau - t)
    }

    /// The forward-time field the solution was computed against.
    pub fn field(&self) -> &FieldTrajectory {
        &self.field
    }
}

struct NonObs<'a> {
    spec: &'a ModelSpec,
    sigma: f64,
    field: &'a FieldTrajectory,
    tau: f64,
}

impl NonObs<'_> {
    /// `mu_i + sum_j W_ij r_j` at backward time `t`.
    fn loss(&self, t: f64) -> Vec<f64> {
        let r = self.field.eval(self.tau - t);
        let mut mu = vec![0.0; self.spec.d];
        self.spec.mu_tilde_into(&r, &mut mu);
        mu
    }
}

impl OdeSystem for NonObs<'_> {
    fn rhs(&self, t: f64, p: &[f64], dp: &mut [f64]) {
        let s = self.spec;
        let m = self.loss(t);
        for i in 0..s.d {
            let mix: f64 = (0..s.d).map(|j| s.gamma[i][j] * p[j]).sum();
            dp[i] = s.lambda[i] * p[i] * p[i] - (s.lambda[i] + m[i]) * p[i] + mix + (1.0 - self.sigma) * m[i];
        }
    }

    fn jacobian(&self, t: f64, p: &[f64]) -> Option<Jacobian> {
        let s = self.spec;
        let m = self.loss(t);
        Some(Jacobian::Dense(nalgebra::DMatrix::from_fn(s.d, s.d, |i, j| {
            let diag = if i == j { 2.0 * s.lambda[i] * p[i] - s.lambda[i] - m[i] } else { 0.0 };
            diag + s.gamma[i][j]
        })))
    }
}

fn check_field(field: &FieldTrajectory, spec: &ModelSpec, tau: f64) -> Result<(), PhyloError> {
    if field.dim() != spec.d {
        return Err(ModelError::Dimension {
            expected: spec.d,
            got: field.dim(),
        }
        .into());
    }
    if field.t_start() > 0.0 || field.t_end() < tau * (1.0 - 1e-12) {
        return Err(PhyloError::FieldDomain {
            start: field.t_start(),
            end: field.t_end(),
            tau,
        });
    }
    Ok(())
}

/// Solves the non-observation equations on `[0, tau]` against a
/// forward-time field defined on `[0, tau]`.
pub fn solve_nonobs(
    spec: &ModelSpec,
    sampling: &SamplingSpec,
    field: &FieldTrajectory,
    tau: f64,
    tol: &Tolerances,
) -> Result<NonObservationSolution, PhyloError> {
    spec.check()?;
    sampling.check()?;
    check_field(field, spec, tau)?;
    let sys = NonObs {
        spec,
        sigma: sampling.sigma,
        field,
        tau,
    };
    let p0 = vec![1.0 - sampling.rho; spec.d];
    let p = ode::integrate(&sys, &p0, (0.0, tau), tol, Method::Implicit)?;
    Ok(NonObservationSolution {
        p,
        field: field.clone(),
        tau,
    })
}

/// Settings for [`log_likelihood`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LoglikOptions {
    /// Divide by the probability that the stem leaves an observation.
    pub condition_on_observation: bool,
    /// Fossil boundary `sigma * (mu_i + sum_j W_ij r_j)` instead of
    /// `sigma * mu_i`.
    pub fossil_uses_meanfield_rate: bool,
    pub scf: ScfConfig,
    pub rtol: f64,
    pub atol: f64,
    /// Absolute tolerance for the branch integrals.
    pub quad_tol: f64,
}

impl Default for LoglikOptions {
    fn default() -> Self {
        Self {
            condition_on_observation: true,
            fossil_uses_meanfield_rate: false,
            scf: ScfConfig::default(),
            rtol: 1e-10,
            atol: 1e-12,
            quad_tol: 1e-10,
        }
    }
}

/// Log-likelihood with the quantities behind it.
#[derive(Debug, Clone, Serialize)]
pub struct Loglik {
    pub loglik: f64,
    pub conditioned: bool,
    pub tau: f64,
    /// Unconditioned value, `log q` at the top of the stem.
    pub log_q_root: f64,
    /// `p` of the stem type at `tau`.
    pub p_root: f64,
    /// `log q` at the top of every branch, by node.
    pub log_q: Vec<f64>,
    pub scf_iterations: usize,
    pub scf_residual: f64,
}

/// `c_i(t) = 2 lambda_i p_i + gamma_ii - lambda_i - mu_i - sum_j W_ij r_j`.
fn growth(spec: &ModelSpec, nonobs: &NonObservationSolution, i: usize, t: f64) -> f64 {
    let wr = spec.w_row_dot(i, &nonobs.field_at(t));
    2.0 * spec.lambda[i] * nonobs.p_component(t, i) + spec.gamma[i][i] - spec.lambda[i] - spec.mu[i] - wr
}

/// `int_{a}^{b} c_i(t) dt`, split at the solver knots of `p`.
fn branch_integral(spec: &ModelSpec, nonobs: &NonObservationSolution, i: usize, a: f64, b: f64, tol: f64) -> f64 {
    let knots = nonobs.p.knots();
    let lo = knots.partition_point(|&k| k <= a);
    let hi = knots.partition_point(|&k| k < b);
    let mut edges = vec![a];
    edges.extend_from_slice(&knots[lo..hi]);
    edges.push(b);
    let share = tol / (edges.len() - 1) as f64;
    edges
        .windows(2)
        .map(|w| quad::integrate(|t| growth(spec, nonobs, i, t), w[0], w[1], share).0)
        .sum()
}

/// Evaluates the tree against precomputed `p` and `r`.
pub fn log_likelihood_with(
    tree: &PhyloTree,
    spec: &ModelSpec,
    sampling: &SamplingSpec,
    nonobs: &NonObservationSolution,
    options: &LoglikOptions,
) -> Result<Loglik, PhyloError> {
    spec.check()?;
    sampling.check()?;
    if tree.max_type() >= spec.d {
        return Err(PhyloError::TypeOutOfRange {
            ty: tree.max_type() + 1,
            d: spec.d,
        });
    }
    if nonobs.tau < tree.tau * (1.0 - 1e-12) {
        return Err(PhyloError::FieldDomain {
            start: 0.0,
            end: nonobs.tau,
            tau: tree.tau,
        });
    }
    let mut log_q = vec![f64::NEG_INFINITY; tree.len()];
    // children follow their parents, so a reverse sweep is post-order
    for k in (0..tree.len()).rev() {
        let node = &tree.nodes[k];
        let i = node.ty;
        let boundary = match node.event {
            Event::Sample => sampling.rho.ln(),
            Event::Fossil => {
                let rate = if options.fossil_uses_meanfield_rate {
                    spec.mu[i] + spec.w_row_dot(i, &nonobs.field_at(node.t_bottom))
                } else {
                    spec.mu[i]
                };
                (sampling.sigma * rate).ln()
            }
            Event::Split => spec.lambda[i].ln() + node.children.iter().map(|&c| log_q[c]).sum::<f64>(),
            Event::TypeChange { to } => spec.gamma[i][to].ln() + log_q[node.children[0]],
        };
        log_q[k] = if boundary == f64::NEG_INFINITY {
            boundary
        } else {
            boundary + branch_integral(spec, nonobs, i, node.t_bottom, node.t_top, options.quad_tol)
        };
    }
    let root = tree.root();
    let i = tree.nodes[root].ty;
    let p_root = nonobs.p_component(tree.nodes[root].t_top, i);
    let log_q_root = log_q[root];
    let loglik = if options.condition_on_observation && log_q_root > f64::NEG_INFINITY {
        log_q_root - (1.0 - p_root).ln()
    } else {
        log_q_root
    };
    Ok(Loglik {
        loglik,
        conditioned: options.condition_on_observation,
        tau: tree.tau,
        log_q_root,
        p_root,
        log_q,
        scf_iterations: 0,
        scf_residual: 0.0,
    })
}

/// Computes the field by self-consistent iteration over the age of the
/// tree, then `p`, then the branch propagators.
pub fn log_likelihood_detailed(
    tree: &PhyloTree,
    spec: &ModelSpec,
    sampling: &SamplingSpec,
    options: &LoglikOptions,
) -> Result<Loglik, PhyloError> {
    spec.check()?;
    sampling.check()?;
    let scf = solve_scf(spec, tree.tau, &options.scf)?;
    let tol = Tolerances::new(options.rtol, options.atol);
    let nonobs = solve_nonobs(spec, sampling, &scf.field, tree.tau, &tol)?;
    let mut out = log_likelihood_with(tree, spec, sampling, &nonobs, options)?;
    out.scf_iterations = scf.iterations;
    out.scf_residual = scf.residual;
    Ok(out)
}

/// Log-likelihood of `tree`; `-inf` when an observed event has probability
/// zero under the model.
pub fn log_likelihood(
    tree: &PhyloTree,
    spec: &ModelSpec,
    sampling: &SamplingSpec,
    options: &LoglikOptions,
) -> Result<f64, PhyloError> {
    log_likelihood_detailed(tree, spec, sampling, options).map(|l| l.loglik)
}

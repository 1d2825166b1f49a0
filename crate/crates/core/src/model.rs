//! Model parameterizations shared by the solvers and the simulator.
//!
//! A [`ModelSpec`] describes a multi-type birth-death process whose death
//! rates carry a moment-mediated mean-field term,
//! `mu_tilde(r) = mu + W r`, with the product `W r` frozen once the total
//! expected size exceeds `interaction_cap`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default value of [`ModelSpec::interaction_cap`].
pub const DEFAULT_INTERACTION_CAP: f64 = 1e9;

/// Tolerance used when checking that the rows of `gamma` sum to zero.
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("failed to read model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A single broken invariant of a [`ModelSpec`] or [`SamplingSpec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub reason: String,
}

impl Violation {
    fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

/// Parameters of a multi-type birth-death process with linear moment
/// interaction.
///
/// Matrices are stored row-major as nested vectors, which is also the JSON
/// layout. `gamma[i][j]` is the rate at which a type-`i` particle becomes
/// type `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub r0: Vec<f64>,
    #[serde(default = "default_cap")]
    pub interaction_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_INTERACTION_CAP
}

impl ModelSpec {
    /// Builds a spec, filling the diagonal of `gamma` when only off-diagonal
    /// rates were supplied. The result is not validated.
    pub fn new(
        lambda: Vec<f64>,
        mu: Vec<f64>,
        gamma: Vec<Vec<f64>>,
        w: Vec<Vec<f64>>,
        r0: Vec<f64>,
    ) -> Self {
        Self {
            d: lambda.len(),
            lambda,
            mu,
            gamma,
            w,
            r0,
            interaction_cap: DEFAULT_INTERACTION_CAP,
        }
        .normalized()
    }

    /// Single-type process with the given rates and interaction coefficient.
    pub fn scalar(lambda: f64, mu: f64, w: f64, r0: f64) -> Self {
        Self::new(
            vec![lambda],
            vec![mu],
            vec![vec![0.0]],
            vec![vec![w]],
            vec![r0],
        )
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.interaction_cap = cap;
        self
    }

    pub fn with_w(mut self, w: Vec<Vec<f64>>) -> Self {
        self.w = w;
        self
    }

    pub fn with_r0(mut self, r0: Vec<f64>) -> Self {
        self.r0 = r0;
        self
    }

    /// Fills the diagonal of `gamma` so that rows sum to zero, but only when
    /// every diagonal entry is exactly zero (the off-diagonal-only form).
    pub fn normalized(mut self) -> Self {
        let square = self.gamma.len() == self.d && self.gamma.iter().all(|r| r.len() == self.d);
        if square && (0..self.d).all(|i| self.gamma[i][i] == 0.0) {
            for i in 0..self.d {
                let off: f64 = (0..self.d)
                    .filter(|&j| j != i)
                    .map(|j| self.gamma[i][j])
                    .sum();
                self.gamma[i][i] = -off;
            }
        }
        self
    }

    /// Reads a spec from JSON text and normalizes `gamma`.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        Ok(spec.normalized())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Returns every invariant violation; empty iff the spec is usable.
    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    /// `Ok(())` when [`validate`] finds nothing.
    pub fn check(&self) -> Result<(), ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    /// Mean-field death rates at expected state `r`; see [`mu_tilde`].
    pub fn mu_tilde(&self, r: &[f64]) -> Result<Vec<f64>, ModelError> {
        mu_tilde(self, r)
    }

    /// Allocation-free variant of [`mu_tilde`]. Panics on length mismatch.
    pub fn mu_tilde_into(&self, r: &[f64], out: &mut [f64]) {
        assert_eq!(r.len(), self.d);
        assert_eq!(out.len(), self.d);
        let total: f64 = r.iter().sum();
        let scale = if total > self.interaction_cap {
            self.interaction_cap / total
        } else {
            1.0
        };
        for i in 0..self.d {
            let wr: f64 = self.w[i].iter().zip(r).map(|(w, x)| w * x).sum();
            out[i] = self.mu[i] + scale * wr;
        }
    }

    /// `(W r)_i` for row `i`, without capping.
    pub(crate) fn w_row_dot(&self, i: usize, r: &[f64]) -> f64 {
        self.w[i].iter().zip(r).map(|(w, x)| w * x).sum()
    }

    /// Total rate at which a type-`i` particle changes type.
    pub fn type_change_rate(&self, i: usize) -> f64 {
        (0..self.d)
            .filter(|&k| k != i)
            .map(|k| self.gamma[i][k])
            .sum()
    }

    pub fn has_interaction(&self) -> bool {
        self.w.iter().flatten().any(|&x| x != 0.0)
    }
}

/// Presence-at-present sampling and fossilization probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub rho: f64,
    pub sigma: f64,
}

impl SamplingSpec {
    pub fn new(rho: f64, sigma: f64) -> Self {
        Self { rho, sigma }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.rho) {
            out.push(Violation::new("rho", format!("{} not in [0, 1]", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            out.push(Violation::new(
                "sigma",
                format!("{} not in [0, 1]", self.sigma),
            ));
        }
        out
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }
}

/// Checks every invariant of `spec` and reports all violations.
pub fn validate(spec: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = spec.d;
    if d == 0 {
        out.push(Violation::new("d", "must be positive"));
        return out;
    }

    let vectors: [(&'static str, &Vec<f64>); 3] =
        [("lambda", &spec.lambda), ("mu", &spec.mu), ("r0", &spec.r0)];
    for (name, v) in vectors {
        if v.len() != d {
            out.push(Violation::new(name, format!("length {} != d = {d}", v.len())));
            continue;
        }
        for (i, &x) in v.iter().enumerate() {
            if !x.is_finite() {
                out.push(Violation::new(name, format!("entry {i} is not finite")));
            } else if x < 0.0 {
                out.push(Violation::new(name, format!("entry {i} = {x} is negative")));
            }
        }
    }
    if spec.r0.len() == d && spec.r0.iter().all(|&x| x == 0.0) {
        out.push(Violation::new("r0", "all entries are zero"));
    }

    let gamma_ok = check_square("gamma", &spec.gamma, d, &mut out);
    if gamma_ok {
        for (i, row) in spec.gamma.iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                out.push(Violation::new("gamma", format!("row {i} has non-finite entries")));
                continue;
            }
            for (j, &x) in row.iter().enumerate() {
                if i != j && x < 0.0 {
                    out.push(Violation::new(
                        "gamma",
                        format!("off-diagonal entry ({i}, {j}) = {x} is negative"),
                    ));
                }
            }
            if row[i] > 0.0 {
                out.push(Violation::new(
                    "gamma",
                    format!("diagonal entry {i} = {} is positive", row[i]),
                ));
            }
            let sum: f64 = row.iter().sum();
            let scale = row.iter().map(|x| x.abs()).fold(1.0, f64::max);
            if sum.abs() > ROW_SUM_TOL * scale {
                out.push(Violation::new(
                    "gamma",
                    format!("row {i} sums to {sum}, expected 0"),
                ));
            }
        }
    }

    if check_square("w", &spec.w, d, &mut out) {
        for (i, row) in spec.w.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    out.push(Violation::new("w", format!("entry ({i}, {j}) is not finite")));
                } else if x < 0.0 {
                    out.push(Violation::new(
                        "w",
                        format!("entry ({i}, {j}) = {x} is negative"),
                    ));
                }
            }
        }
    }

    let cap = spec.interaction_cap;
    if !(cap.is_finite() && cap > 0.0) {
        out.push(Violation::new(
            "interaction_cap",
            format!("{cap} is not a positive finite number"),
        ));
    } else if spec.r0.len() == d {
        let total: f64 = spec.r0.iter().sum();
        if cap <= total {
            out.push(Violation::new(
                "interaction_cap",
                format!("{cap} does not exceed sum(r0) = {total}"),
            ));
        }
    }
    out
}

fn check_square(
    name: &'static str,
    m: &[Vec<f64>],
    d: usize,
    out: &mut Vec<Violation>,
) -> bool {
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        out.push(Violation::new(name, format!("must be a {d}x{d} matrix")));
        false
    } else {
        true
    }
}

/// Death rates `mu + W r` with `r` rescaled to total `interaction_cap` when it
/// exceeds the cap.
pub fn mu_tilde(spec: &ModelSpec, r: &[f64]) -> Result<Vec<f64>, ModelError> {
    if r.len() != spec.d {
        return Err(ModelError::Dimension {
            expected: spec.d,
            got: r.len(),
        });
    }
    let mut out = vec![0.0; spec.d];
    spec.mu_tilde_into(r, &mut out);
    Ok(out)
}

//! Ready-made model configurations.
//!
//! The five-type presets share birth, death and type-change rates and differ
//! only in the interaction matrix, which is scaled to Frobenius norm 0.01.

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;

pub const FIGURE1_TYPES: usize = 5;
pub const FIGURE1_W_NORM: f64 = 0.01;

/// Shape of the interaction matrix `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// `W = 0`: supercritical growth.
    None,
    /// `W ∝ J`: carrying capacity.
    CarryingCapacity,
    /// `W ∝ I`: negative frequency-dependent selection.
    NegativeFrequency,
    /// `W ∝ J - 3/5 I`: positive frequency-dependent selection.
    PositiveFrequency,
}

impl Interaction {
    pub const ALL: [Interaction; 4] = [
        Interaction::None,
        Interaction::CarryingCapacity,
        Interaction::NegativeFrequency,
        Interaction::PositiveFrequency,
    ];

    pub const INTERACTING: [Interaction; 3] = [
        Interaction::CarryingCapacity,
        Interaction::NegativeFrequency,
        Interaction::PositiveFrequency,
    ];

    /// Unnormalized shape of `W` for `d` types.
    pub fn shape(self, d: usize) -> Vec<Vec<f64>> {
        let eye = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| match self {
                        Interaction::None => 0.0,
                        Interaction::CarryingCapacity => 1.0,
                        Interaction::NegativeFrequency => eye(i, j),
                        Interaction::PositiveFrequency => 1.0 - 0.6 * eye(i, j),
                    })
                    .collect()
            })
            .collect()
    }

    /// `shape(d)` scaled to Frobenius norm `norm` (zero stays zero).
    pub fn matrix(self, d: usize, norm: f64) -> Vec<Vec<f64>> {
        let m = self.shape(d);
        let f = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if f == 0.0 {
            return m;
        }
        m.into_iter()
            .map(|r| r.into_iter().map(|x| x * norm / f).collect())
            .collect()
    }
}

/// Toeplitz type-change rates: neighbours at rate `base`, halving with each
/// additional step of distance.
pub fn toeplitz_gamma(d: usize, base: f64) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; d]; d];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if i != j {
                *x = base * 0.5f64.powi(i.abs_diff(j) as i32 - 1);
            }
        }
        row[i] = -row.iter().sum::<f64>();
    }
    g
}

/// Five types, type 1 with an elevated birth rate, equal death rates,
/// Toeplitz mutation and one initial particle of type 1.
pub fn figure1(interaction: Interaction) -> ModelSpec {
    let d = FIGURE1_TYPES;
    let mut lambda = vec![1.0; d];
    lambda[0] = 1.2;
    let mut r0 = vec![0.0; d];
    r0[0] = 1.0;
    ModelSpec::new(
        lambda,
        vec![0.5; d],
        toeplitz_gamma(d, 0.1),
        interaction.matrix(d, FIGURE1_W_NORM),
        r0,
    )
}

/// Horizon used for the five-type examples.
pub const FIGURE1_TAU: f64 = 25.0;

/// Single type with logistic mean dynamics: `lambda = 2`, `mu = 1`,
/// `w = 0.01`, carrying capacity 100.
pub fn logistic() -> ModelSpec {
    ModelSpec::scalar(2.0, 1.0, 0.01, 1.0)
}

/// Closed-form logistic curve `K r0 e^{gt} / (K + r0 (e^{gt} - 1))`.
pub fn logistic_curve(g: f64, k: f64, r0: f64, t: f64) -> f64 {
    let e = (g * t).exp();
    k * r0 * e / (k + r0 * (e - 1.0))
}

/// Two interacting types used for ensemble studies.
pub fn two_type_interacting() -> ModelSpec {
    ModelSpec::new(
        vec![1.5, 1.0],
        vec![0.5, 0.5],
        vec![vec![0.0, 0.2], vec![0.2, 0.0]],
        vec![vec![0.04, 0.02], vec![0.02, 0.04]],
        vec![1.0, 1.0],
    )
}

//! Truncated forward equation for the law of one focal lineage.
//!
//! States are the count vectors `y` with `y_1 + ... + y_d <= kappa`, listed
//! in lexicographic order. A particle of type `i` gives birth at rate
//! `lambda_i`, dies at rate `mu_tilde_i(r)` and changes to type `k` at rate
//! `gamma[i][k]`, where `r` is the current first moment of the distribution
//! itself. States on the boundary `y_• = kappa` are absorbing.

use std::sync::Arc;

use thiserror::Error;

use crate::model::{ModelError, ModelSpec};
use crate::ode::{self, BandMatrix, DenseSolution, Jacobian, Method, OdeError, OdeSystem, Tolerances};

/// Default bound on the number of lattice states.
pub const DEFAULT_MAX_STATES: usize = 2_000_000;

const NONE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum MasterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("lattice with d={d}, kappa={kappa} has {states} states, above the limit {limit}; use kappa <= {suggested}")]
    LatticeTooLarge {
        d: usize,
        kappa: u32,
        states: u128,
        limit: usize,
        suggested: u32,
    },
    #[error("kappa must be positive")]
    InvalidKappa,
    #[error("invalid initial distribution: {0}")]
    InvalidInitial(String),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
}

/// `C(n + k, k)` in 128-bit arithmetic, saturating.
fn simplex_count(budget: u64, dims: usize) -> u128 {
    let mut c: u128 = 1;
    for j in 1..=dims as u128 {
        c = c.saturating_mul(budget as u128 + j) / j;
    }
    c
}

/// The states `{y in N^d : sum(y) <= kappa}`.
#[derive(Debug, Clone)]
pub struct TruncatedLattice {
    d: usize,
    kappa: u32,
    states: Vec<u32>,
    /// `counts[m][b]`: number of states in `m` dimensions with sum `<= b`.
    counts: Vec<Vec<u64>>,
    birth: Vec<u32>,
    death: Vec<u32>,
    /// `switch[(s * d + i) * d + k]`: state after one type-`i` particle
    /// becomes type `k`.
    switch: Vec<u32>,
}

impl TruncatedLattice {
    pub fn new(d: usize, kappa: u32) -> Result<Self, MasterError> {
        Self::with_limit(d, kappa, DEFAULT_MAX_STATES)
    }

    pub fn with_limit(d: usize, kappa: u32, limit: usize) -> Result<Self, MasterError> {
        if kappa == 0 {
            return Err(MasterError::InvalidKappa);
        }
        if d == 0 {
            return Err(ModelError::Dimension { expected: 1, got: 0 }.into());
        }
        let size = simplex_count(kappa as u64, d);
        if size > limit as u128 {
            let mut suggested = 0;
            while simplex_count(suggested as u64 + 1, d) <= limit as u128 {
                suggested += 1;
            }
            return Err(MasterError::LatticeTooLarge {
                d,
                kappa,
                states: size,
                limit,
                suggested,
            });
        }
        let n = size as usize;
        let counts = (0..=d)
            .map(|m| (0..=kappa as u64).map(|b| simplex_count(b, m) as u64).collect())
            .collect();

        let mut states = Vec::with_capacity(n * d);
        let mut y = vec![0u32; d];
        loop {
            states.extend_from_slice(&y);
            // next state in lexicographic order
            let total: u32 = y.iter().sum();
            if total < kappa {
                y[d - 1] += 1;
                continue;
            }
            let mut pos = d;
            while pos > 0 {
                pos -= 1;
                if pos == 0 {
                    break;
                }
                if y[pos] > 0 {
                    y[pos] = 0;
                    y[pos - 1] += 1;
                    break;
                }
            }
            if pos == 0 {
                break;
            }
            // after carrying, the new prefix sum is at most kappa
        }
        debug_assert_eq!(states.len(), n * d);

        let mut lattice = Self {
            d,
            kappa,
            states,
            counts,
            birth: vec![NONE; n * d],
            death: vec![NONE; n * d],
            switch: vec![NONE; n * d * d],
        };
        let mut z = vec![0u32; d];
        for s in 0..n {
            z.copy_from_slice(lattice.state(s));
            let total: u32 = z.iter().sum();
            for i in 0..d {
                if total < kappa {
                    z[i] += 1;
                    lattice.birth[s * d + i] = lattice.index(&z) as u32;
                    z[i] -= 1;
                }
                if z[i] > 0 {
                    z[i] -= 1;
                    lattice.death[s * d + i] = lattice.index(&z) as u32;
                    for k in 0..d {
                        if k != i {
                            z[k] += 1;
                            lattice.switch[(s * d + i) * d + k] = lattice.index(&z) as u32;
                            z[k] -= 1;
                        }
                    }
                    z[i] += 1;
                }
            }
        }
        Ok(lattice)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, s: usize) -> &[u32] {
        &self.states[s * self.d..(s + 1) * self.d]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u32]> {
        self.states.chunks_exact(self.d)
    }

    /// Position of `y` in the lexicographic enumeration.
    ///
    /// Panics if `y` is not in the lattice.
    pub fn index(&self, y: &[u32]) -> usize {
        self.try_index(y).expect("state outside the lattice")
    }

    pub fn try_index(&self, y: &[u32]) -> Option<usize> {
        if y.len() != self.d {
            return None;
        }
        let mut budget = self.kappa as u64;
        let mut idx = 0u64;
        for (pos, &v) in y.iter().enumerate() {
            let v = v as u64;
            if v > budget {
                return None;
            }
            let rest = &self.counts[self.d - pos - 1];
            // states whose entry here is smaller than v
            idx += (0..v).map(|u| rest[(budget - u) as usize]).sum::<u64>();
            budget -= v;
        }
        Some(idx as usize)
    }

    pub fn is_boundary(&self, s: usize) -> bool {
        self.state(s).iter().sum::<u32>() == self.kappa
    }

    /// Probability vector concentrated on `y`.
    pub fn point_mass(&self, y: &[u32]) -> Result<Vec<f64>, MasterError> {
        let s = self
            .try_index(y)
            .ok_or_else(|| MasterError::InvalidInitial(format!("{y:?} is outside the lattice")))?;
        let mut v = vec![0.0; self.len()];
        v[s] = 1.0;
        Ok(v)
    }

    /// `sum_y y v_y`.
    pub fn first_moment(&self, v: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.d];
        for (y, &p) in self.states().zip(v) {
            for (ri, &yi) in r.iter_mut().zip(y) {
                *ri += yi as f64 * p;
            }
        }
        r
    }

    /// Lower and upper bandwidths of the generator in this ordering.
    fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        let targets = self.birth.iter().enumerate().map(|(k, &t)| (k / self.d, t));
        let deaths = self.death.iter().enumerate().map(|(k, &t)| (k / self.d, t));
        let switches = self
            .switch
            .iter()
            .enumerate()
            .map(|(k, &t)| (k / (self.d * self.d), t));
        for (src, tgt) in targets.chain(deaths).chain(switches) {
            if tgt == NONE {
                continue;
            }
            let tgt = tgt as usize;
            if tgt > src {
                kl = kl.max(tgt - src);
            } else {
                ku = ku.max(src - tgt);
            }
        }
        (kl, ku)
    }
}

/// Settings for [`solve_master`].
#[derive(Debug, Clone, Copy)]
pub struct MasterOptions {
    pub tolerances: Tolerances,
    pub max_states: usize,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::new(1e-8, 1e-12),
            max_states: DEFAULT_MAX_STATES,
        }
    }
}

struct Forward<'a> {
    spec: &'a ModelSpec,
    lattice: &'a TruncatedLattice,
    /// `sum_{k != i} gamma[i][k]`.
    switch_out: Vec<f64>,
    bands: (usize, usize),
}

impl Forward<'_> {
    fn rates(&self, v: &[f64]) -> Vec<f64> {
        let r = self.lattice.first_moment(v);
        let mut mu = vec![0.0; self.spec.d];
        self.spec.mu_tilde_into(&r, &mut mu);
        mu
    }

    /// Calls `emit(source, target, rate)` for every transition, with
    /// `target == source` carrying minus the total outflow.
    fn for_each_transition(&self, mu: &[f64], mut emit: impl FnMut(usize, usize, f64)) {
        let lat = self.lattice;
        let d = lat.d;
        for s in 0..lat.len() {
            if lat.is_boundary(s) {
                continue;
            }
            let y = lat.state(s);
            let mut out = 0.0;
            for i in 0..d {
                if y[i] == 0 {
                    continue;
                }
                let n = y[i] as f64;
                let b = n * self.spec.lambda[i];
                let m = n * mu[i];
                emit(s, lat.birth[s * d + i] as usize, b);
                emit(s, lat.death[s * d + i] as usize, m);
                out += b + m + n * self.switch_out[i];
                for k in 0..d {
                    let g = self.spec.gamma[i][k];
                    if k != i && g != 0.0 {
                        emit(s, lat.switch[(s * d + i) * d + k] as usize, n * g);
                    }
                }
            }
            emit(s, s, -out);
        }
    }
}

impl OdeSystem for Forward<'_> {
    fn rhs(&self, _t: f64, v: &[f64], dv: &mut [f64]) {
        let mu = self.rates(v);
        dv.fill(0.0);
        self.for_each_transition(&mu, |s, t, rate| dv[t] += rate * v[s]);
    }

    /// Generator at the current moments; the dependence of the rates on the
    /// moments themselves is left out.
    fn jacobian(&self, _t: f64, v: &[f64]) -> Option<Jacobian> {
        let mu = self.rates(v);
        let (kl, ku) = self.bands;
        let mut j = BandMatrix::zeros(self.lattice.len(), kl, ku);
        self.for_each_transition(&mu, |s, t, rate| j.add(t, s, rate));
        Some(Jacobian::Banded(j))
    }
}

/// Solution of the truncated forward equation on `[0, tau]`.
#[derive(Debug, Clone)]
pub struct DistributionTrajectory {
    lattice: Arc<TruncatedLattice>,
    solution: DenseSolution,
}

impl DistributionTrajectory {
    pub fn lattice(&self) -> &TruncatedLattice {
        &self.lattice
    }

    pub fn horizon(&self) -> f64 {
        self.solution.t_end()
    }

    /// Accepted step times.
    pub fn knots(&self) -> &[f64] {
        self.solution.knots()
    }

    pub fn solution(&self) -> &DenseSolution {
        &self.solution
    }

    /// Distribution at time `t` (clamped to `[0, tau]`).
    pub fn at(&self, t: f64) -> Vec<f64> {
        self.solution.eval(t)
    }

    pub fn moments(&self, t: f64) -> Vec<f64> {
        self.lattice.first_moment(&self.at(t))
    }

    pub fn total_mass(&self, t: f64) -> f64 {
        self.at(t).iter().sum()
    }

    /// Mass on the absorbing boundary `y_• = kappa`.
    pub fn tail_mass(&self, t: f64) -> f64 {
        let v = self.at(t);
        (0..self.lattice.len())
            .filter(|&s| self.lattice.is_boundary(s))
            .map(|s| v[s])
            .sum()
    }
}

/// Probability of the state `y` at time `t`.
pub fn probability(traj: &DistributionTrajectory, y: &[u32], t: f64) -> f64 {
    match traj.lattice.try_index(y) {
        Some(s) => traj.solution.eval_component(t, s),
        None => 0.0,
    }
}

/// `sum_y y v_y(t)`.
pub fn moments(traj: &DistributionTrajectory, t: f64) -> Vec<f64> {
    traj.moments(t)
}

/// Solves the truncated forward equation from `v0` over `[0, tau]`.
pub fn solve_master(
    spec: &ModelSpec,
    v0: &[f64],
    kappa: u32,
    tau: f64,
    options: &MasterOptions,
) -> Result<DistributionTrajectory, MasterError> {
    spec.check()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(MasterError::InvalidHorizon(tau));
    }
    let lattice = TruncatedLattice::with_limit(spec.d, kappa, options.max_states)?;
    solve_on(spec, v0, Arc::new(lattice), tau, options)
}

/// As [`solve_master`], on an existing lattice.
pub fn solve_on(
    spec: &ModelSpec,
    v0: &[f64],
    lattice: Arc<TruncatedLattice>,
    tau: f64,
    options: &MasterOptions,
) -> Result<DistributionTrajectory, MasterError> {
    spec.check()?;
    if lattice.dim() != spec.d {
        return Err(ModelError::Dimension {
            expected: spec.d,
            got: lattice.dim(),
        }
        .into());
    }
    if v0.len() != lattice.len() {
        return Err(MasterError::InvalidInitial(format!(
            "expected {} probabilities, got {}",
            lattice.len(),
            v0.len()
        )));
    }
    if v0.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(MasterError::InvalidInitial("entries must be nonnegative".into()));
    }
    let mass: f64 = v0.iter().sum();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(MasterError::InvalidInitial(format!("entries sum to {mass}, not 1")));
    }
    let switch_out = (0..spec.d).map(|i| spec.type_change_rate(i)).collect();
    let sys = Forward {
        spec,
        lattice: &lattice,
        switch_out,
        bands: lattice.bandwidths(),
    };
    let solution = ode::integrate(&sys, v0, (0.0, tau), &options.tolerances, Method::Implicit)?;
    Ok(DistributionTrajectory { lattice, solution })
}

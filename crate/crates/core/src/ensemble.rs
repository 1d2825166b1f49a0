//! Exact simulation of `N` replicas coupled through their empirical mean.
//!
//! Every replica is a multi-type birth-death process. A type-`i` particle
//! gives birth at rate `lambda_i`, dies at rate `mu_tilde_i(S / N)` and
//! changes to type `k` at rate `gamma[i][k]`, where `S` holds the per-type
//! totals over all replicas. Events are drawn by the Gillespie algorithm
//! from a single random stream; the replica that fires is chosen through a
//! Fenwick tree per type.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec};
use crate::ode::Tolerances;
use crate::scf::{solve_moment_direct, ScfError};

/// Event budget used when none is given.
pub const DEFAULT_MAX_EVENTS: u64 = 500_000_000;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Moments(#[from] ScfError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("total event rate is not finite at t = {t}")]
    RateOverflow { t: f64 },
    #[error("event budget of {events} exhausted at t = {t}")]
    EventBudget { t: f64, events: u64 },
    #[error("invalid rates at state {state:?}: {reason}")]
    RateViolation { state: Vec<u64>, reason: String },
}

/// Initial configuration of the replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    /// Every replica starts in the same state.
    Shared(Vec<u64>),
    /// One state per replica.
    PerReplica(Vec<Vec<u64>>),
}

/// Settings for one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replicas: usize,
    pub tau: f64,
    pub initial: Initial,
    pub seed: u64,
    /// Recording times in `[0, tau]`, increasing.
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    /// Record the histogram of replica states at each checkpoint.
    #[serde(default)]
    pub histogram: bool,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

impl SimConfig {
    pub fn new(replicas: usize, tau: f64, initial: Initial, seed: u64, checkpoints: Vec<f64>) -> Self {
        Self {
            replicas,
            tau,
            initial,
            seed,
            checkpoints,
            max_events: DEFAULT_MAX_EVENTS,
            histogram: false,
        }
    }

    /// `points` equally spaced checkpoints from 0 to `tau`.
    pub fn uniform_checkpoints(tau: f64, points: usize) -> Vec<f64> {
        crate::quad::uniform_grid(0.0, tau, points.max(2))
    }

    fn initial_states(&self, d: usize) -> Result<Vec<Vec<u64>>, EnsembleError> {
        let bad = |m: String| Err(EnsembleError::InvalidConfig(m));
        if self.replicas == 0 {
            return bad("at least one replica is required".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.tau));
        }
        if self.checkpoints.iter().any(|&c| !(0.0..=self.tau).contains(&c)) {
            return bad("checkpoints must lie in [0, tau]".into());
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be increasing".into());
        }
        let states = match &self.initial {
            Initial::Shared(y) => vec![y.clone(); self.replicas],
            Initial::PerReplica(ys) => {
                if ys.len() != self.replicas {
                    return bad(format!("{} initial states for {} replicas", ys.len(), self.replicas));
                }
                ys.clone()
            }
        };
        if let Some(y) = states.iter().find(|y| y.len() != d) {
            return Err(ModelError::Dimension { expected: d, got: y.len() }.into());
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub birth: u64,
    pub death: u64,
    pub mutation: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.birth + self.death + self.mutation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    /// Empirical mean `S / N`.
    pub mean: Vec<f64>,
    /// Events up to and including `t`.
    pub events: EventCounts,
    /// Replica states with their multiplicities, when requested.
    pub histogram: Option<Vec<(Vec<u64>, u64)>>,
}

/// The empirical measure of the ensemble recorded at the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTrace {
    pub d: usize,
    pub replicas: usize,
    pub checkpoints: Vec<Checkpoint>,
}

impl EnsembleTrace {
    pub fn times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.t).collect()
    }
}

/// Prefix sums over nonnegative integer weights.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn from_weights(w: &[u64]) -> Self {
        let n = w.len();
        let mut tree = vec![0; n + 1];
        for (i, &x) in w.iter().enumerate() {
            tree[i + 1] += x;
            let j = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if j <= n {
                tree[j] += tree[i + 1];
            }
        }
        Self { tree }
    }

    fn add(&mut self, i: usize, delta: i64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] = self.tree[k].wrapping_add_signed(delta);
            k += k & k.wrapping_neg();
        }
    }

    /// Smallest `i` with `w[0] + ... + w[i] > u`.
    fn find(&self, mut u: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                pos = next;
                u -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

struct Ensemble<'a> {
    spec: &'a ModelSpec,
    n: usize,
    d: usize,
    counts: Vec<u64>,
    totals: Vec<u64>,
    index: Vec<Fenwick>,
    /// `sum_{k != i} gamma[i][k]`.
    switch_out: Vec<f64>,
    mu: Vec<f64>,
    mean: Vec<f64>,
}

impl<'a> Ensemble<'a> {
    fn new(spec: &'a ModelSpec, states: &[Vec<u64>]) -> Self {
        let n = states.len();
        let d = spec.d;
        let counts: Vec<u64> = states.concat();
        let totals = (0..d).map(|i| states.iter().map(|y| y[i]).sum()).collect();
        let index = (0..d)
            .map(|i| Fenwick::from_weights(&states.iter().map(|y| y[i]).collect::<Vec<_>>()))
            .collect();
        let switch_out = (0..d).map(|i| spec.type_change_rate(i)).collect();
        Self {
            spec,
            n,
            d,
            counts,
            totals,
            index,
            switch_out,
            mu: vec![0.0; d],
            mean: vec![0.0; d],
        }
    }

    /// Refreshes the death rates and returns the total event rate.
    fn total_rate(&mut self) -> f64 {
        for (m, &s) in self.mean.iter_mut().zip(&self.totals) {
            *m = s as f64 / self.n as f64;
        }
        self.spec.mu_tilde_into(&self.mean, &mut self.mu);
        rate_from_totals(self.spec, &self.totals, &self.mu, &self.switch_out)
    }

    fn bump(&mut self, replica: usize, i: usize, delta: i64) {
        let c = &mut self.counts[replica * self.d + i];
        *c = c.wrapping_add_signed(delta);
        self.totals[i] = self.totals[i].wrapping_add_signed(delta);
        self.index[i].add(replica, delta);
    }

    /// Recomputes the totals from the replica counts.
    fn rate_from_scratch(&self) -> f64 {
        let totals: Vec<u64> = (0..self.d)
            .map(|i| (0..self.n).map(|j| self.counts[j * self.d + i]).sum())
            .collect();
        let mean: Vec<f64> = totals.iter().map(|&s| s as f64 / self.n as f64).collect();
        let mut mu = vec![0.0; self.d];
        self.spec.mu_tilde_into(&mean, &mut mu);
        rate_from_totals(self.spec, &totals, &mu, &self.switch_out)
    }

    fn histogram(&self) -> Vec<(Vec<u64>, u64)> {
        let mut h = BTreeMap::new();
        for y in self.counts.chunks_exact(self.d) {
            *h.entry(y.to_vec()).or_insert(0) += 1;
        }
        h.into_iter().collect()
    }
}

fn rate_from_totals(spec: &ModelSpec, totals: &[u64], mu: &[f64], switch_out: &[f64]) -> f64 {
    totals
        .iter()
        .enumerate()
        .map(|(i, &s)| s as f64 * (spec.lambda[i] + mu[i] + switch_out[i]))
        .sum()
}

/// Picks an index with probability proportional to `weights` from a uniform
/// `u` in `[0, sum)`; zero weights are never picked.
fn pick(weights: impl IntoIterator<Item = f64>, mut u: f64) -> Option<usize> {
    let mut last = None;
    for (k, w) in weights.into_iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if u < w {
            return Some(k);
        }
        u -= w;
        last = Some(k);
    }
    // rounding can leave u just above the final partial sum
    last
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Records pending checkpoints before `t` (or at `t` when `inclusive`).
fn record_until(
    t: f64,
    inclusive: bool,
    pending: &mut std::iter::Peekable<std::slice::Iter<'_, f64>>,
    mut record: impl FnMut(f64),
) {
    while let Some(&&c) = pending.peek() {
        if c < t || (inclusive && c <= t) {
            record(c);
            pending.next();
        } else {
            break;
        }
    }
}

/// Simulates the ensemble with the moment-mediated rates of `spec`.
pub fn simulate(spec: &ModelSpec, config: &SimConfig) -> Result<EnsembleTrace, EnsembleError> {
    spec.check()?;
    let states = config.initial_states(spec.d)?;
    let mut ens = Ensemble::new(spec, &states);
    let mut rng = rng_for(config.seed);
    let d = spec.d;
    let mut events = EventCounts::default();
    let mut out = Vec::with_capacity(config.checkpoints.len());
    let mut pending = config.checkpoints.iter().peekable();
    let mut t = 0.0;

    loop {
        let rate = ens.total_rate();
        if !rate.is_finite() {
            return Err(EnsembleError::RateOverflow { t });
        }
        let next = if rate > 0.0 {
            t + rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
        let snapshot = |c: f64, ens: &Ensemble, events: EventCounts| Checkpoint {
            t: c,
            mean: ens.totals.iter().map(|&s| s as f64 / ens.n as f64).collect(),
            events,
            histogram: config.histogram.then(|| ens.histogram()),
        };
        if next > config.tau {
            record_until(config.tau, true, &mut pending, |c| out.push(snapshot(c, &ens, events)));
            break;
        }
        record_until(next, false, &mut pending, |c| out.push(snapshot(c, &ens, events)));
        if events.total() >= config.max_events {
            return Err(EnsembleError::EventBudget {
                t: next,
                events: config.max_events,
            });
        }
        t = next;

        // event kind: births, deaths and type changes of each type
        let u = rng.random::<f64>() * rate;
        let weights = (0..d).flat_map(|i| {
            let s = ens.totals[i] as f64;
            [s * spec.lambda[i], s * ens.mu[i], s * ens.switch_out[i]]
        });
        let Some(kind) = pick(weights, u) else {
            return Err(EnsembleError::RateOverflow { t });
        };
        let (i, kind) = (kind / 3, kind % 3);
        let replica = ens.index[i].find(rng.random_range(0..ens.totals[i]));
        match kind {
            0 => {
                ens.bump(replica, i, 1);
                events.birth += 1;
            }
            1 => {
                ens.bump(replica, i, -1);
                events.death += 1;
            }
            _ => {
                let u = rng.random::<f64>() * ens.switch_out[i];
                let k = pick((0..d).map(|k| if k == i { 0.0 } else { spec.gamma[i][k] }), u)
                    .expect("positive type-change rate");
                ens.bump(replica, i, -1);
                ens.bump(replica, k, 1);
                events.mutation += 1;
            }
        }
        if cfg!(debug_assertions) && events.total() % 1000 == 0 {
            let incremental = ens.total_rate();
            let fresh = ens.rate_from_scratch();
            debug_assert!(
                (incremental - fresh).abs() <= 1e-9 * fresh.abs().max(f64::MIN_POSITIVE),
                "total rate drifted: {incremental} vs {fresh}"
            );
        }
    }
    Ok(EnsembleTrace {
        d,
        replicas: config.replicas,
        checkpoints: out,
    })
}

/// Per-particle-state rates of one replica: `birth[i]`, `death[i]` and
/// `mutation[i][k]` are the rates of the transitions `y -> y + e_i`,
/// `y -> y - e_i` and `y -> y - e_i + e_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub birth: Vec<f64>,
    pub death: Vec<f64>,
    pub mutation: Vec<Vec<f64>>,
}

impl Rates {
    pub fn zeros(d: usize) -> Self {
        Self {
            birth: vec![0.0; d],
            death: vec![0.0; d],
            mutation: vec![vec![0.0; d]; d],
        }
    }

    fn validate(&self, y: &[u64]) -> Result<f64, EnsembleError> {
        let d = y.len();
        let fail = |reason: String| {
            Err(EnsembleError::RateViolation {
                state: y.to_vec(),
                reason,
            })
        };
        if self.birth.len() != d || self.death.len() != d || self.mutation.len() != d {
            return fail("rate vectors have the wrong length".into());
        }
        let mut total = 0.0;
        for i in 0..d {
            if self.mutation[i].len() != d {
                return fail("rate vectors have the wrong length".into());
            }
            let row = self.mutation[i].iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &m)| m);
            for r in [self.birth[i], self.death[i]].into_iter().chain(row) {
                if !(r >= 0.0 && r.is_finite()) {
                    return fail(format!("rate {r} for type {} is not finite and nonnegative", i + 1));
                }
                total += r;
            }
            if y[i] == 0 && (self.death[i] != 0.0 || self.mutation[i].iter().enumerate().any(|(k, &m)| k != i && m != 0.0)) {
                return fail(format!("death or type change of type {} from an empty count", i + 1));
            }
        }
        Ok(total)
    }
}

/// What a general rate function may depend on besides the replica's own
/// state.
#[derive(Debug)]
pub struct EmpiricalSummary<'a> {
    pub replicas: usize,
    /// Replica states with multiplicities.
    pub histogram: &'a BTreeMap<Vec<u64>, u64>,
    /// Empirical mean `S / N`.
    pub mean: &'a [f64],
}

/// Simulates the ensemble under arbitrary rates. All rates are recomputed
/// after every event, at a cost proportional to the number of distinct
/// replica states.
pub fn simulate_general<F>(d: usize, rates: F, config: &SimConfig) -> Result<EnsembleTrace, EnsembleError>
where
    F: Fn(&[u64], &EmpiricalSummary<'_>) -> Rates,
{
    if d == 0 {
        return Err(ModelError::Dimension { expected: 1, got: 0 }.into());
    }
    let states = config.initial_states(d)?;
    let n = config.replicas;
    let mut hist: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    for y in states {
        *hist.entry(y).or_insert(0) += 1;
    }
    let mut rng = rng_for(config.seed);
    let mut events = EventCounts::default();
    let mut out = Vec::with_capacity(config.checkpoints.len());
    let mut pending = config.checkpoints.iter().peekable();
    let mut t = 0.0;
    let mean_of = |h: &BTreeMap<Vec<u64>, u64>| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for (y, &c) in h {
            for (mi, &yi) in m.iter_mut().zip(y) {
                *mi += (yi * c) as f64;
            }
        }
        m.iter().map(|x| x / n as f64).collect()
    };

    loop {
        let mean = mean_of(&hist);
        let summary = EmpiricalSummary {
            replicas: n,
            histogram: &hist,
            mean: &mean,
        };
        let mut table = Vec::with_capacity(hist.len());
        let mut rate = 0.0;
        for (y, &mult) in &hist {
            let r = rates(y, &summary);
            let per_replica = r.validate(y)?;
            rate += per_replica * mult as f64;
            table.push((y.clone(), mult, r, per_replica));
        }
        if !rate.is_finite() {
            return Err(EnsembleError::RateOverflow { t });
        }
        let next = if rate > 0.0 {
            t + rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
        let snapshot = |c: f64, events: EventCounts| Checkpoint {
            t: c,
            mean: mean.clone(),
            events,
            histogram: config.histogram.then(|| hist.iter().map(|(y, &m)| (y.clone(), m)).collect()),
        };
        if next > config.tau {
            record_until(config.tau, true, &mut pending, |c| out.push(snapshot(c, events)));
            break;
        }
        record_until(next, false, &mut pending, |c| out.push(snapshot(c, events)));
        if events.total() >= config.max_events {
            return Err(EnsembleError::EventBudget {
                t: next,
                events: config.max_events,
            });
        }
        t = next;

        let u = rng.random::<f64>() * rate;
        let which = pick(table.iter().map(|e| e.3 * e.1 as f64), u).expect("positive total rate");
        let (y, _, r, per_replica) = &table[which];
        let u = rng.random::<f64>() * per_replica;
        let moves = (0..d).flat_map(|i| {
            let row = (0..d).map(move |k| if k == i { 0.0 } else { r.mutation[i][k] });
            [r.birth[i], r.death[i]].into_iter().chain(row)
        });
        let choice = pick(moves, u).expect("positive replica rate");
        let (i, slot) = (choice / (d + 2), choice % (d + 2));
        let mut z = y.clone();
        match slot {
            0 => {
                z[i] += 1;
                events.birth += 1;
            }
            1 => {
                z[i] -= 1;
                events.death += 1;
            }
            s => {
                z[i] -= 1;
                z[s - 2] += 1;
                events.mutation += 1;
            }
        }
        let m = hist.get_mut(y).expect("state present");
        *m -= 1;
        if *m == 0 {
            hist.remove(y);
        }
        *hist.entry(z).or_insert(0) += 1;
    }
    Ok(EnsembleTrace {
        d,
        replicas: n,
        checkpoints: out,
    })
}

/// The rates of `spec` in the form taken by [`simulate_general`].
pub fn moment_mediated_rates(spec: &ModelSpec) -> impl Fn(&[u64], &EmpiricalSummary<'_>) -> Rates + '_ {
    move |y, summary| {
        let d = spec.d;
        let mut mu = vec![0.0; d];
        spec.mu_tilde_into(summary.mean, &mut mu);
        let mut r = Rates::zeros(d);
        for i in 0..d {
            let n = y[i] as f64;
            r.birth[i] = n * spec.lambda[i];
            r.death[i] = n * mu[i];
            for k in 0..d {
                if k != i {
                    r.mutation[i][k] = n * spec.gamma[i][k];
                }
            }
        }
        r
    }
}

/// One row of [`convergence_study`].
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub replicas: usize,
    /// Mean over seeds of `max_t max_i |S_i(t)/N - r_i(t)|`.
    pub sup_error: f64,
    /// Monte-Carlo standard error of `sup_error`.
    pub sup_error_se: f64,
    /// Mean over seeds of the empirical mean at each checkpoint.
    pub pooled_mean: Vec<Vec<f64>>,
    /// Standard error of `pooled_mean`.
    pub pooled_se: Vec<Vec<f64>>,
    /// Solution of the moment equation at each checkpoint.
    pub reference: Vec<Vec<f64>>,
}

impl StudyRow {
    /// Largest `|pooled_mean - reference| / pooled_se` over checkpoints and
    /// types; entries with zero standard error count only if they differ.
    pub fn max_z(&self) -> f64 {
        let mut z: f64 = 0.0;
        for ((m, s), r) in self.pooled_mean.iter().zip(&self.pooled_se).zip(&self.reference) {
            for ((m, s), r) in m.iter().zip(s).zip(r) {
                let diff = (m - r).abs();
                z = z.max(if *s > 0.0 {
                    diff / s
                } else if diff > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                });
            }
        }
        z
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Compares ensembles of increasing size with the moment equation.
///
/// Every replica starts from `spec.r0`, which must be a vector of
/// integers. Run `s` for ensemble size `N` uses seed
/// `base_seed + s`; runs are distributed over the rayon pool and the
/// result does not depend on the number of threads.
pub fn convergence_study(
    spec: &ModelSpec,
    sizes: &[usize],
    tau: f64,
    seeds: usize,
    checkpoints: &[f64],
    base_seed: u64,
) -> Result<Vec<StudyRow>, EnsembleError> {
    spec.check()?;
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EnsembleError::InvalidConfig("ensemble sizes must be increasing".into()));
    }
    if seeds == 0 {
        return Err(EnsembleError::InvalidConfig("at least one seed is required".into()));
    }
    if spec.r0.iter().any(|&x| x.fract() != 0.0 || x < 0.0) {
        return Err(EnsembleError::InvalidConfig("r0 must be a vector of counts".into()));
    }
    let y0: Vec<u64> = spec.r0.iter().map(|&x| x as u64).collect();
    let reference_traj = solve_moment_direct(spec, tau, &Tolerances::new(1e-10, 1e-12))?;
    let reference: Vec<Vec<f64>> = checkpoints.iter().map(|&t| reference_traj.eval(t)).collect();

    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let traces: Vec<EnsembleTrace> = (0..seeds as u64)
            .into_par_iter()
            .map(|s| {
                let config = SimConfig::new(n, tau, Initial::Shared(y0.clone()), base_seed.wrapping_add(s), checkpoints.to_vec());
                simulate(spec, &config)
            })
            .collect::<Result<_, _>>()?;
        let sups: Vec<f64> = traces
            .iter()
            .map(|tr| {
                tr.checkpoints
                    .iter()
                    .zip(&reference)
                    .flat_map(|(c, r)| c.mean.iter().zip(r).map(|(a, b)| (a - b).abs()))
                    .fold(0.0, f64::max)
            })
            .collect();
        let (sup_error, sup_error_se) = mean_and_se(&sups);
        let mut pooled_mean = vec![vec![0.0; spec.d]; checkpoints.len()];
        let mut pooled_se = vec![vec![0.0; spec.d]; checkpoints.len()];
        for c in 0..checkpoints.len() {
            for i in 0..spec.d {
                let xs: Vec<f64> = traces.iter().map(|tr| tr.checkpoints[c].mean[i]).collect();
                (pooled_mean[c][i], pooled_se[c][i]) = mean_and_se(&xs);
            }
        }
        rows.push(StudyRow {
            replicas: n,
            sup_error,
            sup_error_se,
            pooled_mean,
            pooled_se,
            reference: reference.clone(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;

use std::sync::Arc;

use crate::ode::DenseSolution;
use crate::quad;

/// A continuous, vector-valued function of time on `[t_start, t_end]`.
///
/// Used both as the external field fed to the moment map and as the
/// moment trajectory it returns. Evaluations are clamped at zero, since
/// every field here is a vector of expected counts.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    t_start: f64,
    t_end: f64,
    d: usize,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Constant(Vec<f64>),
    Dense(Arc<DenseSolution>),
    /// Pointwise mean of two fields.
    Average(Arc<FieldTrajectory>, Arc<FieldTrajectory>),
    /// Piecewise-linear through `(times[k], values[k*d..(k+1)*d])`.
    Samples { times: Vec<f64>, values: Vec<f64> },
    /// Fields on consecutive windows; window `k` starts at `starts[k]`.
    Concat {
        starts: Vec<f64>,
        parts: Vec<FieldTrajectory>,
    },
}

impl FieldTrajectory {
    pub fn constant(value: Vec<f64>, t_start: f64, t_end: f64) -> Self {
        Self {
            t_start,
            t_end,
            d: value.len(),
            repr: Repr::Constant(value),
        }
    }

    pub fn from_dense(sol: DenseSolution) -> Self {
        Self {
            t_start: sol.t_start(),
            t_end: sol.t_end(),
            d: sol.dim(),
            repr: Repr::Dense(Arc::new(sol)),
        }
    }

    /// Piecewise-linear interpolant through samples; reproduces the samples
    /// exactly at their times.
    ///
    /// Panics unless `times` is strictly increasing with at least two
    /// entries and every row has the same length.
    pub fn from_samples(times: Vec<f64>, rows: &[Vec<f64>]) -> Self {
        assert!(times.len() >= 2 && times.len() == rows.len());
        assert!(times.windows(2).all(|w| w[0] < w[1]), "times must increase");
        let d = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == d));
        Self {
            t_start: times[0],
            t_end: *times.last().unwrap(),
            d,
            repr: Repr::Samples {
                times,
                values: rows.concat(),
            },
        }
    }

    /// `(a + b) / 2`. Both fields must share domain and dimension.
    pub fn average(a: FieldTrajectory, b: FieldTrajectory) -> Self {
        assert_eq!(a.d, b.d);
        Self {
            t_start: a.t_start,
            t_end: a.t_end,
            d: a.d,
            repr: Repr::Average(Arc::new(a), Arc::new(b)),
        }
    }

    /// Joins fields on abutting windows into one field.
    pub fn concat(parts: Vec<FieldTrajectory>) -> Self {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts.into_iter().next().unwrap();
        }
        let d = parts[0].d;
        assert!(parts.iter().all(|p| p.d == d));
        Self {
            t_start: parts[0].t_start,
            t_end: parts.last().unwrap().t_end,
            d,
            repr: Repr::Concat {
                starts: parts.iter().map(|p| p.t_start).collect(),
                parts,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Horizon length `t_end - t_start`.
    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Underlying ODE solution, when the field is a single dense solve.
    pub fn dense(&self) -> Option<&DenseSolution> {
        match &self.repr {
            Repr::Dense(s) => Some(s),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        self.eval_raw(t, out);
        for x in out.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }

    /// Evaluation without the clamp at zero.
    pub fn eval_raw(&self, t: f64, out: &mut [f64]) {
        let t = t.clamp(self.t_start, self.t_end);
        match &self.repr {
            Repr::Constant(v) => out.copy_from_slice(v),
            Repr::Dense(s) => s.eval_into(t, out),
            Repr::Average(a, b) => {
                a.eval_raw(t, out);
                let mut tmp = vec![0.0; self.d];
                b.eval_raw(t, &mut tmp);
                for (o, x) in out.iter_mut().zip(tmp) {
                    *o = 0.5 * (*o + x);
                }
            }
            Repr::Samples { times, values } => {
                let d = self.d;
                let k = times.partition_point(|&x| x <= t).max(1) - 1;
                if times[k] == t || k + 1 == times.len() {
                    out.copy_from_slice(&values[k * d..(k + 1) * d]);
                } else {
                    let w = (t - times[k]) / (times[k + 1] - times[k]);
                    for i in 0..d {
                        let a = values[k * d + i];
                        let b = values[(k + 1) * d + i];
                        out[i] = a + w * (b - a);
                    }
                }
            }
            Repr::Concat { starts, parts } => {
                let k = starts.partition_point(|&s| s <= t).max(1) - 1;
                parts[k].eval_raw(t, out);
            }
        }
    }

    /// Values on a uniform grid of `points` nodes; returns `(times, rows)`.
    pub fn sample_grid(&self, points: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let times = quad::uniform_grid(self.t_start, self.t_end, points);
        let rows = times.iter().map(|&t| self.eval(t)).collect();
        (times, rows)
    }

    /// Final value.
    pub fn terminal(&self) -> Vec<f64> {
        self.eval(self.t_end)
    }
}

/// `sum_i || a_i - b_i ||_2` over `[a.t_start, a.t_end]`, each L² norm by
/// the trapezoid rule on a uniform grid of `points` nodes.
pub fn l2_residual(a: &FieldTrajectory, b: &FieldTrajectory, points: usize) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let d = a.dim();
    let grid = quad::uniform_grid(a.t_start(), a.t_end(), points);
    let mut sq = vec![vec![0.0; grid.len()]; d];
    let mut va = vec![0.0; d];
    let mut vb = vec![0.0; d];
    for (k, &t) in grid.iter().enumerate() {
        a.eval_into(t, &mut va);
        b.eval_into(t, &mut vb);
        for i in 0..d {
            let diff = va[i] - vb[i];
            sq[i][k] = diff * diff;
        }
    }
    sq.iter().map(|s| quad::trapezoid(&grid, s).sqrt()).sum()
}

/// Largest componentwise absolute difference on a uniform grid.
pub fn sup_distance(a: &FieldTrajectory, b: &FieldTrajectory, points: usize) -> f64 {
    let grid = quad::uniform_grid(a.t_start(), a.t_end(), points);
    grid.iter()
        .map(|&t| {
            a.eval(t)
                .iter()
                .zip(b.eval(t))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Continuous solution produced by [`integrate`](super::integrate).
///
/// Values at accepted step knots are stored exactly; between knots the
/// solution is interpolated with the integrator's own continuous extension
/// (fourth order for Dormand–Prince, cubic Hermite for the SDIRK).
#[derive(Debug, Clone)]
pub struct DenseSolution {
    n: usize,
    knots: Vec<f64>,
    /// `knots.len() * n` values.
    ys: Vec<f64>,
    interp: Interp,
    pub(crate) stats: Stats,
}

#[derive(Debug, Clone)]
enum Interp {
    /// Derivatives at knots, `knots.len() * n`.
    Hermite { fs: Vec<f64> },
    /// Three Dormand–Prince continuous-extension vectors per step.
    Dopri { coeffs: Vec<f64> },
}

/// Step counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl DenseSolution {
    pub(crate) fn hermite(t0: f64, y0: &[f64], f0: &[f64]) -> Self {
        Self {
            n: y0.len(),
            knots: vec![t0],
            ys: y0.to_vec(),
            interp: Interp::Hermite { fs: f0.to_vec() },
            stats: Stats::default(),
        }
    }

    pub(crate) fn dopri(t0: f64, y0: &[f64]) -> Self {
        Self {
            n: y0.len(),
            knots: vec![t0],
            ys: y0.to_vec(),
            interp: Interp::Dopri { coeffs: Vec::new() },
            stats: Stats::default(),
        }
    }

    pub(crate) fn push_hermite(&mut self, t: f64, y: &[f64], f: &[f64]) {
        self.knots.push(t);
        self.ys.extend_from_slice(y);
        match &mut self.interp {
            Interp::Hermite { fs } => fs.extend_from_slice(f),
            Interp::Dopri { .. } => unreachable!("hermite push on dopri solution"),
        }
    }

    /// `c` holds the three continuous-extension vectors of the step.
    pub(crate) fn push_dopri(&mut self, t: f64, y: &[f64], c: &[f64]) {
        debug_assert_eq!(c.len(), 3 * self.n);
        self.knots.push(t);
        self.ys.extend_from_slice(y);
        match &mut self.interp {
            Interp::Dopri { coeffs } => coeffs.extend_from_slice(c),
            Interp::Hermite { .. } => unreachable!("dopri push on hermite solution"),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_start(&self) -> f64 {
        self.knots[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.knots.last().expect("at least one knot")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn y_at_knot(&self, k: usize) -> &[f64] {
        &self.ys[k * self.n..(k + 1) * self.n]
    }

    pub fn last(&self) -> &[f64] {
        self.y_at_knot(self.knots.len() - 1)
    }

    /// Step index `k` such that `knots[k] <= t < knots[k + 1]`, or an exact
    /// knot hit.
    fn locate(&self, t: f64) -> Located {
        let t = t.clamp(self.t_start(), self.t_end());
        let k = self.knots.partition_point(|&x| x <= t);
        // knots[k - 1] <= t < knots[k]
        let k = k.max(1) - 1;
        if self.knots[k] == t {
            return Located::Knot(k);
        }
        let h = self.knots[k + 1] - self.knots[k];
        Located::Step(k, (t - self.knots[k]) / h, h)
    }

    /// Evaluates the solution at `t`, clamped into `[t_start, t_end]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert!(
            t >= self.t_start() - 1e-9 * self.t_end().abs().max(1.0)
                && t <= self.t_end() + 1e-9 * self.t_end().abs().max(1.0),
            "t = {t} outside [{}, {}]",
            self.t_start(),
            self.t_end()
        );
        match self.locate(t) {
            Located::Knot(k) => out.copy_from_slice(self.y_at_knot(k)),
            Located::Step(k, theta, h) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = self.interp_component(k, theta, h, i);
                }
            }
        }
    }

    pub fn eval_component(&self, t: f64, i: usize) -> f64 {
        match self.locate(t) {
            Located::Knot(k) => self.y_at_knot(k)[i],
            Located::Step(k, theta, h) => self.interp_component(k, theta, h, i),
        }
    }

    #[inline]
    fn interp_component(&self, k: usize, theta: f64, h: f64, i: usize) -> f64 {
        let n = self.n;
        let y0 = self.ys[k * n + i];
        let y1 = self.ys[(k + 1) * n + i];
        match &self.interp {
            Interp::Hermite { fs } => {
                let f0 = fs[k * n + i];
                let f1 = fs[(k + 1) * n + i];
                let t2 = theta * theta;
                let t3 = t2 * theta;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + theta;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
            }
            Interp::Dopri { coeffs } => {
                let base = k * 3 * n;
                let c3 = coeffs[base + i];
                let c4 = coeffs[base + n + i];
                let c5 = coeffs[base + 2 * n + i];
                let t1 = 1.0 - theta;
                y0 + theta * ((y1 - y0) + t1 * (c3 + theta * (c4 + t1 * c5)))
            }
        }
    }
}

enum Located {
    Knot(usize),
    Step(usize, f64, f64),
}

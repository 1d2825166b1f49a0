//! L-stable, stiffly accurate SDIRK of order 4 with an embedded order-3
//! solution (Hairer & Wanner, "SDIRK4", gamma = 1/4).

use nalgebra::{DMatrix, DVector};

use super::band::BandLu;
use super::{
    eval_rhs, initial_step, scaled_max_norm, scaled_rms, underflow, DenseSolution, IController,
    Jacobian, OdeError, OdeSystem, Tolerances,
};

const STAGES: usize = 5;
const GAMMA: f64 = 0.25;
const C: [f64; STAGES] = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
const A: [[f64; STAGES]; STAGES] = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.25, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
];
/// Order-4 weights (equal to the last row of `A`) minus the embedded
/// order-3 weights `[59/48, -17/96, 225/32, -85/12, 0]`.
const E: [f64; STAGES] = [
    25.0 / 24.0 - 59.0 / 48.0,
    -49.0 / 48.0 + 17.0 / 96.0,
    125.0 / 16.0 - 225.0 / 32.0,
    0.0,
    0.25,
];

const NEWTON_MAX_ITERS: usize = 10;
const NEWTON_TOL: f64 = 1e-2;
/// A stage needing more Newton iterations than this triggers a new
/// Jacobian after the step.
const SLOW_NEWTON_ITERS: usize = 3;
/// Step-size increases up to this ratio are skipped so that the current
/// factorization can be reused.
const KEEP_STEP_RATIO: f64 = 1.2;
const MAX_HOLDS: usize = 3;

enum Factor {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Band(BandLu),
}

impl Factor {
    fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            Factor::Dense(lu) => {
                let mut v = DVector::from_column_slice(b);
                if lu.solve_mut(&mut v) {
                    b.copy_from_slice(v.as_slice());
                }
            }
            Factor::Band(lu) => lu.solve_in_place(b),
        }
    }
}

fn finite_difference_jacobian<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    f: &[f64],
) -> Result<DMatrix<f64>, OdeError> {
    let n = y.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; n];
    for j in 0..n {
        let delta = f64::EPSILON.sqrt() * y[j].abs().max(1e-5);
        yp[j] = y[j] + delta;
        eval_rhs(sys, t, &yp, &mut fp)?;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - f[i]) / delta;
        }
        yp[j] = y[j];
    }
    Ok(jac)
}

/// Factorizes `I - h*gamma*J`.
fn iteration_matrix(jac: &Jacobian, hg: f64, t: f64) -> Result<Factor, OdeError> {
    match jac {
        Jacobian::Dense(j) => {
            let n = j.nrows();
            let m = DMatrix::identity(n, n) - j * hg;
            let lu = m.lu();
            if !lu.is_invertible() {
                return Err(OdeError::Singular { t });
            }
            Ok(Factor::Dense(lu))
        }
        Jacobian::Banded(b) => {
            let mut m = b.clone();
            m.make_iteration_matrix(hg);
            Ok(Factor::Band(m.factorize(t)?))
        }
    }
}

pub(super) fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    t_end: f64,
    tol: &Tolerances,
) -> Result<DenseSolution, OdeError> {
    let n = y0.len();
    let ctrl = IController::new(3);

    let mut y = y0.to_vec();
    let mut f0 = vec![0.0; n];
    eval_rhs(sys, t0, &y, &mut f0)?;
    let mut sol = DenseSolution::hermite(t0, &y, &f0);
    let mut h = initial_step(sys, t0, &y, &f0, t_end, 3, tol)?;
    sol.stats.rhs_evals += 2;

    let mut k = vec![vec![0.0; n]; STAGES];
    let mut base = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut fz = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut f_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut t = t0;
    let mut rejected_last = false;
    let mut jac: Option<Jacobian> = None;
    // whether `jac` was evaluated at the current (t, y)
    let mut jac_fresh = false;
    let mut lu: Option<(Factor, f64)> = None;
    let mut held = 0;

    while t < t_end {
        if sol.stats.accepted + sol.stats.rejected >= tol.max_steps {
            return Err(OdeError::StepLimit {
                t,
                max_steps: tol.max_steps,
            });
        }
        let last = t + h >= t_end || t_end - (t + h) < 1e-12 * t_end.abs().max(1.0);
        if last {
            h = t_end - t;
        }
        if underflow(t, h) {
            return Err(OdeError::StepSizeUnderflow { t });
        }

        let j = match &jac {
            Some(j) => j,
            None => {
                lu = None;
                jac_fresh = true;
                jac.insert(match sys.jacobian(t, &y) {
                    Some(j) => j,
                    None => Jacobian::Dense(finite_difference_jacobian(sys, t, &y, &f0)?),
                })
            }
        };
        let hg = h * GAMMA;
        if !matches!(lu, Some((_, h_lu)) if h_lu == h) {
            lu = Some((iteration_matrix(j, hg, t)?, h));
        }
        let (lu_ref, _) = lu.as_ref().expect("factorized above");

        let mut converged = true;
        let mut slow = false;
        for s in 0..STAGES {
            let ts = t + C[s] * h;
            for i in 0..n {
                let mut acc = 0.0;
                for (r, kr) in k.iter().enumerate().take(s) {
                    acc += A[s][r] * kr[i];
                }
                base[i] = y[i] + h * acc;
                let guess = if s == 0 { f0[i] } else { k[s - 1][i] };
                z[i] = base[i] + hg * guess;
            }
            let mut prev_norm = f64::INFINITY;
            let mut ok = false;
            for iter in 0..NEWTON_MAX_ITERS {
                eval_rhs(sys, ts, &z, &mut fz)?;
                sol.stats.rhs_evals += 1;
                for i in 0..n {
                    delta[i] = -(z[i] - base[i] - hg * fz[i]);
                }
                lu_ref.solve_in_place(&mut delta);
                for i in 0..n {
                    z[i] += delta[i];
                }
                let norm = scaled_rms(&delta, &z, tol);
                if !norm.is_finite() {
                    break;
                }
                slow |= iter >= SLOW_NEWTON_ITERS;
                if iter == 0 {
                    if norm <= 1e-3 * NEWTON_TOL {
                        ok = true;
                        break;
                    }
                } else {
                    let rate = norm / prev_norm;
                    if rate >= 1.0 {
                        break;
                    }
                    if rate / (1.0 - rate) * norm <= NEWTON_TOL {
                        ok = true;
                        break;
                    }
                }
                prev_norm = norm;
            }
            if !ok {
                converged = false;
                break;
            }
            for i in 0..n {
                k[s][i] = (z[i] - base[i]) / hg;
            }
        }

        if !converged {
            sol.stats.rejected += 1;
            rejected_last = true;
            if jac_fresh {
                h *= 0.25;
            } else {
                // retry with a Jacobian at the current point first
                jac = None;
            }
            continue;
        }

        // stiffly accurate: the last stage is the solution
        y_new.copy_from_slice(&z);
        for i in 0..n {
            err[i] = h * (0..STAGES).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        lu_ref.solve_in_place(&mut err);
        let e = scaled_max_norm(&err, &y, &y_new, tol);
        if e.is_nan() {
            return Err(OdeError::NonFinite { t });
        }

        if e <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            eval_rhs(sys, t_new, &y_new, &mut f_new)?;
            sol.stats.rhs_evals += 1;
            sol.push_hermite(t_new, &y_new, &f_new);
            sol.stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut f0, &mut f_new);
            let h_new = h * ctrl.factor(e, rejected_last);
            // small increases are not worth a new factorization, unless
            // they keep being proposed
            if (1.0..=KEEP_STEP_RATIO).contains(&(h_new / h)) && held < MAX_HOLDS {
                held += 1;
            } else {
                held = 0;
                h = h_new;
            }
            rejected_last = false;
            jac_fresh = false;
            if slow {
                jac = None;
            }
        } else {
            sol.stats.rejected += 1;
            h *= ctrl.factor(e, true);
            rejected_last = true;
        }
    }
    Ok(sol)
}

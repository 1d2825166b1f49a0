//! Dormand–Prince 5(4) with the Shampine continuous extension.

use super::{
    eval_rhs, initial_step, scaled_max_norm, underflow, DenseSolution, IController, OdeError,
    OdeSystem, Tolerances,
};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub(super) fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    t_end: f64,
    tol: &Tolerances,
) -> Result<DenseSolution, OdeError> {
    let n = y0.len();
    let ctrl = IController::new(4);
    let mut sol = DenseSolution::dopri(t0, y0);

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    eval_rhs(sys, t0, &y, &mut k1)?;
    let mut h = initial_step(sys, t0, &y, &k1, t_end, 4, tol)?;
    sol.stats.rhs_evals += 2;

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut cont = vec![0.0; 3 * n];
    let mut t = t0;
    let mut rejected_last = false;

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

        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        eval_rhs(sys, t + C2 * h, &stage, &mut k2)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        eval_rhs(sys, t + C3 * h, &stage, &mut k3)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        eval_rhs(sys, t + C4 * h, &stage, &mut k4)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        eval_rhs(sys, t + C5 * h, &stage, &mut k5)?;
        for i in 0..n {
            stage[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t_end } else { t + h };
        eval_rhs(sys, t_new, &stage, &mut k6)?;
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        eval_rhs(sys, t_new, &y_new, &mut k7)?;
        sol.stats.rhs_evals += 6;

        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = scaled_max_norm(&err, &y, &y_new, tol);
        if e.is_nan() {
            return Err(OdeError::NonFinite { t });
        }

        if e <= 1.0 {
            for i in 0..n {
                let dy = y_new[i] - y[i];
                let bspl = h * k1[i] - dy;
                cont[i] = bspl;
                cont[n + i] = dy - h * k7[i] - bspl;
                cont[2 * n + i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                        + D7 * k7[i]);
            }
            sol.push_dopri(t_new, &y_new, &cont);
            sol.stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            h *= ctrl.factor(e, rejected_last);
            rejected_last = false;
        } else {
            sol.stats.rejected += 1;
            h *= ctrl.factor(e, true);
            rejected_last = true;
        }
    }
    Ok(sol)
}

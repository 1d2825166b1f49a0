use super::*;

fn both() -> [Method; 2] {
    [Method::Explicit, Method::Implicit]
}

/// Scaling-and-squaring Taylor exponential, used only as an oracle.
fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm = a
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    let mul = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum())
                    .collect()
            })
            .collect()
    };
    let scaled: Vec<Vec<f64>> = a
        .iter()
        .map(|r| r.iter().map(|x| x * scale).collect())
        .collect();
    let mut result: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..30 {
        term = mul(&term, &scaled);
        for r in term.iter_mut() {
            for x in r.iter_mut() {
                *x /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mul(&result, &result);
    }
    result
}

#[test]
fn zero_field_is_constant() {
    for m in both() {
        let sol = integrate(&|_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0, &[2.0], (0.0, 1.0), &Tolerances::default(), m)
            .unwrap();
        for t in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(sol.eval(t), vec![2.0]);
        }
    }
}

#[test]
fn exponential_decay() {
    for m in both() {
        let tol = Tolerances::new(1e-8, 1e-10);
        let sol = integrate(&|_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], &[1.0], (0.0, 1.0), &tol, m).unwrap();
        let got = sol.eval(1.0)[0];
        assert!((got - (-1.0f64).exp()).abs() < 1e-7, "{m:?}: {got}");
    }
}

#[test]
fn logistic_closed_form() {
    let exact = |t: f64| 1.0 / (1.0 + 9.0 * (-t).exp());
    for m in both() {
        let sol = integrate(
            &|_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * (1.0 - y[0]),
            &[0.1],
            (0.0, 5.0),
            &Tolerances::default(),
            m,
        )
        .unwrap();
        assert!((sol.eval(5.0)[0] - exact(5.0)).abs() < 1e-6);
        for i in 0..=50 {
            let t = 0.1 * i as f64;
            assert!((sol.eval(t)[0] - exact(t)).abs() < 1e-6, "{m:?} t={t}");
        }
    }
}

#[test]
fn linear_system_matches_matrix_exponential() {
    let a = vec![
        vec![-1.0, 0.5, 0.0],
        vec![0.2, -0.7, 0.3],
        vec![0.1, 0.0, 0.4],
    ];
    let y0 = [1.0, 2.0, 0.5];
    let t1 = 2.0;
    let e = expm(
        &a.iter()
            .map(|r| r.iter().map(|x| x * t1).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    let exact: Vec<f64> = (0..3).map(|i| (0..3).map(|j| e[i][j] * y0[j]).sum()).collect();
    let tol = Tolerances::default();
    for m in both() {
        let a = a.clone();
        let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
            for i in 0..3 {
                dy[i] = (0..3).map(|j| a[i][j] * y[j]).sum();
            }
        };
        let sol = integrate(&rhs, &y0, (0.0, t1), &tol, m).unwrap();
        let got = sol.last();
        for i in 0..3 {
            let bound = 10.0 * (tol.atol + tol.rtol * exact[i].abs());
            assert!((got[i] - exact[i]).abs() <= bound, "{m:?} {i}: {} vs {}", got[i], exact[i]);
        }
    }
}

#[test]
fn forward_then_backward_returns_to_start() {
    let f = |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -y[0] + 0.1 * t.sin();
    };
    let g = |t: f64, y: &[f64], dy: &mut [f64]| {
        // negated field in reversed time s = 2 - t
        f(2.0 - t, y, dy);
        dy[0] = -dy[0];
        dy[1] = -dy[1];
    };
    let tol = Tolerances::default();
    let y0 = [1.0, 0.0];
    for m in both() {
        let fwd = integrate(&f, &y0, (0.0, 2.0), &tol, m).unwrap();
        let back = integrate(&g, fwd.last(), (0.0, 2.0), &tol, m).unwrap();
        for i in 0..2 {
            let bound = 100.0 * (tol.atol + tol.rtol * y0[i].abs().max(1.0));
            assert!((back.last()[i] - y0[i]).abs() <= bound, "{m:?}");
        }
    }
}

#[test]
fn dense_midpoints_agree_with_half_step_reintegration() {
    let f = |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = -0.5 * y[0] + y[1];
        dy[1] = -y[0] * (1.0 + 0.2 * t.cos());
    };
    let tol = Tolerances::default();
    for m in both() {
        let sol = integrate(&f, &[1.0, 0.5], (0.0, 6.0), &tol, m).unwrap();
        let knots = sol.knots();
        for w in knots.windows(2).take(40) {
            let mid = 0.5 * (w[0] + w[1]);
            let start = sol.eval(w[0]);
            let tight = Tolerances::new(1e-12, 1e-14);
            let half = integrate(&f, &start, (w[0], mid), &tight, Method::Explicit).unwrap();
            let dense = sol.eval(mid);
            for i in 0..2 {
                let bound = 10.0 * (tol.atol + tol.rtol * dense[i].abs());
                assert!(
                    (dense[i] - half.last()[i]).abs() <= bound,
                    "{m:?} at {mid}: {} vs {}",
                    dense[i],
                    half.last()[i]
                );
            }
        }
    }
}

#[test]
fn knots_reproduce_stored_values() {
    let sol = integrate(
        &|_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0].cos(),
        &[0.3],
        (0.0, 3.0),
        &Tolerances::default(),
        Method::Explicit,
    )
    .unwrap();
    assert!(sol.knots().windows(2).all(|w| w[0] < w[1]));
    assert_eq!(sol.t_start(), 0.0);
    assert_eq!(sol.t_end(), 3.0);
    for (k, &t) in sol.knots().iter().enumerate() {
        assert_eq!(sol.eval(t), sol.y_at_knot(k));
    }
}

#[test]
fn implicit_handles_stiff_relaxation() {
    // y' = -k (y - cos t), slow manifold y ~ cos t
    let k = 1e5;
    let f = move |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -k * (y[0] - t.cos());
    let sol = integrate(&f, &[0.0], (0.0, 2.0), &Tolerances::default(), Method::Implicit).unwrap();
    // closed form: y = A cos t + B sin t + C e^{-kt}
    let a = k * k / (k * k + 1.0);
    let b = k / (k * k + 1.0);
    let exact = |t: f64| a * t.cos() + b * t.sin() - a * (-k * t).exp();
    for t in [0.5, 1.0, 2.0] {
        assert!((sol.eval(t)[0] - exact(t)).abs() < 1e-6);
    }
    assert!(sol.stats().accepted < 2_000, "{:?}", sol.stats());
}

#[test]
fn banded_jacobian_matches_finite_differences() {
    // pure-death chain 0 <- 1 <- ... <- 5, forward equation
    struct Chain;
    impl OdeSystem for Chain {
        fn rhs(&self, _t: f64, v: &[f64], dv: &mut [f64]) {
            for y in 0..v.len() {
                let out = y as f64 * v[y];
                let inflow = if y + 1 < v.len() { (y + 1) as f64 * v[y + 1] } else { 0.0 };
                dv[y] = inflow - out;
            }
        }
        fn jacobian(&self, _t: f64, v: &[f64]) -> Option<Jacobian> {
            let n = v.len();
            let mut j = BandMatrix::zeros(n, 0, 1);
            for y in 0..n {
                j.add(y, y, -(y as f64));
                if y + 1 < n {
                    j.add(y, y + 1, (y + 1) as f64);
                }
            }
            Some(Jacobian::Banded(j))
        }
    }
    let mut v0 = vec![0.0; 6];
    v0[5] = 1.0;
    let tol = Tolerances::default();
    let banded = integrate(&Chain, &v0, (0.0, 1.5), &tol, Method::Implicit).unwrap();
    let plain = |t: f64, v: &[f64], dv: &mut [f64]| Chain.rhs(t, v, dv);
    let dense = integrate(&plain, &v0, (0.0, 1.5), &tol, Method::Implicit).unwrap();
    let p = (-1.5f64).exp();
    for k in 0..6 {
        let binom = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0][k];
        let exact = binom * p.powi(k as i32) * (1.0 - p).powi(5 - k as i32);
        assert!((banded.last()[k] - exact).abs() < 1e-8);
        assert!((dense.last()[k] - exact).abs() < 1e-8);
    }
}

#[test]
fn error_paths() {
    let tol = Tolerances::default();
    let id = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0];
    assert!(matches!(
        integrate(&id, &[1.0], (1.0, 1.0), &tol, Method::Explicit),
        Err(OdeError::InvalidSpan(..))
    ));
    assert!(matches!(
        integrate(&id, &[1.0], (0.0, 1.0), &Tolerances::new(0.0, 1e-9), Method::Explicit),
        Err(OdeError::InvalidTolerances(_))
    ));
    let nan = |t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = if t > 0.5 { f64::NAN } else { 1.0 };
    for m in both() {
        assert!(matches!(
            integrate(&nan, &[1.0], (0.0, 1.0), &tol, m),
            Err(OdeError::NonFinite { .. })
        ));
    }
    let few = Tolerances {
        max_steps: 3,
        ..tol
    };
    let osc = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -100.0 * y[0];
    };
    assert!(matches!(
        integrate(&osc, &[1.0, 0.0], (0.0, 10.0), &few, Method::Explicit),
        Err(OdeError::StepLimit { max_steps: 3, .. })
    ));
    // finite-time blow-up y' = y^2 from 1 explodes at t = 1
    let blow = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
    let r = integrate(&blow, &[1.0], (0.0, 2.0), &tol, Method::Explicit);
    assert!(matches!(
        r,
        Err(OdeError::StepSizeUnderflow { t }) | Err(OdeError::StepLimit { t, .. }) | Err(OdeError::NonFinite { t })
            if t > 0.99 && t < 1.01
    ), "{r:?}");
}

#[test]
fn sdirk_is_fourth_order() {
    // error ratio when tightening tolerance should track tol^(~1) and the
    // method should be accurate at loose tolerances on a smooth problem
    let f = |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -2.0 * t * y[0];
    let exact = (-4.0f64).exp();
    let mut last_err = f64::INFINITY;
    for tol in [1e-4, 1e-6, 1e-8, 1e-10] {
        let sol = integrate(&f, &[1.0], (0.0, 2.0), &Tolerances::new(tol, tol * 1e-2), Method::Implicit).unwrap();
        let err = (sol.last()[0] - exact).abs();
        assert!(err < 50.0 * tol, "tol {tol}: err {err}");
        assert!(err < last_err);
        last_err = err;
    }
}

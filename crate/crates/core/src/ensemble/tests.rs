use super::*;
use crate::ode::{self, Method};
use crate::presets;

fn grid(tau: f64, n: usize) -> Vec<f64> {
    SimConfig::uniform_checkpoints(tau, n)
}

#[test]
fn fenwick_matches_linear_search() {
    let w = [3u64, 0, 5, 1, 0, 0, 7, 2, 9];
    let mut f = Fenwick::from_weights(&w);
    let linear = |w: &[u64], u: u64| {
        let mut acc = 0;
        w.iter().position(|&x| {
            acc += x;
            acc > u
        })
    };
    let total: u64 = w.iter().sum();
    for u in 0..total {
        assert_eq!(Some(f.find(u)), linear(&w, u));
    }
    f.add(1, 4);
    f.add(6, -7);
    let w2 = [3u64, 4, 5, 1, 0, 0, 0, 2, 9];
    for u in 0..w2.iter().sum() {
        assert_eq!(Some(f.find(u)), linear(&w2, u));
    }
}

#[test]
fn empty_ensemble_never_moves() {
    let spec = ModelSpec::scalar(0.0, 1.0, 0.0, 1.0);
    let config = SimConfig::new(10, 3.0, Initial::Shared(vec![0]), 1, grid(3.0, 7));
    let trace = simulate(&spec, &config).unwrap();
    assert_eq!(trace.checkpoints.len(), 7);
    for c in &trace.checkpoints {
        assert_eq!(c.mean, vec![0.0]);
        assert_eq!(c.events.total(), 0);
    }
}

#[test]
fn single_lineage_lifetime_is_exponential() {
    let spec = ModelSpec::scalar(0.0, 1.0, 0.0, 1.0);
    let times = [0.25, 0.5, 1.0, 2.0];
    let seeds = 10_000;
    let mut alive = [0usize; 4];
    for seed in 0..seeds {
        let config = SimConfig::new(1, 2.0, Initial::Shared(vec![1]), seed, times.to_vec());
        let trace = simulate(&spec, &config).unwrap();
        for (k, c) in trace.checkpoints.iter().enumerate() {
            alive[k] += c.mean[0] as usize;
        }
    }
    for (k, &t) in times.iter().enumerate() {
        let p = (-t).exp();
        let se = (p * (1.0 - p) / seeds as f64).sqrt();
        let got = alive[k] as f64 / seeds as f64;
        assert!((got - p).abs() <= 3.0 * se, "t={t}: {got} vs {p}");
    }
}

#[test]
fn traces_are_deterministic() {
    let spec = presets::two_type_interacting();
    let mut config = SimConfig::new(30, 3.0, Initial::Shared(vec![1, 1]), 42, grid(3.0, 13));
    config.histogram = true;
    let a = simulate(&spec, &config).unwrap();
    let b = simulate(&spec, &config).unwrap();
    assert_eq!(a, b);
    config.seed = 43;
    assert_ne!(a, simulate(&spec, &config).unwrap());

    let study = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| convergence_study(&spec, &[5, 10], 2.0, 16, &grid(2.0, 5), 7).unwrap())
    };
    let one = study(1);
    let four = study(4);
    for (x, y) in one.iter().zip(&four) {
        assert_eq!(x.sup_error.to_bits(), y.sup_error.to_bits());
        assert_eq!(x.pooled_mean, y.pooled_mean);
    }
}

#[test]
fn checkpoints_see_the_state_after_simultaneous_events() {
    let spec = ModelSpec::scalar(1.0, 0.5, 0.0, 1.0);
    let config = SimConfig::new(3, 2.0, Initial::PerReplica(vec![vec![1], vec![2], vec![0]]), 5, vec![0.0, 1.0, 2.0]);
    let trace = simulate(&spec, &config).unwrap();
    assert_eq!(trace.checkpoints[0].mean, vec![1.0]);
    assert_eq!(trace.times(), vec![0.0, 1.0, 2.0]);
    let events: Vec<u64> = trace.checkpoints.iter().map(|c| c.events.total()).collect();
    assert!(events.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn invalid_configurations() {
    let spec = presets::logistic();
    let bad = |c: SimConfig| matches!(simulate(&spec, &c), Err(EnsembleError::InvalidConfig(_)));
    assert!(bad(SimConfig::new(0, 1.0, Initial::Shared(vec![1]), 0, vec![])));
    assert!(bad(SimConfig::new(2, 1.0, Initial::Shared(vec![1]), 0, vec![0.5, 0.2])));
    assert!(bad(SimConfig::new(2, 1.0, Initial::Shared(vec![1]), 0, vec![2.0])));
    assert!(bad(SimConfig::new(2, 1.0, Initial::PerReplica(vec![vec![1]]), 0, vec![])));
    let mut c = SimConfig::new(50, 10.0, Initial::Shared(vec![5]), 0, vec![10.0]);
    c.max_events = 100;
    assert!(matches!(simulate(&spec, &c), Err(EnsembleError::EventBudget { .. })));
}

#[test]
fn general_rates_reject_deaths_from_empty_types() {
    let config = SimConfig::new(2, 1.0, Initial::Shared(vec![0, 1]), 3, vec![1.0]);
    let err = simulate_general(
        2,
        |_y, _s| {
            let mut r = Rates::zeros(2);
            r.death[0] = 1.0;
            r
        },
        &config,
    )
    .unwrap_err();
    match err {
        EnsembleError::RateViolation { state, .. } => assert_eq!(state, vec![0, 1]),
        other => panic!("unexpected {other:?}"),
    }
    let err = simulate_general(
        1,
        |_y, _s| Rates {
            birth: vec![f64::NAN],
            death: vec![0.0],
            mutation: vec![vec![0.0]],
        },
        &SimConfig::new(1, 1.0, Initial::Shared(vec![0]), 3, vec![1.0]),
    )
    .unwrap_err();
    assert!(matches!(err, EnsembleError::RateViolation { .. }));
}

#[test]
fn zero_general_rates_give_a_constant_trace() {
    let config = SimConfig::new(4, 2.0, Initial::PerReplica(vec![vec![1, 2], vec![0, 0], vec![3, 1], vec![0, 5]]), 9, grid(2.0, 5));
    let trace = simulate_general(2, |_y, _s| Rates::zeros(2), &config).unwrap();
    for c in &trace.checkpoints {
        assert_eq!(c.mean, vec![1.0, 2.0]);
        assert_eq!(c.events.total(), 0);
    }
}

fn pooled(traces: &[EnsembleTrace], c: usize, i: usize) -> (f64, f64) {
    let xs: Vec<f64> = traces.iter().map(|t| t.checkpoints[c].mean[i]).collect();
    mean_and_se(&xs)
}

#[test]
fn general_simulator_agrees_with_indexed_simulator() {
    let spec = presets::two_type_interacting();
    let checkpoints = grid(2.0, 5);
    let run = |general: bool| -> Vec<EnsembleTrace> {
        (0..200u64)
            .into_par_iter()
            .map(|seed| {
                let config = SimConfig::new(10, 2.0, Initial::Shared(vec![1, 1]), 1000 + seed, checkpoints.clone());
                if general {
                    simulate_general(2, moment_mediated_rates(&spec), &config).unwrap()
                } else {
                    simulate(&spec, &config).unwrap()
                }
            })
            .collect()
    };
    let a = run(false);
    let b = run(true);
    for c in 0..checkpoints.len() {
        for i in 0..2 {
            let (ma, sa) = pooled(&a, c, i);
            let (mb, sb) = pooled(&b, c, i);
            assert!((ma - mb).abs() <= 4.0 * (sa * sa + sb * sb).sqrt(), "c={c} i={i}: {ma} vs {mb}");
        }
    }
}

#[test]
fn yule_type_dominating_process() {
    // birth rate c (y + 1); y + 1 is then a Yule process with rate c
    let c = 0.6;
    let tau = 2.0;
    let checkpoints = vec![0.5, 1.0, 2.0];
    let seeds = 4000u64;
    let traces: Vec<EnsembleTrace> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let config = SimConfig::new(1, tau, Initial::Shared(vec![0]), seed, checkpoints.clone());
            simulate_general(
                1,
                |y, _s| Rates {
                    birth: vec![c * (y[0] + 1) as f64],
                    death: vec![0.0],
                    mutation: vec![vec![0.0]],
                },
                &config,
            )
            .unwrap()
        })
        .collect();

    // forward equation on {0, ..., K}, K far beyond the reachable range
    let k_max = 400;
    let forward = |_t: f64, v: &[f64], dv: &mut [f64]| {
        for y in 0..=k_max {
            let out = if y < k_max { c * (y + 1) as f64 * v[y] } else { 0.0 };
            dv[y] = -out + if y > 0 { c * y as f64 * v[y - 1] } else { 0.0 };
        }
    };
    let mut v0 = vec![0.0; k_max + 1];
    v0[0] = 1.0;
    let sol = ode::integrate(&forward, &v0, (0.0, tau), &ode::Tolerances::new(1e-10, 1e-14), Method::Explicit).unwrap();

    for (k, &t) in checkpoints.iter().enumerate() {
        let v = sol.eval(t);
        let ode_mean: f64 = v.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
        let exact = (c * t).exp() - 1.0;
        assert!((ode_mean - exact).abs() < 1e-7, "t={t}: {ode_mean} vs {exact}");
        let (m, se) = pooled(&traces, k, 0);
        assert!((m - ode_mean).abs() <= 4.0 * se, "t={t}: {m} vs {ode_mean} (se {se})");
    }
}

#[test]
fn large_ensemble_follows_the_moment_equation() {
    let spec = presets::logistic();
    let checkpoints = grid(5.0, 11);
    let rows = convergence_study(&spec, &[1000], 5.0, 10, &checkpoints, 11).unwrap();
    assert!(rows[0].max_z() <= 4.0, "z = {}", rows[0].max_z());
}

#[test]
fn without_interaction_all_sizes_are_unbiased() {
    let spec = presets::figure1(presets::Interaction::None).with_r0(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let checkpoints = grid(2.0, 5);
    let rows = convergence_study(&spec, &[1, 10, 40], 2.0, 300, &checkpoints, 3).unwrap();
    for row in &rows {
        assert!(row.max_z() <= 4.5, "N={}: z = {}", row.replicas, row.max_z());
    }
}

#[test]
fn interaction_bias_is_visible_for_a_single_replica() {
    let spec = presets::logistic();
    let checkpoints = grid(5.0, 11);
    let rows = convergence_study(&spec, &[1, 800], 5.0, 40, &checkpoints, 5).unwrap();
    assert!(rows[0].sup_error > rows[1].sup_error, "{} vs {}", rows[0].sup_error, rows[1].sup_error);
}

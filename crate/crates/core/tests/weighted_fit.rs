mod common;

use mqmix::design::{build_design, DesignBundle};
use mqmix::robust_loss::LossConfig;
use mqmix::simulate::{generate, SimScenario};
use mqmix::weighted_fit::{fit_mstep, irls_step, sigma_update, weighted_objective, FitResult, WeightedProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn start(b: &DesignBundle, k: usize) -> FitResult {
    FitResult {
        beta: vec![vec![0.0; b.fixed_dim()]; b.n_outcomes()],
        zeta: (0..k).map(|j| vec![j as f64 - 0.5 * (k - 1) as f64; b.n_outcomes()]).collect(),
        sigma: vec![1.0; b.n_outcomes()],
        iterations: 0,
        converged: false,
        degenerate: vec![],
    }
}

fn random_weights(n: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(n * k);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = raw.iter().sum();
        w.extend(raw.iter().map(|v| v / s));
    }
    w
}

fn demo_bundle(seed: u64, n: usize) -> (DesignBundle, mqmix::simulate::TruthRecord) {
    let mut sc = SimScenario::small_demo(seed);
    sc.n = n;
    let (data, truth) = generate(&sc).unwrap();
    (build_design(&data, &sc.roles(), Default::default()).unwrap(), truth)
}

/// Weighted ALID log-likelihood of the scale, up to a constant.
fn scale_loglik(r: &[f64], w: &[f64], loss: &LossConfig, sigma: f64) -> f64 {
    let b1 = loss.unit_norm_const();
    r.iter().zip(w).map(|(ri, wi)| wi * (-loss.rho(ri / sigma) - (sigma * b1).ln())).sum()
}

/// Repeatedly refined grid search over `log sigma`.
fn grid_argmax(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut best = lo;
    for _ in 0..12 {
        let n = 400;
        let step = (hi - lo) / n as f64;
        let (mut arg, mut val) = (lo, f64::NEG_INFINITY);
        for j in 0..=n {
            let x = lo + step * j as f64;
            let v = f(x.exp());
            if v > val {
                val = v;
                arg = x;
            }
        }
        best = arg;
        lo = arg - 2.0 * step;
        hi = arg + 2.0 * step;
    }
    best.exp()
}

#[test]
fn scale_matches_grid_search() {
    let loss = LossConfig::new(0.75, 1.345).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..5 {
        let n = 40 + 30 * trial;
        let r: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() - 0.3) * 4.0 * (1.0 + trial as f64)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let root = sigma_update(&r, &w, &loss, None).unwrap();
        let grid = grid_argmax(|s| scale_loglik(&r, &w, &loss, s), (1e-3f64).ln(), (1e3f64).ln());
        assert!((root - grid).abs() < 1e-6 * grid, "trial {trial}: {root} vs {grid}");
        let at = scale_loglik(&r, &w, &loss, root);
        for f in [0.999, 1.001] {
            assert!(scale_loglik(&r, &w, &loss, root * f) < at);
        }
    }
}

#[test]
fn descent_on_random_mixture_problem() {
    let (b, _) = demo_bundle(3, 60);
    let w = random_weights(b.n_units(), 3, 5);
    for q in [0.1, 0.5, 0.85] {
        let prob = WeightedProblem::new(&b, &w, 3, LossConfig::new(q, 1.0).unwrap()).unwrap();
        let mut cur = start(&b, 3);
        for _ in 0..25 {
            let next = irls_step(&prob, &cur).unwrap();
            let before = weighted_objective(&prob, &cur);
            let after = weighted_objective(&prob, &next);
            for (a, bf) in after.iter().zip(&before) {
                assert!(*a <= bf * (1.0 + 1e-10), "q={q}: {a} > {bf}");
            }
            cur = next;
        }
    }
}

#[test]
fn weighted_gaussian_limit_matches_closed_form() {
    let (b, _) = demo_bundle(9, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<f64> = (0..b.n_units()).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
    let prob = WeightedProblem::new(&b, &w, 1, LossConfig::new(0.5, 1e6).unwrap()).unwrap();
    let fit = fit_mstep(&prob, &start(&b, 1), 1e-12, 500).unwrap();
    let p = b.fixed_dim();
    for h in 0..b.n_outcomes() {
        let rows: Vec<usize> = (0..b.n_rows()).filter(|&r| b.outcome(r) == h).collect();
        let x = nalgebra::DMatrix::from_fn(rows.len(), p + 1, |i, j| if j < p { b.row(rows[i])[j] } else { 1.0 });
        let wd = nalgebra::DVector::from_fn(rows.len(), |i, _| w[b.unit(rows[i])]);
        let y = nalgebra::DVector::from_fn(rows.len(), |i, _| b.y(rows[i]));
        let xw = nalgebra::DMatrix::from_fn(rows.len(), p + 1, |i, j| x[(i, j)] * wd[i]);
        let sol = (xw.transpose() * &x).lu().solve(&(xw.transpose() * &y)).unwrap();
        for j in 0..p {
            assert!((fit.beta[h][j] - sol[j]).abs() < 1e-8);
        }
        assert!((fit.zeta[0][h] - sol[p]).abs() < 1e-8);
        let res = &y - &x * &sol;
        let s2 = res.iter().zip(wd.iter()).map(|(r, w)| w * r * r).sum::<f64>() / wd.sum();
        assert!((fit.sigma[h] - s2.sqrt()).abs() < 1e-8);
    }
}

#[test]
fn oracle_memberships_recover_generating_coefficients() {
    let reps = 200;
    let mut errors: Vec<Vec<f64>> = Vec::new();
    for rep in 0..reps {
        let (b, truth) = demo_bundle(1000 + rep, 120);
        let k = truth.scenario.k();
        let mut w = vec![0.0; b.n_units() * k];
        for (i, id) in b.unit_ids().iter().enumerate() {
            let c = truth.components.iter().find(|(u, _)| u == id).unwrap().1;
            w[i * k + c] = 1.0;
        }
        let prob = WeightedProblem::new(&b, &w, k, truth.scenario.loss().unwrap()).unwrap();
        let fit = fit_mstep(&prob, &start(&b, k), 1e-9, 500).unwrap();
        assert!(fit.converged);
        let target = truth.design_coefficients(&b);
        let mut e = Vec::new();
        for h in 0..b.n_outcomes() {
            e.extend(fit.beta[h].iter().zip(&target[h]).map(|(a, t)| a - t));
            e.extend((0..k).map(|c| fit.zeta[c][h] - truth.scenario.zeta[c][h]));
        }
        errors.push(e);
    }
    for j in 0..errors[0].len() {
        let col: Vec<f64> = errors.iter().map(|e| e[j]).collect();
        let (m, sd) = common::mean_sd(&col);
        assert!(m.abs() < 3.0 * sd / (reps as f64).sqrt(), "parameter {j}: bias {m}, sd {sd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn regression_equivariance(seed in 0u64..10_000, a in 0.2f64..5.0, d0 in -3.0f64..3.0, d1 in -3.0f64..3.0, q in 0.15f64..0.85) {
        let (b, _) = demo_bundle(seed, 40);
        let w = random_weights(b.n_units(), 2, seed + 1);
        let loss = LossConfig::new(q, 1.345).unwrap();
        let prob = WeightedProblem::new(&b, &w, 2, loss).unwrap();
        let base = fit_mstep(&prob, &start(&b, 2), 1e-13, 2000).unwrap();
        prop_assume!(base.converged);
        let shift = [d0, d1, -d0];
        let y2: Vec<f64> = (0..b.n_rows())
            .map(|r| a * b.y(r) + b.row(r).iter().zip(&shift).map(|(x, d)| x * d).sum::<f64>())
            .collect();
        let b2 = b.with_responses(y2).unwrap();
        let prob2 = WeightedProblem::new(&b2, &w, 2, loss).unwrap();
        let mut init = base.clone();
        for h in 0..b.n_outcomes() {
            for j in 0..b.fixed_dim() {
                init.beta[h][j] = a * base.beta[h][j] + shift[j] + 0.1;
            }
            init.sigma[h] *= a * 1.1;
        }
        for z in init.zeta.iter_mut() {
            for v in z.iter_mut() {
                *v *= a;
            }
        }
        let moved = fit_mstep(&prob2, &init, 1e-13, 2000).unwrap();
        prop_assume!(moved.converged);
        let tol = 1e-8 * a.max(1.0) * 10.0;
        for h in 0..b.n_outcomes() {
            for j in 0..b.fixed_dim() {
                prop_assert!((moved.beta[h][j] - (a * base.beta[h][j] + shift[j])).abs() < tol);
            }
            prop_assert!((moved.sigma[h] - a * base.sigma[h]).abs() < tol);
            for k in 0..2 {
                prop_assert!((moved.zeta[k][h] - a * base.zeta[k][h]).abs() < tol);
            }
        }
    }
}

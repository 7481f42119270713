mod common;

use mqmix::robust_loss::{alid_logpdf, alid_norm_const, alid_sample, psi, rho, AlidParams, LossConfig};
use proptest::prelude::*;

#[test]
fn normalizer_matches_quadrature_off_grid() {
    for &(q, c, s) in &[(0.05, 0.2, 0.3), (0.33, 2.2, 1.7), (0.97, 4.0, 0.8), (0.5, 1.345, 2.5)] {
        let cfg = LossConfig::new(q, c).unwrap();
        let quad = common::integrate_line(|y| (-cfg.rho(y / s)).exp(), &[-c * s, 0.0, c * s], 1e-13);
        let closed = alid_norm_const(&cfg, s).unwrap();
        assert!((closed - quad).abs() < 1e-12 * quad, "q={q} c={c} s={s}: {closed} vs {quad}");
    }
}

#[test]
fn cdf_matches_integrated_density() {
    let params = AlidParams::new(LossConfig::new(0.3, 1.0).unwrap(), 0.7, 1.4).unwrap();
    for &y in &[-6.0, -1.0, 0.0, 0.7, 1.5, 2.1, 9.0] {
        let breaks: Vec<f64> = [0.7 - 1.4, 0.7, 0.7 + 1.4].into_iter().filter(|b| *b < y).collect();
        let mut pts = vec![f64::NEG_INFINITY];
        pts.extend(breaks);
        pts.push(y);
        let mass: f64 = pts.windows(2).map(|w| common::integrate(|t| alid_logpdf(t, &params).unwrap().exp(), w[0], w[1], 1e-14)).sum();
        assert!((params.cdf(y) - mass).abs() < 1e-10, "y={y}");
    }
}

#[test]
fn sample_moments_match_quadrature() {
    let params = AlidParams::new(LossConfig::new(0.8, 0.9).unwrap(), -1.0, 0.6).unwrap();
    let mean = common::integrate_line(|y| y * alid_logpdf(y, &params).unwrap().exp(), &[-1.54, -1.0, -0.46], 1e-13);
    let second = common::integrate_line(|y| (y - mean).powi(2) * alid_logpdf(y, &params).unwrap().exp(), &[-1.54, -1.0, -0.46], 1e-13);
    let draws = alid_sample(&params, 99, 400_000).unwrap();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let se = (second / draws.len() as f64).sqrt();
    assert!((m - mean).abs() < 4.0 * se, "{m} vs {mean}");
}

#[test]
fn free_functions_reject_non_finite() {
    let cfg = LossConfig::new(0.5, 1.0).unwrap();
    assert!(rho(f64::NAN, &cfg).is_err());
    assert!(psi(f64::INFINITY, &cfg).is_err());
    assert!(alid_norm_const(&cfg, 0.0).is_err());
    assert!(LossConfig::new(1.0, 1.0).is_err());
    assert!(LossConfig::new(0.5, -1.0).is_err());
}

proptest! {
    #[test]
    fn rho_is_nonnegative_and_convex(q in 0.01f64..0.99, c in 0.1f64..5.0, a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let cfg = LossConfig::new(q, c).unwrap();
        prop_assert!(cfg.rho(a) >= 0.0);
        let mid = cfg.rho(0.5 * (a + b));
        prop_assert!(mid <= 0.5 * (cfg.rho(a) + cfg.rho(b)) + 1e-12 * (1.0 + cfg.rho(a) + cfg.rho(b)));
    }

    #[test]
    fn psi_is_bounded_and_weight_positive(q in 0.01f64..0.99, c in 0.1f64..5.0, u in -50.0f64..50.0) {
        let cfg = LossConfig::new(q, c).unwrap();
        prop_assert!(cfg.psi(u).abs() <= 2.0 * c * q.max(1.0 - q) + 1e-12);
        if u != 0.0 {
            let w = cfg.psi_weight(u);
            prop_assert!(w > 0.0 && w <= 2.0 * q.max(1.0 - q) + 1e-15);
            prop_assert!((w * u - cfg.psi(u)).abs() < 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn psi_is_derivative_of_rho(q in 0.01f64..0.99, c in 0.1f64..5.0, u in -10.0f64..10.0) {
        let cfg = LossConfig::new(q, c).unwrap();
        let h = 1e-6;
        prop_assume!((u.abs() - c).abs() > 1e-4 && u.abs() > 1e-4);
        let fd = (cfg.rho(u + h) - cfg.rho(u - h)) / (2.0 * h);
        prop_assert!((fd - cfg.psi(u)).abs() < 1e-6 * (1.0 + u.abs()));
    }

    #[test]
    fn quantile_inverts_cdf(q in 0.02f64..0.98, c in 0.2f64..4.0, p in 0.0001f64..0.9999) {
        let cfg = LossConfig::new(q, c).unwrap();
        let u = cfg.unit_quantile(p);
        prop_assert!((cfg.unit_cdf(u) - p).abs() < 1e-10);
    }
}

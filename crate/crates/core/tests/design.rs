mod common;

use mqmix::design::{build_design, predict, ColumnKind, CovariateRole, DesignOptions, Role};
use mqmix::panel_data::{Observation, PanelDataset, UnitRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 12] =
    ["age", "age2", "ale", "sed", "kessm", "imd", "edu_mid", "edu_high", "minority", "female", "stratum_2", "stratum_3"];

fn mcs_like(n: usize, seed: u64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::new();
    for i in 0..n {
        let fixed_part: Vec<f64> = (0..6).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let waves = rng.random_range(2..=4);
        let mut obs = Vec::new();
        for t in 0..waves {
            let age = 3.0 + 2.0 * t as f64 + rng.random::<f64>();
            let mut x = vec![age, age * age];
            x.extend((0..4).map(|_| rng.random::<f64>() * 3.0));
            x.extend(&fixed_part);
            for h in 0..2 {
                obs.push(Observation { occasion: t as f64, outcome: h, y: rng.random(), x: x.clone() });
            }
        }
        units.push(UnitRecord { unit_id: format!("m{i}"), observations: obs });
    }
    PanelDataset::new(units, vec!["internalising".into(), "externalising".into()], NAMES.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn mcs_roles() -> Vec<CovariateRole> {
    NAMES
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let role = match j {
                0 | 1 => Role::Fixed,
                2..=5 => Role::Decomposed,
                _ => Role::TimeConstant,
            };
            CovariateRole::new(*n, role)
        })
        .collect()
}

#[test]
fn application_layout_has_sixteen_columns() {
    let data = mcs_like(60, 3);
    let b = build_design(&data, &mcs_roles(), DesignOptions::default()).unwrap();
    assert_eq!(b.fixed_dim(), 16);
    assert_eq!(b.mundlak_dim(), 4);
    let kinds: Vec<ColumnKind> = b.columns().iter().map(|c| c.kind).collect();
    assert_eq!(kinds.iter().filter(|k| **k == ColumnKind::Between).count(), 4);
    assert_eq!(kinds.iter().filter(|k| **k == ColumnKind::Within).count(), 4);
    assert_eq!(kinds.iter().filter(|k| **k == ColumnKind::TimeConstant).count(), 6);
    assert!(b.labels().contains(&"ale_within".to_string()));
    assert_eq!(b.n_rows(), data.n_observations());
}

#[test]
fn within_columns_are_centred_per_unit_and_outcome() {
    let data = mcs_like(40, 8);
    let b = build_design(&data, &mcs_roles(), DesignOptions::default()).unwrap();
    let within: Vec<usize> = b.columns().iter().enumerate().filter(|(_, c)| c.kind == ColumnKind::Within).map(|(j, _)| j).collect();
    for i in 0..b.n_units() {
        for h in 0..2 {
            for &j in &within {
                let s: f64 = b.unit_rows(i).filter(|&r| b.outcome(r) == h).map(|r| b.row(r)[j]).sum();
                assert!(s.abs() < 1e-12, "unit {i} outcome {h} column {j}: {s}");
            }
        }
    }
}

#[test]
fn mundlak_off_reproduces_raw_design() {
    let data = mcs_like(20, 5);
    let off = build_design(&data, &mcs_roles(), DesignOptions { mundlak: false, scale_by_ti: false }).unwrap();
    let all_fixed: Vec<_> = NAMES.iter().map(|n| CovariateRole::new(*n, Role::Fixed)).collect();
    let raw = build_design(&data, &all_fixed, DesignOptions::default()).unwrap();
    assert_eq!(off.fixed_dim(), 12);
    for r in 0..raw.n_rows() {
        assert_eq!(off.row(r), raw.row(r));
    }
    let mut r = 0;
    for u in data.units() {
        for o in &u.observations {
            assert_eq!(raw.row(r), o.x.as_slice());
            r += 1;
        }
    }
}

#[test]
fn predict_matches_brute_force_dot_product() {
    let data = mcs_like(3, 11);
    let b = build_design(&data, &mcs_roles(), DesignOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for r in 0..5 {
        let beta: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zeta = rng.random_range(-3.0..3.0);
        let mut acc = zeta;
        for j in 0..16 {
            acc += b.row(r)[j] * beta[j];
        }
        assert!((predict(&b, &beta, zeta, r).unwrap() - acc).abs() < 1e-12);
    }
    assert!(predict(&b, &[1.0; 3], 0.0, 0).is_err());
}

#[test]
fn decomposing_a_time_constant_covariate_fails() {
    let data = mcs_like(10, 2);
    let mut roles = mcs_roles();
    roles[9].role = Role::Decomposed;
    assert!(matches!(build_design(&data, &roles, DesignOptions::default()), Err(mqmix::Error::DegenerateDecomposition(_))));
}

proptest! {
    #[test]
    fn decomposition_sums_back_to_raw(
        xs in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..5), 2..8),
    ) {
        let mut rows = Vec::new();
        let ids: Vec<String> = (0..xs.len()).map(|i| format!("u{i}")).collect();
        for (i, unit) in xs.iter().enumerate() {
            for (t, x) in unit.iter().enumerate() {
                rows.push((ids[i].as_str(), t as f64, 0usize, 0.0, vec![*x]));
            }
        }
        prop_assume!(xs.iter().any(|u| u.iter().any(|v| (v - u[0]).abs() > 1e-6)));
        let data = common::panel_from_rows(&rows, 1);
        let b = build_design(&data, &[CovariateRole::new("x1", Role::Decomposed)], DesignOptions::default()).unwrap();
        prop_assert_eq!(b.labels(), vec!["x1_between".to_string(), "x1_within".to_string()]);
        for r in 0..b.n_rows() {
            let row = b.row(r);
            prop_assert!((row[0] + row[1] - rows[r].4[0]).abs() < 1e-9);
        }
        let again = build_design(&data, &[CovariateRole::new("x1", Role::Decomposed)], DesignOptions::default()).unwrap();
        for r in 0..b.n_rows() {
            prop_assert_eq!(b.row(r), again.row(r));
        }
    }
}

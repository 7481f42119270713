//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use mqmix::design::{build_design, CovariateRole, DesignBundle, DesignOptions, Role};
use mqmix::panel_data::{Observation, PanelDataset, UnitRecord};

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// One 15-point Kronrod panel and its 7-point Gauss error estimate.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for j in 0..7 {
        let d = h * GK_NODES[j];
        let s = f(c - d) + f(c + d);
        kron += GK_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G_WEIGHTS[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod integral over `[a, b]`; infinite ends are mapped
/// to `(0, 1)` by `x = a + t / (1 - t)`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    integrate_dyn(&f, a, b, tol)
}

fn integrate_dyn(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adapt(f, a, b, tol, 50),
        (true, false) => {
            let g = |t: f64| {
                let s = 1.0 - t;
                f(a + t / s) / (s * s)
            };
            adapt(&g, 0.0, 1.0, tol, 50)
        }
        (false, true) => {
            let g = |t: f64| {
                let s = 1.0 - t;
                f(b - t / s) / (s * s)
            };
            adapt(&g, 0.0, 1.0, tol, 50)
        }
        (false, false) => integrate_dyn(f, f64::NEG_INFINITY, 0.0, 0.5 * tol) + integrate_dyn(f, 0.0, f64::INFINITY, 0.5 * tol),
    }
}

/// Integral over the real line split at the given break points.
pub fn integrate_line(f: impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![f64::NEG_INFINITY];
    pts.extend_from_slice(breaks);
    pts.push(f64::INFINITY);
    let share = tol / (pts.len() - 1) as f64;
    pts.windows(2).map(|w| integrate(&f, w[0], w[1], share)).sum()
}

/// Central difference of `f` at `x` in coordinate `j`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[j] += h;
    m[j] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Four-point second differences of `f` (symmetric matrix, row-major).
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut hm = vec![vec![0.0; n]; n];
    let shifted = |pairs: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(j, d) in pairs {
            y[j] += d;
        }
        f(&y)
    };
    for a in 0..n {
        let ha = steps[a];
        hm[a][a] = (shifted(&[(a, ha)]) - 2.0 * f0 + shifted(&[(a, -ha)])) / (ha * ha);
        for b in (a + 1)..n {
            let hb = steps[b];
            let v = (shifted(&[(a, ha), (b, hb)]) - shifted(&[(a, ha), (b, -hb)]) - shifted(&[(a, -ha), (b, hb)])
                + shifted(&[(a, -ha), (b, -hb)]))
                / (4.0 * ha * hb);
            hm[a][b] = v;
            hm[b][a] = v;
        }
    }
    hm
}

/// `(unit, occasion, outcome, y, x)` rows with every covariate `Fixed`.
pub fn panel_from_rows(rows: &[(&str, f64, usize, f64, Vec<f64>)], n_outcomes: usize) -> PanelDataset {
    let mut units: Vec<UnitRecord> = Vec::new();
    for (id, t, h, y, x) in rows {
        let obs = Observation { occasion: *t, outcome: *h, y: *y, x: x.clone() };
        match units.iter_mut().find(|u| u.unit_id == *id) {
            Some(u) => u.observations.push(obs),
            None => units.push(UnitRecord { unit_id: id.to_string(), observations: vec![obs] }),
        }
    }
    let p = rows[0].4.len();
    PanelDataset::new(units, (0..n_outcomes).map(|h| format!("y{}", h + 1)).collect(), (0..p).map(|j| format!("x{}", j + 1)).collect())
        .unwrap()
}

pub fn fixed_design(data: &PanelDataset) -> DesignBundle {
    let roles: Vec<_> = data.covariate_names().iter().map(|n| CovariateRole::new(n.clone(), Role::Fixed)).collect();
    build_design(data, &roles, DesignOptions::default()).unwrap()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn rel_frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

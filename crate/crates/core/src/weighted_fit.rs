//! Responsibility-weighted M-quantile regression (the M-step solver).
//!
//! Each response row enters the stacked system once per component `k`, with
//! case weight `z_ik` and a dummy column for the mass point `zeta_kh`.
//! Coefficients and mass points are solved jointly by iteratively weighted
//! least squares with weights `z_ik * psi(r) / r`; every step is safeguarded
//! by step halving so the weighted loss never increases. Outcomes have
//! separate coefficient blocks and scales, so the stacked system is block
//! diagonal and each block is solved on its own.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::design::{dot, DesignBundle};
use crate::error::{Error, Result};
use crate::robust_loss::LossConfig;

pub const DEFAULT_INNER_TOL: f64 = 1e-8;
pub const DEFAULT_INNER_MAX_ITER: usize = 200;

/// Inputs of one M-step: the design, the responsibilities (units x K,
/// row-major) and the loss.
#[derive(Debug, Clone, Copy)]
pub struct WeightedProblem<'a> {
    pub bundle: &'a DesignBundle,
    pub weights: &'a [f64],
    pub k: usize,
    pub loss: LossConfig,
}

impl<'a> WeightedProblem<'a> {
    pub fn new(bundle: &'a DesignBundle, weights: &'a [f64], k: usize, loss: LossConfig) -> Result<Self> {
        if k == 0 {
            return Err(Error::Dimension("K must be at least 1".into()));
        }
        if weights.len() != bundle.n_units() * k {
            return Err(Error::Dimension(format!("{} case weights for {} units x {k} components", weights.len(), bundle.n_units())));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Domain("case weights must lie in [0, 1]".into()));
        }
        Ok(Self { bundle, weights, k, loss })
    }

    #[inline]
    fn weight(&self, unit: usize, k: usize) -> f64 {
        self.weights[unit * self.k + k]
    }

    /// Total responsibility of each component.
    pub fn component_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.k];
        for row in self.weights.chunks(self.k) {
            for (m, w) in mass.iter_mut().zip(row) {
                *m += w;
            }
        }
        mass
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Per outcome: coefficients aligned with the design columns.
    pub beta: Vec<Vec<f64>>,
    /// `zeta[k][h]`.
    pub zeta: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components that carried no weight; their mass points were left as is.
    pub degenerate: Vec<usize>,
}

impl FitResult {
    pub fn check(&self, bundle: &DesignBundle, k: usize) -> Result<()> {
        let h = bundle.n_outcomes();
        let p = bundle.fixed_dim();
        if self.beta.len() != h || self.beta.iter().any(|b| b.len() != p) {
            return Err(Error::Dimension(format!("beta must be {h} x {p}")));
        }
        if self.zeta.len() != k || self.zeta.iter().any(|z| z.len() != h) {
            return Err(Error::Dimension(format!("zeta must be {k} x {h}")));
        }
        if self.sigma.len() != h {
            return Err(Error::Dimension(format!("sigma must have {h} entries")));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain("scales must be positive and finite".into()));
        }
        Ok(())
    }
}

/// `sum_i sum_k z_ik sum_(rows of i in outcome h) rho_q(r / sigma_h)` for each
/// outcome.
pub fn weighted_objective(prob: &WeightedProblem<'_>, fit: &FitResult) -> Vec<f64> {
    let b = prob.bundle;
    let mut out = vec![0.0; b.n_outcomes()];
    for r in 0..b.n_rows() {
        let h = b.outcome(r);
        let i = b.unit(r);
        let base = b.y(r) - dot(b.row(r), &fit.beta[h]);
        for k in 0..prob.k {
            let w = prob.weight(i, k);
            if w > 0.0 {
                out[h] += w * prob.loss.rho((base - fit.zeta[k][h]) / fit.sigma[h]);
            }
        }
    }
    out
}

fn objective_for(prob: &WeightedProblem<'_>, h: usize, beta: &[f64], zeta: &[f64], sigma: f64) -> f64 {
    let b = prob.bundle;
    let mut total = 0.0;
    for r in (0..b.n_rows()).filter(|&r| b.outcome(r) == h) {
        let i = b.unit(r);
        let base = b.y(r) - dot(b.row(r), beta);
        for (k, z) in zeta.iter().enumerate() {
            let w = prob.weight(i, k);
            if w > 0.0 {
                total += w * prob.loss.rho((base - z) / sigma);
            }
        }
    }
    total
}

/// One safeguarded IWLS sweep over every outcome at fixed scales.
pub fn irls_step(prob: &WeightedProblem<'_>, current: &FitResult) -> Result<FitResult> {
    current.check(prob.bundle, prob.k)?;
    let b = prob.bundle;
    let p = b.fixed_dim();
    let k_count = prob.k;
    let mass = prob.component_mass();
    let active: Vec<usize> = (0..k_count).filter(|&k| mass[k] > 0.0).collect();
    let degenerate: Vec<usize> = (0..k_count).filter(|&k| mass[k] <= 0.0).collect();
    let dim = p + active.len();

    let mut next = current.clone();
    next.degenerate = degenerate;
    for h in 0..b.n_outcomes() {
        let sigma = current.sigma[h];
        let beta = &current.beta[h];
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut wk = vec![0.0; active.len()];
        for r in (0..b.n_rows()).filter(|&r| b.outcome(r) == h) {
            let i = b.unit(r);
            let x = b.row(r);
            let y = b.y(r);
            let base = y - dot(x, beta);
            let mut s = 0.0;
            for (slot, &k) in active.iter().enumerate() {
                let z = prob.weight(i, k);
                let w = if z > 0.0 { z * prob.loss.psi_weight((base - current.zeta[k][h]) / sigma) } else { 0.0 };
                wk[slot] = w;
                s += w;
            }
            if s == 0.0 {
                continue;
            }
            for c1 in 0..p {
                let sx = s * x[c1];
                for c2 in c1..p {
                    a[(c1, c2)] += sx * x[c2];
                }
                rhs[c1] += sx * y;
            }
            for (slot, &w) in wk.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let col = p + slot;
                for c1 in 0..p {
                    a[(c1, col)] += w * x[c1];
                }
                a[(col, col)] += w;
                rhs[col] += w * y;
            }
        }
        for c1 in 0..dim {
            for c2 in 0..c1 {
                a[(c1, c2)] = a[(c2, c1)];
            }
        }
        let theta = solve_spd(&a, &rhs).map_err(|bad| Error::SingularSystem {
            columns: bad
                .into_iter()
                .map(|c| {
                    if c < p {
                        format!("{}:{}", b.outcome_names()[h], b.columns()[c].label)
                    } else {
                        format!("{}:zeta[{}]", b.outcome_names()[h], active[c - p] + 1)
                    }
                })
                .collect(),
        })?;

        let old_zeta: Vec<f64> = (0..k_count).map(|k| current.zeta[k][h]).collect();
        let mut prop_zeta = old_zeta.clone();
        for (slot, &k) in active.iter().enumerate() {
            prop_zeta[k] = theta[p + slot];
        }
        let prop_beta: Vec<f64> = theta.iter().take(p).copied().collect();

        let f_old = objective_for(prob, h, beta, &old_zeta, sigma);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand_beta: Vec<f64> = beta.iter().zip(&prop_beta).map(|(o, n)| o + t * (n - o)).collect();
            let cand_zeta: Vec<f64> = old_zeta.iter().zip(&prop_zeta).map(|(o, n)| o + t * (n - o)).collect();
            let f_new = objective_for(prob, h, &cand_beta, &cand_zeta, sigma);
            if f_new <= f_old {
                accepted = Some((cand_beta, cand_zeta));
                break;
            }
            t *= 0.5;
        }
        if let Some((nb, nz)) = accepted {
            next.beta[h] = nb;
            for k in 0..k_count {
                next.zeta[k][h] = nz[k];
            }
        }
    }
    Ok(next)
}

/// Cholesky solve after diagonal scaling; on failure returns the columns that
/// carry the (near-)null direction.
fn solve_spd(a: &DMatrix<f64>, rhs: &DVector<f64>) -> std::result::Result<DVector<f64>, Vec<usize>> {
    let n = a.nrows();
    let zero_cols: Vec<usize> = (0..n).filter(|&j| !(a[(j, j)] > 0.0)).collect();
    if !zero_cols.is_empty() {
        return Err(zero_cols);
    }
    let d: Vec<f64> = (0..n).map(|j| a[(j, j)].sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |r, c| a[(r, c)] / (d[r] * d[c]));
    let scaled_rhs = DVector::from_fn(n, |r, _| rhs[r] / d[r]);
    let null_direction = |m: &DMatrix<f64>| -> Vec<usize> {
        let eig = SymmetricEigen::new(m.clone());
        let (imin, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::MAX), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let v = eig.eigenvectors.column(imin);
        (0..n).filter(|&j| v[j].abs() > 0.1).collect()
    };
    match scaled.clone().cholesky() {
        Some(ch) => {
            let min_pivot = (0..n).map(|j| ch.l_dirty()[(j, j)]).fold(f64::MAX, f64::min);
            if min_pivot * min_pivot < 1e-13 {
                return Err(null_direction(&scaled));
            }
            let sol = ch.solve(&scaled_rhs);
            Ok(DVector::from_fn(n, |r, _| sol[r] / d[r]))
        }
        None => Err(null_direction(&scaled)),
    }
}

/// `sum w psi(r / s) r / s - sum w`, decreasing in `s`, with its derivative.
fn scale_score(residuals: &[f64], weights: &[f64], loss: &LossConfig, n_eff: f64, s: f64) -> (f64, f64) {
    let mut val = -n_eff;
    let mut deriv = 0.0;
    for (&r, &w) in residuals.iter().zip(weights) {
        if w == 0.0 || r == 0.0 {
            continue;
        }
        let u = r / s;
        let ps = loss.psi(u);
        val += w * ps * u;
        deriv -= w * (loss.psi_prime(u) * u + ps) * u / s;
    }
    (val, deriv)
}

/// Maximum-likelihood ALID scale for weighted raw residuals: the root in
/// `sigma` of `sum w = sum w psi(r / sigma) r / sigma`.
///
/// Without a bracket, the search is centred on `median(|r|) / 0.6745`.
pub fn sigma_update(residuals: &[f64], weights: &[f64], loss: &LossConfig, bracket: Option<(f64, f64)>) -> Result<f64> {
    if residuals.len() != weights.len() {
        return Err(Error::Dimension("residuals and weights differ in length".into()));
    }
    let n_eff: f64 = weights.iter().sum();
    if !(n_eff > 0.0) {
        return Err(Error::ScaleUpdate("no positive-weight residual".into()));
    }
    if !residuals.iter().zip(weights).any(|(r, w)| *w > 0.0 && *r != 0.0) {
        return Err(Error::ScaleUpdate("all weighted residuals are zero".into()));
    }
    let (mut lo, mut hi) = match bracket {
        Some((lo, hi)) if lo > 0.0 && hi > lo => (lo, hi),
        Some((lo, hi)) => return Err(Error::ScaleUpdate(format!("invalid bracket ({lo}, {hi})"))),
        None => {
            let mut abs: Vec<f64> = residuals.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(r, _)| r.abs()).collect();
            abs.sort_by(f64::total_cmp);
            let mut center = crate::panel_data::sorted_quantile(&abs, 0.5) / 0.6745;
            if !(center > 0.0) {
                center = abs.iter().sum::<f64>() / abs.len() as f64;
            }
            (0.5 * center, 2.0 * center)
        }
    };
    let eval = |s: f64| scale_score(residuals, weights, loss, n_eff, s);
    let mut expansions = 0;
    while eval(lo).0 < 0.0 {
        if expansions == 10 {
            return Err(Error::ScaleUpdate(format!("no sign change below sigma={lo}")));
        }
        lo *= 0.5;
        expansions += 1;
    }
    expansions = 0;
    while eval(hi).0 > 0.0 {
        if expansions == 10 {
            return Err(Error::ScaleUpdate(format!("no sign change above sigma={hi}")));
        }
        hi *= 2.0;
        expansions += 1;
    }
    // safeguarded Newton
    let mut s = (lo * hi).sqrt();
    for _ in 0..200 {
        let (v, d) = eval(s);
        if v == 0.0 {
            return Ok(s);
        }
        if v > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = if d < 0.0 { s - v / d } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { (lo * hi).sqrt() };
        let step = (next - s).abs();
        s = next;
        if step <= 1e-12 * s || (hi - lo) <= 1e-10 * lo {
            break;
        }
    }
    Ok(s)
}

/// Scale update for every outcome using the current coefficients; each
/// search is bracketed around the current scale.
pub fn update_scales(prob: &WeightedProblem<'_>, fit: &FitResult) -> Result<Vec<f64>> {
    let b = prob.bundle;
    let hcount = b.n_outcomes();
    let mut res: Vec<Vec<f64>> = vec![Vec::new(); hcount];
    let mut wts: Vec<Vec<f64>> = vec![Vec::new(); hcount];
    for r in 0..b.n_rows() {
        let h = b.outcome(r);
        let i = b.unit(r);
        let base = b.y(r) - dot(b.row(r), &fit.beta[h]);
        for k in 0..prob.k {
            let w = prob.weight(i, k);
            if w > 0.0 {
                res[h].push(base - fit.zeta[k][h]);
                wts[h].push(w);
            }
        }
    }
    (0..hcount)
        .map(|h| {
            let s = fit.sigma[h];
            sigma_update(&res[h], &wts[h], &prob.loss, Some((0.5 * s, 2.0 * s)))
                .map_err(|e| Error::ScaleUpdate(format!("outcome '{}': {e}", b.outcome_names()[h])))
        })
        .collect()
}

fn max_change(a: &FitResult, b: &FitResult) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in a.beta.iter().flatten().zip(b.beta.iter().flatten()) {
        m = m.max((x - y).abs());
    }
    for (x, y) in a.zeta.iter().flatten().zip(b.zeta.iter().flatten()) {
        m = m.max((x - y).abs());
    }
    for (x, y) in a.sigma.iter().zip(&b.sigma) {
        m = m.max((x - y).abs());
    }
    m
}

/// Alternates [`irls_step`] and the scale update until the largest parameter
/// change drops below `tol`. Hitting `max_iter` is reported through
/// `converged = false`, not as an error.
pub fn fit_mstep(prob: &WeightedProblem<'_>, init: &FitResult, tol: f64, max_iter: usize) -> Result<FitResult> {
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    init.check(prob.bundle, prob.k)?;
    let mut cur = init.clone();
    for it in 1..=max_iter {
        let mut next = irls_step(prob, &cur)?;
        next.sigma = update_scales(prob, &next)?;
        let change = max_change(&cur, &next);
        cur = next;
        cur.iterations = it;
        if change < tol {
            cur.converged = true;
            return Ok(cur);
        }
    }
    cur.converged = false;
    cur.iterations = max_iter;
    Ok(cur)
}

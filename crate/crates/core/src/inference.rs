//! Sandwich covariance of the mixture estimates.
//!
//! Parameters are stacked as: for each outcome, its coefficients followed
//! by its `K` mass points; then one scale per outcome; then the free mass
//! logits `eta_k = log(pi_k / pi_K)`, `k < K`.
//!
//! The observed information `J` is obtained through the Oakes identity: the
//! responsibility-weighted complete-data Hessian (analytic) plus the
//! derivative of the expected complete-data score with respect to the
//! parameters that enter the responsibilities (central differences). The
//! meat `K` is the sum of outer products of unit scores, themselves
//! responsibility-weighted complete-data scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::design::{dot, DesignBundle};
use crate::error::{Error, Result};
use crate::mixture_em::{e_step, MixParams, MixtureFit};
use crate::robust_loss::LossConfig;

/// Index arithmetic for the stacked parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub p: usize,
    pub k: usize,
    pub h: usize,
}

impl ParamLayout {
    pub fn new(bundle: &DesignBundle, k: usize) -> Self {
        Self { p: bundle.fixed_dim(), k, h: bundle.n_outcomes() }
    }

    pub fn len(&self) -> usize {
        self.h * (self.p + self.k) + self.h + self.k - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn beta(&self, h: usize, j: usize) -> usize {
        h * (self.p + self.k) + j
    }

    pub fn zeta(&self, k: usize, h: usize) -> usize {
        h * (self.p + self.k) + self.p + k
    }

    pub fn sigma(&self, h: usize) -> usize {
        self.h * (self.p + self.k) + h
    }

    pub fn eta(&self, k: usize) -> usize {
        self.h * (self.p + self.k) + self.h + k
    }

    pub fn labels(&self, bundle: &DesignBundle) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        for (h, name) in bundle.outcome_names().iter().enumerate().take(self.h) {
            for c in bundle.columns() {
                out.push(format!("{name}:{}", c.label));
            }
            for k in 0..self.k {
                out.push(format!("{name}:zeta[{}]", k + 1));
            }
            debug_assert_eq!(out.len(), (h + 1) * (self.p + self.k));
        }
        for name in bundle.outcome_names() {
            out.push(format!("{name}:sigma"));
        }
        for k in 0..self.k - 1 {
            out.push(format!("eta[{}]", k + 1));
        }
        out
    }

    pub fn pack(&self, params: &MixParams) -> Vec<f64> {
        let mut phi = vec![0.0; self.len()];
        for h in 0..self.h {
            for j in 0..self.p {
                phi[self.beta(h, j)] = params.beta[h][j];
            }
            for k in 0..self.k {
                phi[self.zeta(k, h)] = params.zeta[k][h];
            }
            phi[self.sigma(h)] = params.sigma[h];
        }
        let last = params.pi[self.k - 1].ln();
        for k in 0..self.k - 1 {
            phi[self.eta(k)] = params.pi[k].ln() - last;
        }
        phi
    }

    pub fn unpack(&self, phi: &[f64]) -> MixParams {
        let beta = (0..self.h).map(|h| (0..self.p).map(|j| phi[self.beta(h, j)]).collect()).collect();
        let zeta = (0..self.k).map(|k| (0..self.h).map(|h| phi[self.zeta(k, h)]).collect()).collect();
        let sigma = (0..self.h).map(|h| phi[self.sigma(h)]).collect();
        let eta: Vec<f64> = (0..self.k).map(|k| if k + 1 < self.k { phi[self.eta(k)] } else { 0.0 }).collect();
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        MixParams { beta, zeta, pi: e.iter().map(|v| v / s).collect(), sigma }
    }
}

/// Complete-data scores `s_ik` (units x K x P, flattened).
fn complete_scores(bundle: &DesignBundle, params: &MixParams, loss: &LossConfig, lay: &ParamLayout) -> Vec<f64> {
    let np = lay.len();
    let n = bundle.n_units();
    let mut out = vec![0.0; n * lay.k * np];
    for i in 0..n {
        for r in bundle.unit_rows(i) {
            let h = bundle.outcome(r);
            let s = params.sigma[h];
            let x = bundle.row(r);
            let base = bundle.y(r) - dot(x, &params.beta[h]);
            for k in 0..lay.k {
                let cell = &mut out[(i * lay.k + k) * np..(i * lay.k + k + 1) * np];
                let u = (base - params.zeta[k][h]) / s;
                let ps = loss.psi(u);
                for (j, xj) in x.iter().enumerate() {
                    cell[lay.beta(h, j)] += ps * xj / s;
                }
                cell[lay.zeta(k, h)] += ps / s;
                cell[lay.sigma(h)] += (ps * u - 1.0) / s;
            }
        }
        for k in 0..lay.k {
            let cell = &mut out[(i * lay.k + k) * np..(i * lay.k + k + 1) * np];
            for j in 0..lay.k - 1 {
                cell[lay.eta(j)] = f64::from(u8::from(j == k)) - params.pi[j];
            }
        }
    }
    out
}

/// Unit scores `S_i = sum_k z_ik s_ik` at the given parameters (Fisher's
/// identity). Rows are units.
pub fn unit_scores(bundle: &DesignBundle, params: &MixParams, loss: &LossConfig) -> Result<Vec<Vec<f64>>> {
    let lay = ParamLayout::new(bundle, params.k());
    let np = lay.len();
    let z = e_step(bundle, params, loss)?.responsibilities;
    let s = complete_scores(bundle, params, loss, &lay);
    Ok((0..bundle.n_units())
        .map(|i| {
            let mut acc = vec![0.0; np];
            for k in 0..lay.k {
                let w = z[i * lay.k + k];
                for (a, v) in acc.iter_mut().zip(&s[(i * lay.k + k) * np..(i * lay.k + k + 1) * np]) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect())
}

/// Responsibility-weighted complete-data Hessian of the log-likelihood.
fn expected_complete_hessian(bundle: &DesignBundle, params: &MixParams, loss: &LossConfig, lay: &ParamLayout, z: &[f64]) -> DMatrix<f64> {
    let np = lay.len();
    let mut hm = DMatrix::<f64>::zeros(np, np);
    let n = bundle.n_units();
    for i in 0..n {
        for r in bundle.unit_rows(i) {
            let h = bundle.outcome(r);
            let s = params.sigma[h];
            let s2 = s * s;
            let x = bundle.row(r);
            let base = bundle.y(r) - dot(x, &params.beta[h]);
            let is = lay.sigma(h);
            let mut a_mm = 0.0;
            let mut a_ms = 0.0;
            for k in 0..lay.k {
                let w = z[i * lay.k + k];
                if w == 0.0 {
                    continue;
                }
                let u = (base - params.zeta[k][h]) / s;
                let ps = loss.psi(u);
                let pp = loss.psi_prime(u);
                let mm = -w * pp / s2;
                let ms = -w * (ps + pp * u) / s2;
                a_mm += mm;
                a_ms += ms;
                let iz = lay.zeta(k, h);
                hm[(iz, iz)] += mm;
                for (j, xj) in x.iter().enumerate() {
                    hm[(lay.beta(h, j), iz)] += mm * xj;
                }
                hm[(iz, is)] += ms;
                hm[(is, is)] += w * (1.0 - 2.0 * ps * u - pp * u * u) / s2;
            }
            for (j1, x1) in x.iter().enumerate() {
                let b1 = lay.beta(h, j1);
                for (j2, x2) in x.iter().enumerate().skip(j1) {
                    hm[(b1, lay.beta(h, j2))] += a_mm * x1 * x2;
                }
                hm[(b1, is)] += a_ms * x1;
            }
        }
    }
    for a in 0..lay.k - 1 {
        for b in 0..lay.k - 1 {
            let d = if a == b { params.pi[a] } else { 0.0 };
            hm[(lay.eta(a), lay.eta(b))] = -(n as f64) * (d - params.pi[a] * params.pi[b]);
        }
    }
    // everything above was accumulated into the upper triangle
    for c1 in 0..np {
        for c2 in (c1 + 1)..np {
            hm[(c2, c1)] = hm[(c1, c2)];
        }
    }
    hm
}

/// Derivative of the expected complete-data score with respect to the
/// parameters entering the responsibilities, by central differences.
fn responsibility_term(
    bundle: &DesignBundle,
    params: &MixParams,
    loss: &LossConfig,
    lay: &ParamLayout,
    labels: &[String],
) -> Result<DMatrix<f64>> {
    let np = lay.len();
    let s = complete_scores(bundle, params, loss, lay);
    let phi = lay.pack(params);
    let weighted_score = |z: &[f64]| -> DVector<f64> {
        let mut g = DVector::zeros(np);
        for (ik, w) in z.iter().enumerate() {
            if *w != 0.0 {
                for (a, v) in g.iter_mut().zip(&s[ik * np..(ik + 1) * np]) {
                    *a += w * v;
                }
            }
        }
        g
    };
    let step_base = f64::EPSILON.cbrt();
    let mut d = DMatrix::<f64>::zeros(np, np);
    for j in 0..np {
        let hj = step_base * phi[j].abs().max(1.0);
        let mut plus = phi.clone();
        plus[j] += hj;
        let mut minus = phi.clone();
        minus[j] -= hj;
        let zp = e_step(bundle, &lay.unpack(&plus), loss)?.responsibilities;
        let zm = e_step(bundle, &lay.unpack(&minus), loss)?.responsibilities;
        let col = (weighted_score(&zp) - weighted_score(&zm)) / (2.0 * hj);
        if let Some(bad) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(labels[bad].clone()));
        }
        d.set_column(j, &col);
    }
    Ok(d)
}

/// Observed information through the Oakes identity (symmetrized), together
/// with the relative asymmetry measured before symmetrization.
pub fn oakes_information_with_asymmetry(fit: &MixtureFit, bundle: &DesignBundle) -> Result<(DMatrix<f64>, f64)> {
    let params = fit.params();
    let lay = ParamLayout::new(bundle, fit.k);
    let labels = lay.labels(bundle);
    let z = e_step(bundle, &params, &fit.loss)?.responsibilities;
    let hq = expected_complete_hessian(bundle, &params, &fit.loss, &lay, &z);
    let d = responsibility_term(bundle, &params, &fit.loss, &lay, &labels)?;
    let j = -(hq + d);
    for (idx, v) in j.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(labels[idx % lay.len()].clone()));
        }
    }
    let norm = inf_norm(&j);
    let asym = inf_norm(&(&j - j.transpose())) / norm.max(f64::MIN_POSITIVE);
    Ok(((&j + j.transpose()) * 0.5, asym))
}

pub fn oakes_information(fit: &MixtureFit, bundle: &DesignBundle) -> Result<DMatrix<f64>> {
    oakes_information_with_asymmetry(fit, bundle).map(|(j, _)| j)
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `sum_i S_i S_i'`.
pub fn score_covariance(fit: &MixtureFit, bundle: &DesignBundle) -> Result<DMatrix<f64>> {
    let scores = unit_scores(bundle, &fit.params(), &fit.loss)?;
    let np = ParamLayout::new(bundle, fit.k).len();
    let mut km = DMatrix::<f64>::zeros(np, np);
    for s in &scores {
        let v = DVector::from_column_slice(s);
        km.ger(1.0, &v, &v, 1.0);
    }
    Ok(km)
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEstimate {
    pub labels: Vec<String>,
    #[serde(skip)]
    pub j: DMatrix<f64>,
    #[serde(skip)]
    pub kmat: DMatrix<f64>,
    #[serde(skip)]
    pub sandwich: DMatrix<f64>,
    pub se: Vec<f64>,
    /// Delta-method standard errors of the masses.
    pub pi_se: Vec<f64>,
    /// `||J - J'|| / ||J||` (infinity norm) before symmetrization.
    pub asymmetry: f64,
    #[serde(skip)]
    pub layout: Option<ParamLayout>,
}

impl CovarianceEstimate {
    pub fn layout(&self) -> ParamLayout {
        self.layout.expect("layout is set by sandwich()")
    }

    pub fn beta_se(&self, h: usize, j: usize) -> f64 {
        self.se[self.layout().beta(h, j)]
    }

    pub fn zeta_se(&self, k: usize, h: usize) -> f64 {
        self.se[self.layout().zeta(k, h)]
    }

    pub fn sigma_se(&self, h: usize) -> f64 {
        self.se[self.layout().sigma(h)]
    }
}

/// `J^-1 K J^-1` and its square-root diagonal.
pub fn sandwich_from(
    j: DMatrix<f64>,
    kmat: DMatrix<f64>,
    labels: Vec<String>,
    pi: &[f64],
    asymmetry: f64,
    layout: ParamLayout,
) -> Result<CovarianceEstimate> {
    let np = j.nrows();
    let d: Vec<f64> = (0..np).map(|a| j[(a, a)].abs().sqrt().max(f64::MIN_POSITIVE)).collect();
    let scaled = DMatrix::from_fn(np, np, |a, b| j[(a, b)] / (d[a] * d[b]));
    let eig = SymmetricEigen::new(scaled.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-12) {
        let (idx, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
        let v = eig.eigenvectors.column(idx);
        let worst = (0..np).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        return Err(Error::Indefinite(format!("smallest scaled eigenvalue {min_eig:.3e}, direction dominated by {}", labels[worst])));
    }
    let inv_scaled = scaled.cholesky().ok_or_else(|| Error::Indefinite("Cholesky factorization failed".into()))?.inverse();
    let jinv = DMatrix::from_fn(np, np, |a, b| inv_scaled[(a, b)] / (d[a] * d[b]));
    let mut cov = &jinv * &kmat * &jinv;
    cov = (&cov + cov.transpose()) * 0.5;
    let mut se = Vec::with_capacity(np);
    for a in 0..np {
        let v = cov[(a, a)];
        if v < 0.0 {
            return Err(Error::Indefinite(format!("negative variance for {}", labels[a])));
        }
        se.push(v.sqrt());
    }
    let kk = pi.len();
    let pi_se = (0..kk)
        .map(|k| {
            // d pi_k / d eta_j = pi_k (delta_kj - pi_j)
            let g: Vec<f64> = (0..kk - 1).map(|jj| pi[k] * (f64::from(u8::from(k == jj)) - pi[jj])).collect();
            let mut var = 0.0;
            for (a, ga) in g.iter().enumerate() {
                for (b, gb) in g.iter().enumerate() {
                    var += ga * gb * cov[(layout.eta(a), layout.eta(b))];
                }
            }
            var.max(0.0).sqrt()
        })
        .collect();
    Ok(CovarianceEstimate { labels, j, kmat, sandwich: cov, se, pi_se, asymmetry, layout: Some(layout) })
}

pub fn sandwich(fit: &MixtureFit, bundle: &DesignBundle) -> Result<CovarianceEstimate> {
    let (j, asym) = oakes_information_with_asymmetry(fit, bundle)?;
    let kmat = score_covariance(fit, bundle)?;
    let lay = ParamLayout::new(bundle, fit.k);
    sandwich_from(j, kmat, lay.labels(bundle), &fit.pi, asym, lay)
}

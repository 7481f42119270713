//! EM estimation of the finite mixture of ALID regressions.
//!
//! The E-step computes posterior component probabilities per unit with a
//! log-sum-exp shift. The M-step updates the masses in closed form and hands
//! the regression part to [`crate::weighted_fit::fit_mstep`]. Because every
//! M-step piece is a non-decreasing move on the expected complete-data
//! log-likelihood, the observed log-likelihood never decreases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{dot, DesignBundle};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, gauss_hermite, logsumexp};
use crate::robust_loss::LossConfig;
use crate::weighted_fit::{fit_mstep, sigma_update, FitResult, WeightedProblem};

/// Masses below this during EM abort the fit.
pub const COLLAPSE_MASS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `|l_r - l_(r-1)| < epsilon * |l_(r-1)|`.
    #[default]
    LoglikDiff,
    /// Largest absolute parameter change below `epsilon`.
    ParamNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmControls {
    pub epsilon: f64,
    pub max_iter: usize,
    pub min_mass: f64,
    pub criterion: Criterion,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for EmControls {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iter: 500,
            min_mass: 0.01,
            criterion: Criterion::LoglikDiff,
            inner_tol: crate::weighted_fit::DEFAULT_INNER_TOL,
            inner_max_iter: crate::weighted_fit::DEFAULT_INNER_MAX_ITER,
        }
    }
}

impl EmControls {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::Config("inner tolerance must be positive".into()));
        }
        if !(self.min_mass >= 0.0 && self.min_mass * (k as f64) < 1.0) {
            return Err(Error::Config(format!("min_mass {} must lie in [0, 1/K) for K={k}", self.min_mass)));
        }
        Ok(())
    }
}

/// Full parameter set of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixParams {
    /// Per outcome, aligned with the design columns.
    pub beta: Vec<Vec<f64>>,
    /// `zeta[k][h]`.
    pub zeta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MixParams {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self, bundle: &DesignBundle) -> Result<()> {
        let k = self.pi.len();
        if k == 0 {
            return Err(Error::Dimension("at least one component is required".into()));
        }
        self.as_fit().check(bundle, k)?;
        if self.pi.iter().any(|p| !(*p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("masses must be non-negative and sum to one".into()));
        }
        if self.beta.iter().flatten().chain(self.zeta.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite regression parameter".into()));
        }
        Ok(())
    }

    fn as_fit(&self) -> FitResult {
        FitResult {
            beta: self.beta.clone(),
            zeta: self.zeta.clone(),
            sigma: self.sigma.clone(),
            iterations: 0,
            converged: false,
            degenerate: vec![],
        }
    }

    /// Reorders components by `order` (new position `j` takes old `order[j]`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            beta: self.beta.clone(),
            zeta: order.iter().map(|&k| self.zeta[k].clone()).collect(),
            pi: order.iter().map(|&k| self.pi[k]).collect(),
            sigma: self.sigma.clone(),
        }
    }

    /// Largest absolute difference over all parameters.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.beta.iter().flatten().chain(self.zeta.iter().flatten()).chain(&self.pi).chain(&self.sigma);
        let b = other.beta.iter().flatten().chain(other.zeta.iter().flatten()).chain(&other.pi).chain(&other.sigma);
        a.zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

/// A converged (or iteration-capped) mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub loss: LossConfig,
    pub k: usize,
    pub beta: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub loglik: f64,
    /// Units x K, row-major.
    pub responsibilities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the start that produced this fit within its multi-start run.
    pub start_id: usize,
    /// Observed log-likelihood after every EM iteration, starting value first.
    pub trace: Vec<f64>,
}

impl MixtureFit {
    pub fn q(&self) -> f64 {
        self.loss.q
    }

    pub fn params(&self) -> MixParams {
        MixParams { beta: self.beta.clone(), zeta: self.zeta.clone(), pi: self.pi.clone(), sigma: self.sigma.clone() }
    }

    pub fn n_units(&self) -> usize {
        self.responsibilities.len() / self.k
    }

    pub fn responsibility(&self, i: usize, k: usize) -> f64 {
        self.responsibilities[i * self.k + k]
    }

    /// Maximum a posteriori component per unit (lowest index on ties).
    pub fn map_assignments(&self) -> Vec<usize> {
        self.responsibilities
            .chunks(self.k)
            .map(|row| row.iter().enumerate().fold((0, f64::MIN), |a, (k, &v)| if v > a.1 { (k, v) } else { a }).0)
            .collect()
    }

    pub fn min_mass(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Log ALID density of all responses of unit `i` under component `k`.
pub fn unit_component_logdensity(bundle: &DesignBundle, params: &MixParams, loss: &LossConfig, i: usize, k: usize) -> f64 {
    let log_norm: Vec<f64> = params.sigma.iter().map(|&s| (loss.unit_norm_const() * s).ln()).collect();
    bundle
        .unit_rows(i)
        .map(|r| {
            let h = bundle.outcome(r);
            let u = (bundle.y(r) - dot(bundle.row(r), &params.beta[h]) - params.zeta[k][h]) / params.sigma[h];
            -loss.rho(u) - log_norm[h]
        })
        .sum()
}

/// Per-unit, per-component log densities (units x K, row-major).
pub fn component_logdensities(bundle: &DesignBundle, params: &MixParams, loss: &LossConfig) -> Vec<f64> {
    let k_count = params.k();
    let log_norm: Vec<f64> = params.sigma.iter().map(|&s| (loss.unit_norm_const() * s).ln()).collect();
    let mut out = vec![0.0; bundle.n_units() * k_count];
    for i in 0..bundle.n_units() {
        let cell = &mut out[i * k_count..(i + 1) * k_count];
        for r in bundle.unit_rows(i) {
            let h = bundle.outcome(r);
            let base = bundle.y(r) - dot(bundle.row(r), &params.beta[h]);
            for (k, v) in cell.iter_mut().enumerate() {
                *v -= loss.rho((base - params.zeta[k][h]) / params.sigma[h]) + log_norm[h];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// Units x K, row-major; rows sum to one.
    pub responsibilities: Vec<f64>,
    /// Per-unit log marginal density.
    pub unit_loglik: Vec<f64>,
    pub loglik: f64,
}

pub fn e_step(bundle: &DesignBundle, params: &MixParams, loss: &LossConfig) -> Result<EStep> {
    params.validate(bundle)?;
    let k_count = params.k();
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let mut resp = component_logdensities(bundle, params, loss);
    let mut unit_loglik = Vec::with_capacity(bundle.n_units());
    for row in resp.chunks_mut(k_count) {
        for (v, lp) in row.iter_mut().zip(&log_pi) {
            *v += lp;
        }
        let l = logsumexp(row);
        if !l.is_finite() {
            return Err(Error::NonFinite("unit log-likelihood".into()));
        }
        for v in row.iter_mut() {
            *v = (*v - l).exp();
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
        unit_loglik.push(l);
    }
    let loglik = unit_loglik.iter().sum();
    Ok(EStep { responsibilities: resp, unit_loglik, loglik })
}

/// Column means of the responsibility matrix.
pub fn m_step_priors(responsibilities: &[f64], k: usize) -> Vec<f64> {
    let n = responsibilities.len() / k;
    let mut pi = vec![0.0; k];
    for row in responsibilities.chunks(k) {
        for (p, z) in pi.iter_mut().zip(row) {
            *p += z;
        }
    }
    for p in &mut pi {
        *p /= n as f64;
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|p| p / total).collect()
}

/// Where an EM run starts.
#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    /// Homogeneous fit plus Gauss-Hermite offsets of the intercepts.
    Deterministic,
    /// Multiplicative jitter of the deterministic start.
    Perturbed {
        seed: u64,
        index: usize,
    },
    Given(MixParams),
}

/// Least-squares fit with a per-outcome intercept; returns
/// `(beta, intercepts, residual sd, residuals per outcome)`.
#[allow(clippy::type_complexity)]
fn homogeneous_fit(bundle: &DesignBundle) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    use nalgebra::{DMatrix, DVector};
    let p = bundle.fixed_dim();
    let hcount = bundle.n_outcomes();
    let mut betas = Vec::new();
    let mut intercepts = Vec::new();
    let mut sds = Vec::new();
    let mut residuals = Vec::new();
    for h in 0..hcount {
        let rows: Vec<usize> = (0..bundle.n_rows()).filter(|&r| bundle.outcome(r) == h).collect();
        if rows.is_empty() {
            return Err(Error::EmptyPanel(format!("outcome '{}' has no responses", bundle.outcome_names()[h])));
        }
        let x = DMatrix::from_fn(rows.len(), p + 1, |r, c| if c < p { bundle.row(rows[r])[c] } else { 1.0 });
        let y = DVector::from_fn(rows.len(), |r, _| bundle.y(rows[r]));
        let svd = x.clone().svd(true, true);
        let sol = svd.solve(&y, 1e-12).map_err(|e| Error::Domain(e.to_string()))?;
        let res = &y - &x * &sol;
        let dof = (rows.len() as f64 - (p + 1) as f64).max(1.0);
        let sd = (res.norm_squared() / dof).sqrt();
        betas.push(sol.iter().take(p).copied().collect());
        intercepts.push(sol[p]);
        sds.push(if sd > 0.0 { sd } else { 1.0 });
        residuals.push(res.iter().copied().collect());
    }
    Ok((betas, intercepts, sds, residuals))
}

/// The deterministic start for `k` components.
pub fn deterministic_start(bundle: &DesignBundle, loss: &LossConfig, k: usize) -> Result<MixParams> {
    let (beta, intercepts, sds, residuals) = homogeneous_fit(bundle)?;
    let (nodes, _) = gauss_hermite(k);
    let zeta = nodes.iter().map(|z| intercepts.iter().zip(&sds).map(|(a, s)| a + z * s).collect()).collect();
    let sigma = residuals
        .iter()
        .zip(&sds)
        .map(|(res, sd)| {
            let w = vec![1.0; res.len()];
            sigma_update(res, &w, loss, None).unwrap_or(*sd)
        })
        .collect();
    Ok(MixParams { beta, zeta, pi: vec![1.0 / k as f64; k], sigma })
}

/// Deterministic start with `beta * (1 + 0.1 N)` and `zeta * (1 + 0.25 N)`.
pub fn perturbed_start(base: &MixParams, seed: u64, index: usize) -> MixParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[base.k() as u64, index as u64]));
    let mut out = base.clone();
    for b in out.beta.iter_mut().flatten() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *b *= 1.0 + 0.1 * n;
    }
    for z in out.zeta.iter_mut().flatten() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *z *= 1.0 + 0.25 * n;
    }
    out
}

fn resolve_start(bundle: &DesignBundle, loss: &LossConfig, k: usize, start: &StartSpec) -> Result<MixParams> {
    match start {
        StartSpec::Deterministic => deterministic_start(bundle, loss, k),
        StartSpec::Perturbed { seed, index } => Ok(perturbed_start(&deterministic_start(bundle, loss, k)?, *seed, *index)),
        StartSpec::Given(p) => {
            if p.k() != k {
                return Err(Error::Dimension(format!("start has {} components, expected {k}", p.k())));
            }
            Ok(p.clone())
        }
    }
}

/// Sorts components by the first-outcome mass point.
fn sort_components(params: &MixParams, resp: &[f64]) -> (MixParams, Vec<f64>) {
    let k = params.k();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| params.zeta[a][0].total_cmp(&params.zeta[b][0]));
    let resp = resp.chunks(k).flat_map(|row| order.iter().map(move |&j| row[j])).collect();
    (params.permuted(&order), resp)
}

/// Runs EM from one start.
pub fn em_fit(bundle: &DesignBundle, loss: LossConfig, k: usize, controls: &EmControls, start: StartSpec) -> Result<MixtureFit> {
    controls.validate(k)?;
    let mut params = resolve_start(bundle, &loss, k, &start)?;
    params.validate(bundle)?;
    let mut estep = e_step(bundle, &params, &loss)?;
    let mut trace = vec![estep.loglik];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=controls.max_iter {
        iterations = it;
        let pi = m_step_priors(&estep.responsibilities, k);
        if let Some((j, &m)) = pi.iter().enumerate().find(|(_, &m)| m < COLLAPSE_MASS) {
            return Err(Error::DegenerateComponent { component: j + 1, mass: m });
        }
        let prob = WeightedProblem::new(bundle, &estep.responsibilities, k, loss)?;
        let inner = fit_mstep(&prob, &params.as_fit(), controls.inner_tol, controls.inner_max_iter)?;
        let next = MixParams { beta: inner.beta, zeta: inner.zeta, pi, sigma: inner.sigma };
        let next_estep = e_step(bundle, &next, &loss)?;
        let prev = estep.loglik;
        let change = match controls.criterion {
            Criterion::LoglikDiff => (next_estep.loglik - prev).abs() / prev.abs().max(f64::MIN_POSITIVE),
            Criterion::ParamNorm => next.max_abs_diff(&params),
        };
        params = next;
        estep = next_estep;
        trace.push(estep.loglik);
        if !estep.loglik.is_finite() {
            return Err(Error::NonFinite("log-likelihood".into()));
        }
        if change < controls.epsilon {
            converged = true;
            break;
        }
    }
    let (params, resp) = sort_components(&params, &estep.responsibilities);
    Ok(MixtureFit {
        loss,
        k,
        beta: params.beta,
        zeta: params.zeta,
        pi: params.pi,
        sigma: params.sigma,
        loglik: estep.loglik,
        responsibilities: resp,
        iterations,
        converged,
        start_id: 0,
        trace,
    })
}

/// Highest log-likelihood among converged fits, lower start id on ties; if
/// none converged, the best of all.
fn select_best(results: Vec<(usize, Result<MixtureFit>)>) -> Result<MixtureFit> {
    let mut errors = Vec::new();
    let mut best_conv: Option<MixtureFit> = None;
    let mut best_any: Option<MixtureFit> = None;
    for (id, res) in results {
        match res {
            Ok(mut fit) => {
                fit.start_id = id;
                let better = |cur: &Option<MixtureFit>| cur.as_ref().is_none_or(|b| fit.loglik > b.loglik);
                if fit.converged && better(&best_conv) {
                    best_conv = Some(fit.clone());
                }
                if better(&best_any) {
                    best_any = Some(fit);
                }
            }
            Err(e) => errors.push(format!("start {id}: {e}")),
        }
    }
    best_conv.or(best_any).ok_or(Error::MultiStartFailed(errors))
}

/// One deterministic start plus `d * (K - 1)` seeded perturbations, run in
/// parallel; `extra` starts are appended after them.
pub fn multi_start_with(
    bundle: &DesignBundle,
    loss: LossConfig,
    k: usize,
    controls: &EmControls,
    d: usize,
    seed: u64,
    extra: &[MixParams],
) -> Result<MixtureFit> {
    if d == 0 {
        return Err(Error::Config("replication factor d must be at least 1".into()));
    }
    controls.validate(k)?;
    let mut starts = vec![StartSpec::Deterministic];
    starts.extend((1..=d * (k - 1)).map(|index| StartSpec::Perturbed { seed, index }));
    starts.extend(extra.iter().cloned().map(StartSpec::Given));
    let results: Vec<(usize, Result<MixtureFit>)> =
        starts.into_par_iter().enumerate().map(|(id, s)| (id, em_fit(bundle, loss, k, controls, s))).collect();
    select_best(results)
}

pub fn multi_start(bundle: &DesignBundle, loss: LossConfig, k: usize, controls: &EmControls, d: usize, seed: u64) -> Result<MixtureFit> {
    multi_start_with(bundle, loss, k, controls, d, seed, &[])
}

/// Number of starts [`multi_start`] attempts.
pub fn n_starts(k: usize, d: usize) -> usize {
    1 + d * k.saturating_sub(1)
}

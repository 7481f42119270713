//! Choosing the number of mass points.
//!
//! `K` is swept upwards. Each `K` is fitted by multi-start EM; the start set
//! also contains the previous optimum with its heaviest component split in
//! two, which makes the maximized log-likelihood non-decreasing in `K`. Fits
//! whose smallest mass falls below `min_mass` are kept in the report but are
//! not eligible for selection.

use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::design::DesignBundle;
use crate::error::{Error, Result};
use crate::mixture_em::{multi_start_with, EmControls, MixParams, MixtureFit};
use crate::robust_loss::LossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionCriterion {
    #[default]
    Bic,
    Aic,
}

impl fmt::Display for SelectionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionCriterion::Bic => "BIC",
            SelectionCriterion::Aic => "AIC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub k: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub admissible: bool,
    pub min_mass: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub records: Vec<SelectionRecord>,
    pub chosen_k: usize,
    pub criterion: SelectionCriterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub criterion: SelectionCriterion,
    /// Add the split previous optimum to each start set.
    pub warm_start: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { criterion: SelectionCriterion::Bic, warm_start: true }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SelectionReport,
    pub chosen: MixtureFit,
    /// Fit per swept `K`, `None` where every start failed.
    pub fits: Vec<Option<MixtureFit>>,
}

/// Free parameters: coefficients and mass points per outcome, `K - 1`
/// masses and one scale per outcome.
pub fn n_params(fixed_dim: usize, n_outcomes: usize, k: usize) -> usize {
    fixed_dim * n_outcomes + k * n_outcomes + (k - 1) + n_outcomes
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

/// BIC with the number of units as sample size.
pub fn bic(loglik: f64, n_params: usize, n_units: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_units as f64).ln()
}

pub fn record_for(fit: &MixtureFit, bundle: &DesignBundle, min_mass: f64) -> SelectionRecord {
    let np = n_params(bundle.fixed_dim(), bundle.n_outcomes(), fit.k);
    let min = fit.min_mass();
    SelectionRecord {
        k: fit.k,
        loglik: fit.loglik,
        n_params: np,
        aic: aic(fit.loglik, np),
        bic: bic(fit.loglik, np, bundle.n_units()),
        admissible: min >= min_mass,
        min_mass: min,
        converged: fit.converged,
        error: None,
    }
}

/// Splits the heaviest component of `fit` into two copies offset by
/// `+-delta * sigma_h`. With `delta = 0` the result is an exact EM fixed
/// point with the same log-likelihood.
pub fn split_heaviest(fit: &MixtureFit, delta: f64) -> MixParams {
    let j = (0..fit.k).fold(0, |b, k| if fit.pi[k] > fit.pi[b] { k } else { b });
    let mut zeta = fit.zeta.clone();
    let mut pi = fit.pi.clone();
    let lower: Vec<f64> = fit.zeta[j].iter().zip(&fit.sigma).map(|(z, s)| z - delta * s).collect();
    let upper: Vec<f64> = fit.zeta[j].iter().zip(&fit.sigma).map(|(z, s)| z + delta * s).collect();
    zeta[j] = lower;
    zeta.insert(j + 1, upper);
    pi[j] *= 0.5;
    pi.insert(j + 1, pi[j]);
    MixParams { beta: fit.beta.clone(), zeta, pi, sigma: fit.sigma.clone() }
}

/// Selects the admissible record minimizing the criterion (smaller `K` on
/// ties).
pub fn choose(records: &[SelectionRecord], criterion: SelectionCriterion) -> Option<usize> {
    records
        .iter()
        .filter(|r| r.admissible && r.error.is_none())
        .map(|r| (r.k, if criterion == SelectionCriterion::Bic { r.bic } else { r.aic }))
        .fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    bundle: &DesignBundle,
    loss: LossConfig,
    k_range: RangeInclusive<usize>,
    controls: &EmControls,
    d: usize,
    seed: u64,
    options: SweepOptions,
) -> Result<SweepOutcome> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(Error::Config(format!("invalid K range {k_range:?}")));
    }
    let mut records = Vec::new();
    let mut fits = Vec::new();
    let mut previous: Option<MixtureFit> = None;
    for k in k_range {
        let extra: Vec<MixParams> = match (&previous, options.warm_start) {
            (Some(prev), true) if prev.k + 1 == k => {
                vec![split_heaviest(prev, 1e-3), split_heaviest(prev, 0.0)]
            }
            _ => vec![],
        };
        match multi_start_with(bundle, loss, k, controls, d, seed, &extra) {
            Ok(fit) => {
                records.push(record_for(&fit, bundle, controls.min_mass));
                previous = Some(fit.clone());
                fits.push(Some(fit));
            }
            Err(e) => {
                records.push(SelectionRecord {
                    k,
                    loglik: f64::NAN,
                    n_params: n_params(bundle.fixed_dim(), bundle.n_outcomes(), k),
                    aic: f64::NAN,
                    bic: f64::NAN,
                    admissible: false,
                    min_mass: f64::NAN,
                    converged: false,
                    error: Some(e.to_string()),
                });
                fits.push(None);
            }
        }
    }
    if fits.iter().all(Option::is_none) {
        return Err(Error::MultiStartFailed(records.iter().map(|r| format!("K={}: {}", r.k, r.error.as_deref().unwrap_or(""))).collect()));
    }
    let Some(chosen_k) = choose(&records, options.criterion) else {
        return Err(Error::NoAdmissible(
            records
                .iter()
                .map(|r| match &r.error {
                    Some(e) => format!("K={}: {e}", r.k),
                    None => format!("K={}: min mass {:.4}", r.k, r.min_mass),
                })
                .collect(),
        ));
    };
    let chosen = fits.iter().flatten().find(|f| f.k == chosen_k).cloned().expect("chosen K has a fit");
    Ok(SweepOutcome { report: SelectionReport { records, chosen_k, criterion: options.criterion }, chosen, fits })
}

impl fmt::Display for SelectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>3} {:>14} {:>8} {:>14} {:>14} {:>9} {:>10}", "K", "loglik", "params", "AIC", "BIC", "min pi", "admissible")?;
        for r in &self.records {
            let mark = if r.k == self.chosen_k { " *" } else { "" };
            writeln!(
                f,
                "{:>3} {:>14.3} {:>8} {:>14.3} {:>14.3} {:>9.4} {:>10}{mark}",
                r.k,
                r.loglik,
                r.n_params,
                r.aic,
                r.bic,
                r.min_mass,
                if r.admissible { "yes" } else { "no" }
            )?;
        }
        write!(f, "selected K = {} by {}", self.chosen_k, self.criterion)
    }
}

//! Synthetic panels drawn from the mixture of ALID regressions, with optional
//! correlation between unit covariate means and the random intercept, and
//! covariate-driven (missing at random) monotone dropout.
//!
//! Three independent random streams are derived from the scenario seed: one
//! for memberships and covariates, one for dropout and one for responses.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{build_design, ColumnKind, CovariateRole, DesignBundle, DesignOptions, Role};
use crate::error::{Error, Result};
use crate::inference::{sandwich, CovarianceEstimate};
use crate::mixture_em::{multi_start, EmControls, MixtureFit};
use crate::numeric::derive_seed;
use crate::panel_data::{Observation, PanelDataset, UnitRecord};
use crate::robust_loss::{AlidParams, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec {
    /// Independent `N(0, sd^2)` draws at every occasion.
    Fixed { name: String, sd: f64 },
    /// Unit mean plus centred within-unit deviations. An `endogenous` mean is
    /// correlated with the unit's mass point at strength `rho_endo`.
    Decomposed { name: String, between_sd: f64, within_sd: f64, endogenous: bool },
    /// Bernoulli(`p`) drawn once per unit.
    TimeConstantBinary { name: String, p: f64 },
}

impl CovariateSpec {
    pub fn name(&self) -> &str {
        match self {
            CovariateSpec::Fixed { name, .. } | CovariateSpec::Decomposed { name, .. } | CovariateSpec::TimeConstantBinary { name, .. } => {
                name
            }
        }
    }

    pub fn role(&self) -> Role {
        match self {
            CovariateSpec::Fixed { .. } => Role::Fixed,
            CovariateSpec::Decomposed { .. } => Role::Decomposed,
            CovariateSpec::TimeConstantBinary { .. } => Role::TimeConstant,
        }
    }
}

/// Monotone dropout: from the second wave on, a unit still present leaves
/// with probability `logistic(logit(rate) + slope * x)`, where `x` is the
/// named covariate at the previous wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub slope: f64,
    pub covariate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub t: usize,
    pub q: f64,
    pub c: f64,
    pub outcomes: Vec<String>,
    pub covariates: Vec<CovariateSpec>,
    /// `beta[h][j]`: effect of covariate `j` (its within effect when
    /// decomposed).
    pub beta: Vec<Vec<f64>>,
    /// `lambda[h][j]`: extra effect of the unit mean of covariate `j`; only
    /// read for decomposed covariates.
    pub lambda: Vec<Vec<f64>>,
    /// `zeta[k][h]`.
    pub zeta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_endo: f64,
    pub dropout: Option<DropoutSpec>,
    pub seed: u64,
}

impl SimScenario {
    /// `n = 500`, `T = 3`, two outcomes, three well-separated components, one
    /// fixed, two decomposed (one of them endogenous when `rho_endo != 0`)
    /// and one binary time-constant covariate.
    pub fn default_scenario(seed: u64) -> Self {
        Self {
            n: 500,
            t: 3,
            q: 0.5,
            c: crate::robust_loss::DEFAULT_TUNING,
            outcomes: vec!["y1".into(), "y2".into()],
            covariates: vec![
                CovariateSpec::Fixed { name: "age".into(), sd: 1.0 },
                CovariateSpec::Decomposed { name: "income".into(), between_sd: 1.0, within_sd: 0.7, endogenous: false },
                CovariateSpec::Decomposed { name: "stress".into(), between_sd: 1.0, within_sd: 0.7, endogenous: true },
                CovariateSpec::TimeConstantBinary { name: "female".into(), p: 0.5 },
            ],
            beta: vec![vec![0.5, 1.0, -0.5, 0.8], vec![-0.3, 0.6, 0.4, -0.6]],
            lambda: vec![vec![0.0, 0.3, 0.2, 0.0], vec![0.0, -0.2, 0.3, 0.0]],
            zeta: vec![vec![-3.0, -2.5], vec![0.0, 0.0], vec![3.0, 2.5]],
            pi: vec![0.3, 0.4, 0.3],
            sigma: vec![1.0, 1.0],
            rho_endo: 0.0,
            dropout: None,
            seed,
        }
    }

    /// A small two-component panel for examples and quick tests.
    pub fn small_demo(seed: u64) -> Self {
        Self {
            n: 80,
            t: 3,
            q: 0.5,
            c: crate::robust_loss::DEFAULT_TUNING,
            outcomes: vec!["y1".into(), "y2".into()],
            covariates: vec![
                CovariateSpec::Fixed { name: "x".into(), sd: 1.0 },
                CovariateSpec::Decomposed { name: "w".into(), between_sd: 1.0, within_sd: 0.8, endogenous: false },
            ],
            beta: vec![vec![1.0, 0.5], vec![-0.5, 0.25]],
            lambda: vec![vec![0.0, 0.5], vec![0.0, -0.25]],
            zeta: vec![vec![-2.0, -1.5], vec![2.0, 1.5]],
            pi: vec![0.4, 0.6],
            sigma: vec![1.0, 0.8],
            rho_endo: 0.0,
            dropout: None,
            seed,
        }
    }

    /// Replaces the mixing distribution by `k` equally weighted mass points
    /// spaced `3 * sigma_h` apart and centred at zero.
    pub fn set_components(&mut self, k: usize) {
        let mid = (k as f64 - 1.0) / 2.0;
        self.zeta = (0..k).map(|j| self.sigma.iter().map(|s| 3.0 * s * (j as f64 - mid)).collect()).collect();
        self.pi = vec![1.0 / k as f64; k];
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn roles(&self) -> Vec<CovariateRole> {
        self.covariates.iter().map(|c| CovariateRole::new(c.name(), c.role())).collect()
    }

    pub fn loss(&self) -> Result<LossConfig> {
        LossConfig::new(self.q, self.c)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.outcomes.len();
        let p = self.covariates.len();
        let k = self.pi.len();
        let bad = |m: String| Err(Error::Config(format!("scenario: {m}")));
        if self.n == 0 || self.t == 0 || h == 0 || k == 0 {
            return bad("n, T, H and K must be positive".into());
        }
        self.loss()?;
        if self.beta.len() != h || self.beta.iter().any(|b| b.len() != p) {
            return bad(format!("beta must be {h} x {p}"));
        }
        if self.lambda.len() != h || self.lambda.iter().any(|b| b.len() != p) {
            return bad(format!("lambda must be {h} x {p}"));
        }
        if self.zeta.len() != k || self.zeta.iter().any(|z| z.len() != h) {
            return bad(format!("zeta must be {k} x {h}"));
        }
        if self.sigma.len() != h || self.sigma.iter().any(|s| !(*s > 0.0)) {
            return bad("sigma must hold one positive scale per outcome".into());
        }
        if self.pi.iter().any(|p| !(*p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("pi must be a probability vector".into());
        }
        if !(self.rho_endo.abs() < 1.0) {
            return bad("|rho_endo| must be below 1".into());
        }
        for c in &self.covariates {
            let ok = match c {
                CovariateSpec::Fixed { sd, .. } => *sd >= 0.0,
                CovariateSpec::Decomposed { between_sd, within_sd, .. } => *between_sd >= 0.0 && *within_sd >= 0.0,
                CovariateSpec::TimeConstantBinary { p, .. } => (0.0..=1.0).contains(p),
            };
            if !ok {
                return bad(format!("invalid generator for covariate '{}'", c.name()));
            }
        }
        if let Some(d) = &self.dropout {
            if !(d.rate > 0.0 && d.rate < 1.0) {
                return bad("dropout rate must lie in (0, 1)".into());
            }
            if !self.covariates.iter().any(|c| c.name() == d.covariate) {
                return bad(format!("dropout covariate '{}' is not generated", d.covariate));
            }
        }
        Ok(())
    }
}

/// Ground truth of a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub scenario: SimScenario,
    /// True component of each unit, keyed by unit id.
    pub components: Vec<(String, usize)>,
    /// Unit covariate means of each decomposed covariate (over all waves).
    pub unit_means: Vec<Vec<f64>>,
}

impl TruthRecord {
    /// True coefficients aligned with the columns of `bundle`: raw and
    /// within columns carry `beta`, between columns `beta + lambda`.
    pub fn design_coefficients(&self, bundle: &DesignBundle) -> Vec<Vec<f64>> {
        let sc = &self.scenario;
        (0..sc.outcomes.len())
            .map(|h| {
                bundle
                    .columns()
                    .iter()
                    .map(|c| match c.kind {
                        ColumnKind::Between => sc.beta[h][c.source] + sc.lambda[h][c.source],
                        _ => sc.beta[h][c.source],
                    })
                    .collect()
            })
            .collect()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw_component<R: Rng>(pi: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    pi.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws a panel and its ground truth.
pub fn generate(scenario: &SimScenario) -> Result<(PanelDataset, TruthRecord)> {
    scenario.validate()?;
    let sc = scenario;
    let loss = sc.loss()?;
    let h_count = sc.outcomes.len();
    let p = sc.covariates.len();
    let mut rng_x = ChaCha8Rng::seed_from_u64(derive_seed(sc.seed, &[1]));
    let mut rng_drop = ChaCha8Rng::seed_from_u64(derive_seed(sc.seed, &[2]));
    let mut rng_y = ChaCha8Rng::seed_from_u64(derive_seed(sc.seed, &[3]));

    // standardized first-outcome mass points
    let mean_z: f64 = sc.pi.iter().zip(&sc.zeta).map(|(p, z)| p * z[0]).sum();
    let var_z: f64 = sc.pi.iter().zip(&sc.zeta).map(|(p, z)| p * (z[0] - mean_z).powi(2)).sum();
    let std_z: Vec<f64> = sc.zeta.iter().map(|z| if var_z > 0.0 { (z[0] - mean_z) / var_z.sqrt() } else { 0.0 }).collect();
    let drop_idx = sc.dropout.as_ref().and_then(|d| sc.covariates.iter().position(|c| c.name() == d.covariate));

    let width = (sc.n.max(1) as f64).log10() as usize + 1;
    let mut units = Vec::with_capacity(sc.n);
    let mut components = Vec::with_capacity(sc.n);
    let mut unit_means = Vec::with_capacity(sc.n);
    for i in 0..sc.n {
        let k = draw_component(&sc.pi, &mut rng_x);
        // x[t][j]
        let mut x = vec![vec![0.0; p]; sc.t];
        let mut means = vec![0.0; p];
        for (j, spec) in sc.covariates.iter().enumerate() {
            match spec {
                CovariateSpec::Fixed { sd, .. } => {
                    for row in x.iter_mut() {
                        let e: f64 = StandardNormal.sample(&mut rng_x);
                        row[j] = sd * e;
                    }
                }
                CovariateSpec::Decomposed { between_sd, within_sd, endogenous, .. } => {
                    let e: f64 = StandardNormal.sample(&mut rng_x);
                    let m = if *endogenous && sc.rho_endo != 0.0 {
                        between_sd * (sc.rho_endo * std_z[k] + (1.0 - sc.rho_endo * sc.rho_endo).sqrt() * e)
                    } else {
                        between_sd * e
                    };
                    let dev: Vec<f64> = (0..sc.t)
                        .map(|_| {
                            let e: f64 = StandardNormal.sample(&mut rng_x);
                            within_sd * e
                        })
                        .collect();
                    let centre = dev.iter().sum::<f64>() / sc.t as f64;
                    for (row, d) in x.iter_mut().zip(&dev) {
                        row[j] = m + d - centre;
                    }
                    means[j] = m;
                }
                CovariateSpec::TimeConstantBinary { p: prob, .. } => {
                    let v = if rng_x.random::<f64>() < *prob { 1.0 } else { 0.0 };
                    for row in x.iter_mut() {
                        row[j] = v;
                    }
                    means[j] = v;
                }
            }
        }

        // waves observed; the first is always kept
        let mut last_wave = sc.t;
        if let (Some(d), Some(j)) = (&sc.dropout, drop_idx) {
            let base = (d.rate / (1.0 - d.rate)).ln();
            for t in 1..sc.t {
                let u: f64 = rng_drop.random();
                if u < logistic(base + d.slope * x[t - 1][j]) {
                    last_wave = t;
                    break;
                }
            }
        }

        let mut observations = Vec::with_capacity(sc.t * h_count);
        for h in 0..h_count {
            for (t, row) in x.iter().enumerate() {
                let mut mu = sc.zeta[k][h];
                for j in 0..p {
                    mu += row[j] * sc.beta[h][j];
                    if matches!(sc.covariates[j], CovariateSpec::Decomposed { .. }) {
                        mu += means[j] * sc.lambda[h][j];
                    }
                }
                // responses are drawn for every wave so the stream does not
                // depend on dropout
                let y = AlidParams::new(loss, mu, sc.sigma[h])?.draw(&mut rng_y);
                if t < last_wave {
                    observations.push(Observation { occasion: (t + 1) as f64, outcome: h, y, x: row.clone() });
                }
            }
        }
        let id = format!("u{:0width$}", i + 1);
        components.push((id.clone(), k));
        unit_means.push(means);
        units.push(UnitRecord { unit_id: id, observations });
    }
    let names = sc.covariates.iter().map(|c| c.name().to_string()).collect();
    let data = PanelDataset::new(units, sc.outcomes.clone(), names)?;
    Ok((data, TruthRecord { scenario: sc.clone(), components, unit_means }))
}

/// Adjusted Rand index of two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&m| c2(m)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

/// Matches fitted components to true ones minimizing the total squared
/// distance between mass points. Returns `matching[true_k] = Some(fit_k)`.
pub fn match_components(fit_zeta: &[Vec<f64>], true_zeta: &[Vec<f64>]) -> Vec<Option<usize>> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let kt = true_zeta.len();
    let kf = fit_zeta.len();
    let mut best = (f64::INFINITY, vec![None; kt]);
    let mut current = vec![None; kt];
    let mut used = vec![false; kf];
    fn recurse(
        t: usize,
        cost: f64,
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut (f64, Vec<Option<usize>>),
        d: &dyn Fn(usize, usize) -> f64,
        kf: usize,
    ) {
        if cost >= best.0 {
            return;
        }
        if t == current.len() {
            *best = (cost, current.clone());
            return;
        }
        let free = used.iter().filter(|u| !**u).count();
        let remaining = current.len() - t;
        for f in 0..kf {
            if !used[f] {
                used[f] = true;
                current[t] = Some(f);
                recurse(t + 1, cost + d(t, f), current, used, best, d, kf);
                used[f] = false;
                current[t] = None;
            }
        }
        // leave this true component unmatched only when fits run out
        if free < remaining {
            recurse(t + 1, cost, current, used, best, d, kf);
        }
    }
    let d = |t: usize, f: usize| dist(&true_zeta[t], &fit_zeta[f]);
    recurse(0, 0.0, &mut current, &mut used, &mut best, &d, kf);
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamScore {
    pub label: String,
    pub truth: f64,
    pub estimate: f64,
    pub error: f64,
    pub se: Option<f64>,
    /// Whether the 95% Wald interval covers the truth.
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub coefficients: Vec<ParamScore>,
    pub mass_points: Vec<ParamScore>,
    pub masses: Vec<ParamScore>,
    pub ari: f64,
    /// Fitted and true `K` differ; components were matched by distance.
    pub k_mismatch: bool,
}

impl ScoreReport {
    pub fn max_abs_error(&self) -> f64 {
        self.coefficients.iter().chain(&self.mass_points).chain(&self.masses).map(|s| s.error.abs()).fold(0.0, f64::max)
    }
}

fn scored(label: String, truth: f64, estimate: f64, se: Option<f64>) -> ParamScore {
    let covered = se.map(|s| (estimate - truth).abs() <= 1.959_963_984_540_054 * s);
    ParamScore { label, truth, estimate, error: estimate - truth, se, covered }
}

/// Compares a fit against the generating truth.
pub fn score_fit(fit: &MixtureFit, truth: &TruthRecord, bundle: &DesignBundle, cov: Option<&CovarianceEstimate>) -> Result<ScoreReport> {
    let sc = &truth.scenario;
    if fit.beta.len() != sc.outcomes.len() || fit.n_units() != bundle.n_units() {
        return Err(Error::Dimension("fit, truth and design disagree in size".into()));
    }
    let true_beta = truth.design_coefficients(bundle);
    let mut coefficients = Vec::new();
    for (h, name) in sc.outcomes.iter().enumerate() {
        for (j, col) in bundle.columns().iter().enumerate() {
            let se = cov.map(|c| c.beta_se(h, j));
            coefficients.push(scored(format!("{name}:{}", col.label), true_beta[h][j], fit.beta[h][j], se));
        }
    }
    let matching = match_components(&fit.zeta, &sc.zeta);
    let mut mass_points = Vec::new();
    let mut masses = Vec::new();
    for (t, m) in matching.iter().enumerate() {
        if let Some(f) = *m {
            for (h, name) in sc.outcomes.iter().enumerate() {
                let se = cov.map(|c| c.zeta_se(f, h));
                mass_points.push(scored(format!("{name}:zeta[{}]", t + 1), sc.zeta[t][h], fit.zeta[f][h], se));
            }
            let se = cov.map(|c| c.pi_se[f]);
            masses.push(scored(format!("pi[{}]", t + 1), sc.pi[t], fit.pi[f], se));
        }
    }
    let lookup: HashMap<&str, usize> = truth.components.iter().map(|(id, k)| (id.as_str(), *k)).collect();
    let true_labels: Vec<usize> = bundle
        .unit_ids()
        .iter()
        .map(|id| lookup.get(id.as_str()).copied().ok_or_else(|| Error::Dimension(format!("unit {id} missing from truth"))))
        .collect::<Result<_>>()?;
    let ari = adjusted_rand_index(&fit.map_assignments(), &true_labels);
    Ok(ScoreReport { coefficients, mass_points, masses, ari, k_mismatch: fit.k != sc.k() })
}

/// Outcome of one replicate of a coverage study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub loglik: f64,
    pub converged: bool,
    pub score: Option<ScoreReport>,
    pub error: Option<String>,
}

/// Aggregate over successful replicates for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub label: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replicates: Vec<ReplicateOutcome>,
    pub rows: Vec<CoverageRow>,
}

/// Replicate seed `r` of a study seeded with `seed`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, &[0x5eed, r as u64])
}

fn run_replicate(base: &SimScenario, r: usize, options: DesignOptions, controls: &EmControls, d: usize) -> ReplicateOutcome {
    let seed = replicate_seed(base.seed, r);
    let mut sc = base.clone();
    sc.seed = seed;
    let attempt = || -> Result<(MixtureFit, ScoreReport)> {
        let (data, truth) = generate(&sc)?;
        let bundle = build_design(&data, &sc.roles(), options)?;
        let fit = multi_start(&bundle, sc.loss()?, sc.k(), controls, d, seed)?;
        let cov = sandwich(&fit, &bundle)?;
        let score = score_fit(&fit, &truth, &bundle, Some(&cov))?;
        Ok((fit, score))
    };
    match attempt() {
        Ok((fit, score)) => {
            ReplicateOutcome { replicate: r, seed, loglik: fit.loglik, converged: fit.converged, score: Some(score), error: None }
        }
        Err(e) => ReplicateOutcome { replicate: r, seed, loglik: f64::NAN, converged: false, score: None, error: Some(e.to_string()) },
    }
}

/// Simulates `replicates` panels from `base`, fits each with the true `K`
/// and tabulates bias, RMSE and 95% Wald coverage per parameter.
/// Replicates run in parallel; failures are recorded, and only a study in
/// which every replicate failed is an error.
pub fn coverage_study(
    base: &SimScenario,
    replicates: usize,
    options: DesignOptions,
    controls: &EmControls,
    d: usize,
) -> Result<CoverageReport> {
    use rayon::prelude::*;
    if replicates < 2 {
        return Err(Error::Config("a coverage study needs at least 2 replicates".into()));
    }
    base.validate()?;
    let outcomes: Vec<ReplicateOutcome> = (0..replicates).into_par_iter().map(|r| run_replicate(base, r, options, controls, d)).collect();
    let ok: Vec<&ScoreReport> = outcomes.iter().filter_map(|o| o.score.as_ref()).collect();
    if ok.is_empty() {
        return Err(Error::MultiStartFailed(
            outcomes.iter().map(|o| format!("replicate {}: {}", o.replicate, o.error.as_deref().unwrap_or(""))).collect(),
        ));
    }
    let mut acc: Vec<(String, f64, Vec<&ParamScore>)> = Vec::new();
    for rep in &ok {
        for s in rep.coefficients.iter().chain(&rep.mass_points).chain(&rep.masses) {
            match acc.iter_mut().find(|a| a.0 == s.label) {
                Some(a) => a.2.push(s),
                None => acc.push((s.label.clone(), s.truth, vec![s])),
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|(label, truth, scores)| {
            let n = scores.len() as f64;
            let mean_estimate = scores.iter().map(|s| s.estimate).sum::<f64>() / n;
            let rmse = (scores.iter().map(|s| s.error * s.error).sum::<f64>() / n).sqrt();
            let mean_se = scores.iter().filter_map(|s| s.se).sum::<f64>() / n;
            let covered = scores.iter().filter(|s| s.covered == Some(true)).count() as f64;
            CoverageRow { label, truth, mean_estimate, bias: mean_estimate - truth, rmse, mean_se, coverage: covered / n, n: scores.len() }
        })
        .collect();
    Ok(CoverageReport { replicates: outcomes, rows })
}

//! Regression rows for the component-conditional M-quantile predictor
//!
//! ```text
//! MQ_q(y_ith | k) = x_ith' beta_h + xbar_ih' lambda_h + zeta_kh
//! ```
//!
//! Covariates are assigned one of three roles. `Fixed` and `TimeConstant`
//! covariates pass through unchanged. A `Decomposed` covariate is split into
//! its unit mean (the correlated-random-effects "between" column) and the
//! deviation from that mean (the "within" column). There is no global
//! intercept: the component locations `zeta_kh` play that role, and the random
//! design is the intercept alone.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel_data::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Fixed,
    Decomposed,
    TimeConstant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateRole {
    pub name: String,
    pub role: Role,
}

impl CovariateRole {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self { name: name.into(), role }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    /// Emit the between/within split for decomposed covariates. When off they
    /// enter as raw columns.
    pub mundlak: bool,
    /// Use `T_ih * xbar_ih` instead of `xbar_ih` as the between column.
    pub scale_by_ti: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { mundlak: true, scale_by_ti: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Fixed,
    Between,
    Within,
    TimeConstant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub label: String,
    pub kind: ColumnKind,
    /// Index of the source covariate in the panel.
    pub source: usize,
}

#[derive(Debug, Clone)]
pub struct DesignBundle {
    columns: Vec<Column>,
    outcome_names: Vec<String>,
    unit_ids: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
    outcome: Vec<usize>,
    unit: Vec<usize>,
    occasion: Vec<f64>,
    unit_rows: Vec<(usize, usize)>,
    rank_warning: Option<String>,
}

impl DesignBundle {
    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.label.clone()).collect()
    }

    /// Expanded fixed-effect dimension per outcome (all design columns,
    /// including the between block).
    pub fn fixed_dim(&self) -> usize {
        self.columns.len()
    }

    /// Size of the between (`lambda_h`) block inside [`Self::fixed_dim`].
    pub fn mundlak_dim(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Between).count()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcome_names.len()
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.columns.len();
        &self.x[r * p..(r + 1) * p]
    }

    #[inline]
    pub fn y(&self, r: usize) -> f64 {
        self.y[r]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn outcome(&self, r: usize) -> usize {
        self.outcome[r]
    }

    #[inline]
    pub fn unit(&self, r: usize) -> usize {
        self.unit[r]
    }

    /// `(unit, occasion, outcome)` of a row.
    pub fn row_index(&self, r: usize) -> (usize, f64, usize) {
        (self.unit[r], self.occasion[r], self.outcome[r])
    }

    /// Row range of unit `i` (rows are stored unit by unit).
    #[inline]
    pub fn unit_rows(&self, i: usize) -> std::ops::Range<usize> {
        let (a, b) = self.unit_rows[i];
        a..b
    }

    /// The random-effect design is the intercept alone.
    pub fn random_design(&self, _r: usize) -> f64 {
        1.0
    }

    pub fn rank_warning(&self) -> Option<&str> {
        self.rank_warning.as_deref()
    }

    /// Same design with the responses replaced.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::Dimension(format!("{} responses for {} rows", y.len(), self.y.len())));
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Sub-design keeping only the listed units (in the given order).
    pub fn select_units(&self, units: &[usize]) -> Self {
        let p = self.columns.len();
        let mut out = Self {
            columns: self.columns.clone(),
            outcome_names: self.outcome_names.clone(),
            unit_ids: Vec::with_capacity(units.len()),
            x: Vec::new(),
            y: Vec::new(),
            outcome: Vec::new(),
            unit: Vec::new(),
            occasion: Vec::new(),
            unit_rows: Vec::with_capacity(units.len()),
            rank_warning: self.rank_warning.clone(),
        };
        for (new_i, &i) in units.iter().enumerate() {
            out.unit_ids.push(self.unit_ids[i].clone());
            let start = out.y.len();
            for r in self.unit_rows(i) {
                out.x.extend_from_slice(&self.x[r * p..(r + 1) * p]);
                out.y.push(self.y[r]);
                out.outcome.push(self.outcome[r]);
                out.unit.push(new_i);
                out.occasion.push(self.occasion[r]);
            }
            out.unit_rows.push((start, out.y.len()));
        }
        out
    }
}

/// Expands the panel into regression rows.
pub fn build_design(data: &PanelDataset, roles: &[CovariateRole], options: DesignOptions) -> Result<DesignBundle> {
    let names = data.covariate_names();
    let mut seen = vec![false; names.len()];
    let mut resolved = Vec::with_capacity(roles.len());
    for r in roles {
        let idx = names
            .iter()
            .position(|n| *n == r.name)
            .ok_or_else(|| Error::Validation(format!("role given for unknown covariate '{}'", r.name)))?;
        if seen[idx] {
            return Err(Error::Validation(format!("covariate '{}' assigned twice", r.name)));
        }
        seen[idx] = true;
        resolved.push((idx, r.role));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Validation(format!("covariate '{}' has no role", names[missing])));
    }

    let mut columns = Vec::new();
    for &(idx, role) in &resolved {
        let name = &names[idx];
        match role {
            Role::Fixed => columns.push(Column { label: name.clone(), kind: ColumnKind::Fixed, source: idx }),
            Role::TimeConstant => columns.push(Column { label: name.clone(), kind: ColumnKind::TimeConstant, source: idx }),
            Role::Decomposed if options.mundlak => {
                columns.push(Column { label: format!("{name}_between"), kind: ColumnKind::Between, source: idx });
                columns.push(Column { label: format!("{name}_within"), kind: ColumnKind::Within, source: idx });
            }
            Role::Decomposed => columns.push(Column { label: name.clone(), kind: ColumnKind::Fixed, source: idx }),
        }
    }

    // decomposed covariates must vary within at least one unit
    for &(idx, role) in &resolved {
        if role != Role::Decomposed {
            continue;
        }
        let varies = data.units().iter().any(|u| {
            (0..data.n_outcomes()).any(|h| {
                let mut vals = u.observations.iter().filter(|o| o.outcome == h).map(|o| o.x[idx]);
                match vals.next() {
                    Some(first) => vals.any(|v| (v - first).abs() > 1e-12 * (1.0 + first.abs())),
                    None => false,
                }
            })
        });
        if !varies {
            return Err(Error::DegenerateDecomposition(format!(
                "covariate '{}' is constant within every unit; use role time_constant",
                names[idx]
            )));
        }
    }

    let p = columns.len();
    let h_count = data.n_outcomes();
    let mut bundle = DesignBundle {
        columns,
        outcome_names: data.outcome_names().to_vec(),
        unit_ids: data.units().iter().map(|u| u.unit_id.clone()).collect(),
        x: Vec::with_capacity(data.n_observations() * p),
        y: Vec::with_capacity(data.n_observations()),
        outcome: Vec::with_capacity(data.n_observations()),
        unit: Vec::with_capacity(data.n_observations()),
        occasion: Vec::with_capacity(data.n_observations()),
        unit_rows: Vec::with_capacity(data.n_units()),
        rank_warning: None,
    };
    let n_cov = data.n_covariates();
    for (i, u) in data.units().iter().enumerate() {
        let start = bundle.y.len();
        // per-outcome covariate means and row counts
        let mut means = vec![vec![0.0; n_cov]; h_count];
        let mut counts = vec![0usize; h_count];
        for o in &u.observations {
            counts[o.outcome] += 1;
            for (m, v) in means[o.outcome].iter_mut().zip(&o.x) {
                *m += v;
            }
        }
        for (m, &n) in means.iter_mut().zip(&counts) {
            if n > 0 {
                m.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        for o in &u.observations {
            let mean = &means[o.outcome];
            let t_ih = counts[o.outcome] as f64;
            for col in &bundle.columns {
                let v = match col.kind {
                    ColumnKind::Fixed | ColumnKind::TimeConstant => o.x[col.source],
                    ColumnKind::Within => o.x[col.source] - mean[col.source],
                    ColumnKind::Between if options.scale_by_ti => t_ih * mean[col.source],
                    ColumnKind::Between => mean[col.source],
                };
                bundle.x.push(v);
            }
            bundle.y.push(o.y);
            bundle.outcome.push(o.outcome);
            bundle.unit.push(i);
            bundle.occasion.push(o.occasion);
        }
        bundle.unit_rows.push((start, bundle.y.len()));
    }
    bundle.rank_warning = rank_check(&bundle);
    Ok(bundle)
}

/// Checks `[X | 1]` for near-collinearity per outcome.
fn rank_check(bundle: &DesignBundle) -> Option<String> {
    let p = bundle.fixed_dim();
    let mut warnings = Vec::new();
    for h in 0..bundle.n_outcomes() {
        let mut xtx = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut n = 0usize;
        for r in (0..bundle.n_rows()).filter(|&r| bundle.outcome(r) == h) {
            n += 1;
            let row = bundle.row(r);
            for a in 0..=p {
                let va = if a < p { row[a] } else { 1.0 };
                for b in a..=p {
                    let vb = if b < p { row[b] } else { 1.0 };
                    xtx[(a, b)] += va * vb;
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
        }
        if n <= p {
            warnings.push(format!("outcome '{}': {} rows for {} columns", bundle.outcome_names[h], n, p + 1));
            continue;
        }
        // correlation scaling
        let d: Vec<f64> = (0..=p).map(|a| xtx[(a, a)].sqrt().max(1e-300)).collect();
        let scaled = DMatrix::from_fn(p + 1, p + 1, |a, b| xtx[(a, b)] / (d[a] * d[b]));
        let eig = SymmetricEigen::new(scaled).eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if !(min > 1e-10 * max) {
            warnings.push(format!(
                "outcome '{}': design with intercept is (nearly) rank deficient (eigenvalue ratio {:.3e})",
                bundle.outcome_names[h],
                min / max
            ));
        }
    }
    if warnings.is_empty() {
        None
    } else {
        Some(warnings.join("; "))
    }
}

/// Conditional M-quantile for a row given coefficients and a mass point.
pub fn predict(bundle: &DesignBundle, beta: &[f64], zeta_kh: f64, row: usize) -> Result<f64> {
    if beta.len() != bundle.fixed_dim() {
        return Err(Error::Dimension(format!("coefficient vector has length {}, design has {} columns", beta.len(), bundle.fixed_dim())));
    }
    if row >= bundle.n_rows() {
        return Err(Error::Dimension(format!("row {row} out of range ({} rows)", bundle.n_rows())));
    }
    Ok(dot(bundle.row(row), beta) + zeta_kh)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

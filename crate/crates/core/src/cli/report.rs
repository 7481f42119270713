//! Result files written by the command-line front end.

use std::fmt::Write as _;
use std::path::Path;

use crate::design::DesignBundle;
use crate::error::Result;
use crate::inference::CovarianceEstimate;
use crate::mixture_em::MixtureFit;
use crate::panel_data::{format_sig12, PanelSummary};
use crate::selection::SelectionReport;
use crate::simulate::CoverageReport;

/// `q` as used in file names: at least two decimals, more only when needed.
pub fn format_q(q: f64) -> String {
    for decimals in 2..=12 {
        let s = format!("{q:.decimals$}");
        if (s.parse::<f64>().unwrap_or(f64::NAN) - q).abs() < 1e-12 {
            return s;
        }
    }
    format!("{q}")
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format_sig12(v)
    } else {
        "NA".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

/// One fitted model together with everything the reports need.
pub struct FittedLevel<'a> {
    pub bundle: &'a DesignBundle,
    pub fit: &'a MixtureFit,
    pub selection: &'a SelectionReport,
    pub cov: Option<&'a CovarianceEstimate>,
}

pub fn coefficient_file(q: f64) -> String {
    format!("coefficients_q{}.csv", format_q(q))
}

/// Writes the four per-level CSV files and returns their names.
pub fn write_level(dir: &Path, level: &FittedLevel<'_>) -> Result<Vec<String>> {
    let q = format_q(level.fit.q());
    let names = vec![
        coefficient_file(level.fit.q()),
        format!("mixing_q{q}.csv"),
        format!("selection_q{q}.csv"),
        format!("classification_q{q}.csv"),
    ];
    write_coefficients(&dir.join(&names[0]), level)?;
    write_mixing(&dir.join(&names[1]), level)?;
    write_selection(&dir.join(&names[2]), level.selection)?;
    write_classification(&dir.join(&names[3]), level)?;
    Ok(names)
}

fn write_coefficients(path: &Path, level: &FittedLevel<'_>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["outcome", "term", "estimate", "se"])?;
    let b = level.bundle;
    for (h, name) in b.outcome_names().iter().enumerate() {
        for (j, col) in b.columns().iter().enumerate() {
            let se = level.cov.map(|c| c.beta_se(h, j));
            w.write_record([name.as_str(), &col.label, &num(level.fit.beta[h][j]), &opt(se)])?;
        }
        let se = level.cov.map(|c| c.sigma_se(h));
        w.write_record([name.as_str(), "sigma", &num(level.fit.sigma[h]), &opt(se)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_mixing(path: &Path, level: &FittedLevel<'_>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["component", "outcome", "zeta", "zeta_se", "pi", "pi_se"])?;
    let fit = level.fit;
    for k in 0..fit.k {
        for (h, name) in level.bundle.outcome_names().iter().enumerate() {
            let zse = level.cov.map(|c| c.zeta_se(k, h));
            let pse = level.cov.map(|c| c.pi_se[k]);
            w.write_record([(k + 1).to_string(), name.clone(), num(fit.zeta[k][h]), opt(zse), num(fit.pi[k]), opt(pse)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_selection(path: &Path, report: &SelectionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "loglik", "n_params", "aic", "bic", "min_pi", "admissible", "converged", "chosen", "error"])?;
    for r in &report.records {
        w.write_record([
            r.k.to_string(),
            num(r.loglik),
            r.n_params.to_string(),
            num(r.aic),
            num(r.bic),
            num(r.min_mass),
            r.admissible.to_string(),
            r.converged.to_string(),
            (r.k == report.chosen_k).to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_classification(path: &Path, level: &FittedLevel<'_>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let fit = level.fit;
    let mut header = vec!["unit".to_string(), "component".into()];
    header.extend((1..=fit.k).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    let map = fit.map_assignments();
    for (i, id) in level.bundle.unit_ids().iter().enumerate() {
        let mut rec = vec![id.clone(), (map[i] + 1).to_string()];
        rec.extend((0..fit.k).map(|k| num(fit.responsibility(i, k))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cell(est: f64, se: Option<f64>) -> String {
    match se {
        Some(s) if s.is_finite() => format!("{est:.3} ({s:.3})"),
        _ => format!("{est:.3}"),
    }
}

/// Plain-text table: one block per outcome, a row per term with the scale
/// last, a column per level; followed by the mixing distributions.
pub fn summary_table(levels: &[FittedLevel<'_>]) -> String {
    let mut out = String::new();
    let Some(first) = levels.first() else {
        return out;
    };
    let b = first.bundle;
    let width = b.columns().iter().map(|c| c.label.len()).max().unwrap_or(4).max(8) + 2;
    for (h, name) in b.outcome_names().iter().enumerate() {
        let _ = writeln!(out, "{name}");
        let _ = write!(out, "{:<width$}", "");
        for l in levels {
            let _ = write!(out, "{:>20}", format!("q = {}", format_q(l.fit.q())));
        }
        out.push('\n');
        for (j, col) in b.columns().iter().enumerate() {
            let _ = write!(out, "{:<width$}", col.label);
            for l in levels {
                let _ = write!(out, "{:>20}", cell(l.fit.beta[h][j], l.cov.map(|c| c.beta_se(h, j))));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<width$}", "sigma");
        for l in levels {
            let _ = write!(out, "{:>20}", cell(l.fit.sigma[h], l.cov.map(|c| c.sigma_se(h))));
        }
        out.push_str("\n\n");
    }
    for l in levels {
        let fit = l.fit;
        let _ = writeln!(out, "q = {}: K = {}, loglik = {:.3}", format_q(fit.q()), fit.k, fit.loglik);
        for k in 0..fit.k {
            let z: Vec<String> = fit.zeta[k].iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(out, "  component {}: pi = {:.3}, zeta = ({})", k + 1, fit.pi[k], z.join(", "));
        }
        for (h, name) in b.outcome_names().iter().enumerate() {
            let mean: f64 = (0..fit.k).map(|k| fit.pi[k] * fit.zeta[k][h]).sum();
            let var: f64 = (0..fit.k).map(|k| fit.pi[k] * (fit.zeta[k][h] - mean).powi(2)).sum();
            let _ = writeln!(out, "  random-intercept sd ({name}) = {:.3}", var.sqrt());
        }
        let _ = writeln!(out, "{}", l.selection);
        out.push('\n');
    }
    out
}

pub fn write_coverage(dir: &Path, report: &CoverageReport) -> Result<Vec<String>> {
    let names = vec!["coverage_replicates.csv".to_string(), "coverage_summary.csv".to_string()];
    let mut w = csv::Writer::from_path(dir.join(&names[0]))?;
    w.write_record(["replicate", "seed", "status", "loglik", "converged", "ari", "max_abs_error", "error"])?;
    for r in &report.replicates {
        let (ari, err) = r.score.as_ref().map_or((f64::NAN, f64::NAN), |s| (s.ari, s.max_abs_error()));
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            if r.error.is_none() { "ok".into() } else { "failed".to_string() },
            num(r.loglik),
            r.converged.to_string(),
            num(ari),
            num(err),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(&names[1]))?;
    w.write_record(["parameter", "truth", "mean_estimate", "bias", "rmse", "mean_se", "coverage", "n"])?;
    for r in &report.rows {
        w.write_record([
            r.label.clone(),
            num(r.truth),
            num(r.mean_estimate),
            num(r.bias),
            num(r.rmse),
            num(r.mean_se),
            num(r.coverage),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(names)
}

pub fn summary_text(s: &PanelSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "units: {}  outcomes: {}  covariates: {}  observations: {}",
        s.n_units, s.n_outcomes, s.n_covariates, s.n_observations
    );
    let _ = writeln!(out, "complete units: {:.1}%", 100.0 * s.complete_fraction);
    let _ = writeln!(out, "occasions per unit:");
    for (t, n) in &s.occasions_distribution {
        let _ = writeln!(out, "  T_i = {t}: {n}");
    }
    let _ = writeln!(
        out,
        "{:<12} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "outcome", "n", "mean", "min", "q25", "median", "q75", "max"
    );
    for o in &s.outcomes {
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            o.name, o.n, o.mean, o.min, o.q25, o.median, o.q75, o.max
        );
    }
    out
}

//! Long-format multivariate longitudinal panels.
//!
//! A panel holds, for every unit, the observed `(occasion, outcome, response,
//! covariates)` rows. Missing responses are represented by absent rows: the
//! likelihood only ever runs over what is stored here.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Arbitrary real time index (e.g. age); never assumed equally spaced.
    pub occasion: f64,
    pub outcome: usize,
    pub y: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    /// Sorted by `(outcome, occasion)`.
    pub observations: Vec<Observation>,
}

impl UnitRecord {
    /// Number of distinct occasions at which anything was observed (`T_i`).
    pub fn n_occasions(&self) -> usize {
        let mut occ: Vec<f64> = self.observations.iter().map(|o| o.occasion).collect();
        occ.sort_by(f64::total_cmp);
        occ.dedup();
        occ.len()
    }

    /// Observed rows per outcome.
    pub fn count_for(&self, outcome: usize) -> usize {
        self.observations.iter().filter(|o| o.outcome == outcome).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<UnitRecord>,
    outcome_names: Vec<String>,
    covariate_names: Vec<String>,
}

impl PanelDataset {
    /// Validates and normalizes (sorts) the records.
    pub fn new(mut units: Vec<UnitRecord>, outcome_names: Vec<String>, covariate_names: Vec<String>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyPanel("no units".into()));
        }
        if outcome_names.is_empty() {
            return Err(Error::Validation("at least one outcome is required".into()));
        }
        let h = outcome_names.len();
        let p = covariate_names.len();
        let mut ids = HashSet::new();
        for unit in &mut units {
            if !ids.insert(unit.unit_id.clone()) {
                return Err(Error::Validation(format!("duplicate unit id {}", unit.unit_id)));
            }
            if unit.observations.is_empty() {
                return Err(Error::Validation(format!("unit {} has no observations", unit.unit_id)));
            }
            for obs in &unit.observations {
                if obs.outcome >= h {
                    return Err(Error::Validation(format!("unit {}: outcome index {} out of range", unit.unit_id, obs.outcome)));
                }
                if obs.x.len() != p {
                    return Err(Error::Validation(format!(
                        "unit {}: covariate vector has length {}, expected {p}",
                        unit.unit_id,
                        obs.x.len()
                    )));
                }
                if !obs.y.is_finite() || !obs.occasion.is_finite() {
                    return Err(Error::Validation(format!("unit {}: non-finite response or occasion", unit.unit_id)));
                }
                if obs.x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("unit {}: non-finite covariate at occasion {}", unit.unit_id, obs.occasion)));
                }
            }
            unit.observations.sort_by(|a, b| a.outcome.cmp(&b.outcome).then(a.occasion.total_cmp(&b.occasion)));
            for pair in unit.observations.windows(2) {
                if pair[0].outcome == pair[1].outcome && pair[0].occasion == pair[1].occasion {
                    return Err(Error::Validation(format!(
                        "duplicate (unit={}, occasion={}, outcome={}) triple",
                        unit.unit_id, pair[0].occasion, outcome_names[pair[0].outcome]
                    )));
                }
            }
        }
        Ok(Self { units, outcome_names, covariate_names })
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcome_names.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_observations(&self) -> usize {
        self.units.iter().map(|u| u.observations.len()).sum()
    }

    pub fn occasions_per_unit(&self) -> Vec<usize> {
        self.units.iter().map(UnitRecord::n_occasions).collect()
    }

    /// Largest per-outcome row count of any unit: the panel's full length.
    pub fn max_occasions(&self) -> usize {
        self.units.iter().flat_map(|u| (0..self.n_outcomes()).map(move |h| u.count_for(h))).max().unwrap_or(0)
    }

    fn is_complete(&self, unit: &UnitRecord, t_full: usize) -> bool {
        (0..self.n_outcomes()).all(|h| unit.count_for(h) >= t_full)
    }

    /// Keeps the units matching `keep`; errors when nothing is left.
    pub fn filter_units(&self, mut keep: impl FnMut(&UnitRecord) -> bool) -> Result<Self> {
        let units: Vec<UnitRecord> = self.units.iter().filter(|u| keep(u)).cloned().collect();
        if units.is_empty() {
            return Err(Error::EmptyPanel("filter removed every unit".into()));
        }
        Ok(Self { units, outcome_names: self.outcome_names.clone(), covariate_names: self.covariate_names.clone() })
    }

    /// Returns a copy with every response replaced by `f(unit, observation)`.
    pub fn map_responses(&self, mut f: impl FnMut(&UnitRecord, &Observation) -> f64) -> Result<Self> {
        let units = self
            .units
            .iter()
            .map(|u| UnitRecord {
                unit_id: u.unit_id.clone(),
                observations: u.observations.iter().map(|o| Observation { y: f(u, o), ..o.clone() }).collect(),
            })
            .collect();
        Self::new(units, self.outcome_names.clone(), self.covariate_names.clone())
    }
}

/// Column names used when reading a long-format file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub unit: String,
    pub occasion: String,
    pub outcome: String,
    pub response: String,
    /// Empty means "every remaining column".
    pub covariates: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self { unit: "unit".into(), occasion: "occasion".into(), outcome: "outcome".into(), response: "y".into(), covariates: Vec::new() }
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Validation(format!("column '{name}' not found in header")))
    };
    let unit_col = find(&schema.unit)?;
    let occ_col = find(&schema.occasion)?;
    let out_col = find(&schema.outcome)?;
    let y_col = find(&schema.response)?;
    let cov_names: Vec<String> = if schema.covariates.is_empty() {
        headers.iter().enumerate().filter(|(i, _)| ![unit_col, occ_col, out_col, y_col].contains(i)).map(|(_, h)| h.to_string()).collect()
    } else {
        schema.covariates.clone()
    };
    let cov_cols = cov_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut units: Vec<UnitRecord> = Vec::new();
    let mut outcome_index: HashMap<String, usize> = HashMap::new();
    let mut outcome_names: Vec<String> = Vec::new();
    let mut seen: HashSet<(String, u64, String)> = HashSet::new();

    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse { row: e.position().map(|p| p.line() as usize).unwrap_or(0), msg: e.to_string() })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("");
        let unit_id = field(unit_col).to_string();
        if unit_id.is_empty() {
            return Err(Error::Validation(format!("row {row}: empty unit identifier")));
        }
        let occasion: f64 =
            field(occ_col).parse().map_err(|_| Error::Validation(format!("row {row}: non-numeric occasion '{}'", field(occ_col))))?;
        if !occasion.is_finite() {
            return Err(Error::Validation(format!("row {row}: non-finite occasion")));
        }
        let outcome = field(out_col).to_string();
        if !seen.insert((unit_id.clone(), occasion.to_bits(), outcome.clone())) {
            return Err(Error::Validation(format!("row {row}: duplicate (unit={unit_id}, occasion={occasion}, outcome={outcome}) triple")));
        }
        let y_raw = field(y_col);
        if is_missing(y_raw) {
            continue;
        }
        let y: f64 = y_raw.parse().map_err(|_| Error::Validation(format!("row {row}: non-numeric response '{y_raw}'")))?;
        if !y.is_finite() {
            return Err(Error::Validation(format!("row {row}: non-finite response")));
        }
        let mut x = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&cov_names) {
            let raw = field(c);
            if is_missing(raw) {
                return Err(Error::Validation(format!("row {row}: covariate '{name}' missing where the response is observed")));
            }
            let v: f64 = raw.parse().map_err(|_| Error::Validation(format!("row {row}: non-numeric covariate '{name}'='{raw}'")))?;
            if !v.is_finite() {
                return Err(Error::Validation(format!("row {row}: non-finite covariate '{name}'")));
            }
            x.push(v);
        }
        let h = *outcome_index.entry(outcome.clone()).or_insert_with(|| {
            outcome_names.push(outcome.clone());
            outcome_names.len() - 1
        });
        let ui = *unit_index.entry(unit_id.clone()).or_insert_with(|| {
            units.push(UnitRecord { unit_id: unit_id.clone(), observations: Vec::new() });
            units.len() - 1
        });
        units[ui].observations.push(Observation { occasion, outcome: h, y, x });
    }
    PanelDataset::new(units, outcome_names, cov_names)
}

/// Formats a value with 12 significant digits, in a form that parses back.
pub fn format_sig12(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    format!("{rounded:?}")
}

pub fn write_csv(data: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(data, std::io::BufWriter::new(file))
}

/// Writes `unit,occasion,outcome,y,<covariates...>`, one row per observation,
/// in unit order then `(outcome, occasion)` order.
pub fn write_csv_to<W: Write>(data: &PanelDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "occasion".into(), "outcome".into(), "y".into()];
    header.extend(data.covariate_names.iter().cloned());
    wtr.write_record(&header)?;
    for unit in &data.units {
        for obs in &unit.observations {
            let mut rec =
                vec![unit.unit_id.clone(), format_sig12(obs.occasion), data.outcome_names[obs.outcome].clone(), format_sig12(obs.y)];
            rec.extend(obs.x.iter().map(|&v| format_sig12(v)));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelSummary {
    pub n_units: usize,
    pub n_outcomes: usize,
    pub n_covariates: usize,
    pub n_observations: usize,
    /// `T_i` value -> number of units.
    pub occasions_distribution: BTreeMap<usize, usize>,
    pub outcomes: Vec<OutcomeSummary>,
    /// Share of units observed at every occasion for every outcome.
    pub complete_fraction: f64,
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(data: &PanelDataset) -> PanelSummary {
    let mut occasions_distribution = BTreeMap::new();
    for t in data.occasions_per_unit() {
        *occasions_distribution.entry(t).or_insert(0) += 1;
    }
    let outcomes = (0..data.n_outcomes())
        .map(|h| {
            let mut ys: Vec<f64> =
                data.units.iter().flat_map(|u| u.observations.iter().filter(move |o| o.outcome == h).map(|o| o.y)).collect();
            ys.sort_by(f64::total_cmp);
            let n = ys.len();
            OutcomeSummary {
                name: data.outcome_names[h].clone(),
                n,
                mean: ys.iter().sum::<f64>() / n as f64,
                min: ys.first().copied().unwrap_or(f64::NAN),
                q25: sorted_quantile(&ys, 0.25),
                median: sorted_quantile(&ys, 0.5),
                q75: sorted_quantile(&ys, 0.75),
                max: ys.last().copied().unwrap_or(f64::NAN),
            }
        })
        .collect();
    let t_full = data.max_occasions();
    let complete = data.units.iter().filter(|u| data.is_complete(u, t_full)).count();
    PanelSummary {
        n_units: data.n_units(),
        n_outcomes: data.n_outcomes(),
        n_covariates: data.n_covariates(),
        n_observations: data.n_observations(),
        occasions_distribution,
        outcomes,
        complete_fraction: complete as f64 / data.n_units() as f64,
    }
}

/// Sub-panel of the units observed at (at least) `t_full` occasions for every
/// outcome.
pub fn complete_cases(data: &PanelDataset, t_full: usize) -> Result<PanelDataset> {
    if t_full == 0 {
        return Err(Error::Validation("T_full must be at least 1".into()));
    }
    data.filter_units(|u| data.is_complete(u, t_full)).map_err(|_| Error::EmptyPanel(format!("no unit is observed at {t_full} occasions")))
}

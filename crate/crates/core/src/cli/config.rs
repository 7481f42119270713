//! Run configuration: a TOML file whose every option can be overridden on
//! the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{CovariateRole, DesignOptions, Role};
use crate::error::{Error, Result};
use crate::mixture_em::EmControls;
use crate::panel_data::ColumnSchema;
use crate::robust_loss::{LossConfig, DEFAULT_TUNING};
use crate::selection::{SelectionCriterion, SweepOptions};
use crate::simulate::{DropoutSpec, SimScenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    #[serde(flatten)]
    pub schema: ColumnSchema,
    /// Keep only units observed at every occasion for every outcome.
    pub complete_cases: bool,
    /// Occasions required by `complete_cases`; defaults to the largest `T_i`.
    pub t_full: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub q: Vec<f64>,
    pub c: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub mundlak: bool,
    pub scale_by_ti: bool,
    pub criterion: SelectionCriterion,
    pub warm_start: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            q: vec![0.5],
            c: DEFAULT_TUNING,
            k_min: 1,
            k_max: 5,
            mundlak: true,
            scale_by_ti: false,
            criterion: SelectionCriterion::Bic,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartSection {
    pub d: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for StartSection {
    fn default() -> Self {
        Self { d: 3, seed: 1, workers: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("mqmix-out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Default,
    SmallDemo,
}

/// Simulation settings: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub preset: Preset,
    pub n: Option<usize>,
    pub t: Option<usize>,
    pub k: Option<usize>,
    pub q: Option<f64>,
    pub rho_endo: Option<f64>,
    pub dropout: Option<DropoutSpec>,
    /// Full scenario, replacing the preset.
    pub scenario: Option<SimScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSection {
    pub replicates: usize,
}

impl Default for CoverageSection {
    fn default() -> Self {
        Self { replicates: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    /// Covariate name to role; unlisted covariates are `fixed`.
    pub roles: BTreeMap<String, Role>,
    pub model: ModelSection,
    pub em: EmControls,
    pub start: StartSection,
    pub output: OutputSection,
    pub simulate: SimulateSection,
    pub coverage: CoverageSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ").trim().to_string()))
    }

    /// Reads a config file; relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(data), Some(dir)) = (&cfg.data.path, path.parent()) {
            if data.is_relative() {
                cfg.data.path = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.q.is_empty() {
            return Err(Error::Config("at least one q level is required".into()));
        }
        for &q in &self.model.q {
            LossConfig::new(q, self.model.c).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.model.k_min == 0 || self.model.k_min > self.model.k_max {
            return Err(Error::Config(format!("empty K range {}..={}", self.model.k_min, self.model.k_max)));
        }
        if self.start.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        self.em.validate(self.model.k_max)?;
        Ok(())
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions { mundlak: self.model.mundlak, scale_by_ti: self.model.scale_by_ti }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions { criterion: self.model.criterion, warm_start: self.model.warm_start }
    }

    /// Roles in the order of the panel's covariates.
    pub fn roles_for(&self, covariates: &[String]) -> Result<Vec<CovariateRole>> {
        if let Some(unknown) = self.roles.keys().find(|k| !covariates.contains(k)) {
            return Err(Error::Config(format!("role given for unknown covariate '{unknown}'")));
        }
        Ok(covariates.iter().map(|c| CovariateRole::new(c.clone(), self.roles.get(c).copied().unwrap_or(Role::Fixed))).collect())
    }

    pub fn scenario(&self) -> Result<SimScenario> {
        let s = &self.simulate;
        let mut sc = match (&s.scenario, s.preset) {
            (Some(sc), _) => sc.clone(),
            (None, Preset::Default) => SimScenario::default_scenario(self.start.seed),
            (None, Preset::SmallDemo) => SimScenario::small_demo(self.start.seed),
        };
        sc.seed = self.start.seed;
        if let Some(n) = s.n {
            sc.n = n;
        }
        if let Some(t) = s.t {
            sc.t = t;
        }
        if let Some(k) = s.k {
            sc.set_components(k);
        }
        if let Some(q) = s.q {
            sc.q = q;
        }
        if let Some(r) = s.rho_endo {
            sc.rho_endo = r;
        }
        if s.dropout.is_some() {
            sc.dropout = s.dropout.clone();
        }
        sc.c = self.model.c;
        sc.validate()?;
        Ok(sc)
    }
}

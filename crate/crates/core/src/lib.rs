//! Finite-mixture M-quantile regression for multivariate, unbalanced
//! longitudinal data.
//!
//! Each unit carries a discrete random intercept per outcome, drawn from a
//! nonparametric distribution on `K` mass points. Responses follow the
//! asymmetric least informative distribution (ALID) so that fitting at
//! level `q` is maximum likelihood for the `q`-th M-quantile regression. The
//! mixture is estimated by EM with multiple starts, `K` is picked by BIC,
//! and standard errors come from a sandwich estimator built on the Oakes
//! observed information.
//!
//! The usual pipeline:
//!
//! ```
//! use mqmix::prelude::*;
//!
//! let scenario = SimScenario::small_demo(11);
//! let (data, _truth) = generate(&scenario).unwrap();
//! let roles = scenario.roles();
//! let bundle = build_design(&data, &roles, DesignOptions::default()).unwrap();
//! let loss = LossConfig::new(0.5, DEFAULT_TUNING).unwrap();
//! let fit = multi_start(&bundle, loss, 2, &EmControls::default(), 1, 42).unwrap();
//! assert_eq!(fit.pi.len(), 2);
//! ```

pub mod cli;
pub mod design;
pub mod error;
pub mod inference;
pub mod mixture_em;
pub mod numeric;
pub mod panel_data;
pub mod robust_loss;
pub mod selection;
pub mod simulate;
pub mod weighted_fit;

pub use error::{Error, ErrorClass, Result};

/// Common imports for scripts and examples.
pub mod prelude {
    pub use crate::design::{build_design, predict, CovariateRole, DesignBundle, DesignOptions, Role};
    pub use crate::error::{Error, Result};
    pub use crate::inference::{sandwich, CovarianceEstimate};
    pub use crate::mixture_em::{em_fit, multi_start, EmControls, MixtureFit, StartSpec};
    pub use crate::panel_data::{complete_cases, load_csv, summarize, ColumnSchema, PanelDataset};
    pub use crate::robust_loss::{alid_logpdf, AlidParams, LossConfig, DEFAULT_TUNING};
    pub use crate::selection::{sweep, SelectionReport};
    pub use crate::simulate::{generate, score_fit, SimScenario, TruthRecord};
}

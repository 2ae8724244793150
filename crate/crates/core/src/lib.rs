//! Weighted Z-estimators for case-cohort and two-phase survival designs.
//!
//! The crate fits the Cox and additive hazards models with time-dependent,
//! piecewise-constant covariates under arbitrary weight processes `Ω(t)` and
//! `W(t)`, which covers the full-cohort estimators, the Self–Prentice
//! estimator and inverse-probability weighted case-cohort estimators. It also
//! simulates cohorts, draws subcohorts and runs Monte Carlo studies.
//!
//! ```
//! use casecohort::{fit_cox, Cohort, CovariatePath, FitOptions, Subject};
//!
//! let rows = [(1.0, true, 0.0), (2.0, true, 1.0), (3.0, false, 0.0), (3.0, false, 1.0)];
//! let subjects = rows
//!     .iter()
//!     .enumerate()
//!     .map(|(i, &(y, delta, z))| Subject::new(i as u64, y, delta, CovariatePath::scalar(z)))
//!     .collect();
//! let cohort = Cohort::new(subjects, 3.0, 1).unwrap();
//! let fit = fit_cox(&cohort, &FitOptions::default()).unwrap();
//! assert!((fit.theta_hat[0] + 0.5 * 2f64.ln()).abs() < 1e-9);
//! ```

pub mod additive;
pub mod cox;
pub mod data;
pub mod design;
pub mod error;
pub mod harness;
pub mod io;
mod linalg;
pub mod path;
pub mod rng;
pub mod simulate;
mod sweep;

pub use additive::{fit_additive, AdditiveBaseline, AdditiveFitResult};
pub use cox::{fit_cox, CoxFitResult, FitOptions, StepFunction};
pub use data::{validate_cohort, Cohort, Subject, ValidationReport, DEFAULT_PI_FLOOR};
pub use design::{apply_design, build_weights, sample_subcohort, DesignConfig, SamplingPlan, WeightScheme};
pub use error::{Error, Result};
pub use harness::{compare_schemes, run_study, StudyConfig, StudyReport};
pub use path::CovariatePath;
pub use simulate::{simulate_cohort, CensoringSpec, CovariateGenerator, Family, ModelSpec};
pub use linalg::matrix_rows;
